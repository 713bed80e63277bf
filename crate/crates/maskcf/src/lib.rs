//! Correlation-filter (CF) tracking toolkit built around mask-weighted
//! residuals instead of cosine-window pre-multiplication.
//!
//! Classic CF trackers taper the base image with a cosine window before
//! training, which suppresses the wrap-around seam of cyclically shifted
//! negatives but distorts every sample. This crate instead keeps samples
//! raw and reweights the per-pixel training residual with a binary or
//! Gaussian mask that zeroes exactly the shift positions whose samples
//! cross the boundary. Both the single-base-image model (BACF-style hard
//! crop, solved by ADMM with closed-form subproblems) and the multi-base
//! model (sample set + channel projection, solved by alternating
//! closed-form/conjugate-gradient steps) are provided, together with a
//! dense brute-force oracle that certifies every frequency-domain solve
//! on small instances.
//!
//! # Module map
//! - [`types`]: grids, feature maps, labels, bounding boxes, solver config.
//! - [`frequency`]: 2-D DFT engine and circulant-convolution algebra.
//! - [`masking`]: cosine windows plus the binary and Gaussian residual masks.
//! - [`solver_single`]: ridge CF and the masked single-base ADMM solver.
//! - [`solver_multi`]: masked multi-base solver with sample-set management.
//! - [`oracle`]: dense spatial-domain reference solvers and objective evaluators.
//! - [`fixtures`]: committed deterministic fixture instances for verification.
//! - [`features`]: patch extraction, grayscale and 31-channel HOG features.
//! - [`tracker`]: the online tracking loop and the four ablation variants.
//! - [`bench`]: OTB-layout ingestion, metrics, ablation runner, reports.
//!
//! # Feature flags
//! - `parallel` (default): rayon-backed data-parallel inner loops. Without
//!   it every entry point runs sequentially; results are bit-identical
//!   either way because parallel loops only write disjoint slots.

pub mod bench;
pub mod error;
pub mod features;
pub mod fixtures;
pub mod frequency;
pub mod masking;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod solver_multi;
pub mod solver_single;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use parallel::ExecMode;
pub use types::{BoundingBox, ComplexGrid, FeatureMap, Grid2, Label, RealGrid, SolverConfig};
