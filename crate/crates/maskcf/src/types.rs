//! Shared domain types: grid geometry, feature maps, labels, boxes, and
//! solver configuration.
//!
//! All grids are row-major, double precision, and immutable value objects
//! once constructed. The coordinate convention throughout the crate is the
//! centered integer-offset one: cell index `i` on an axis of length `n`
//! carries offset `i - n/2`, so offsets run over `{-floor(n/2), ...,
//! ceil(n/2)-1}` and offset 0 sits at the DFT-shift center cell.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dimensions of a 2-D grid of feature cells or pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
}

impl Grid2 {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be >= 1, got {rows}x{cols}"
            )));
        }
        Ok(Grid2 { rows, cols })
    }

    /// Total cell count T = rows * cols.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::fmt::Display for Grid2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Centered integer offset of cell index `i` on an axis of length `n`.
#[inline]
pub fn offset_of_index(n: usize, i: usize) -> i64 {
    i as i64 - (n / 2) as i64
}

/// Cell index carrying centered offset `o`; inverse of [`offset_of_index`]
/// under modular wrap.
#[inline]
pub fn index_of_offset(n: usize, o: i64) -> usize {
    (o + (n / 2) as i64).rem_euclid(n as i64) as usize
}

/// Centered integer offsets for both axes: row offsets then column offsets.
pub fn centered_coords(grid: Grid2) -> (Vec<i64>, Vec<i64>) {
    let rows = (0..grid.rows).map(|i| offset_of_index(grid.rows, i)).collect();
    let cols = (0..grid.cols).map(|j| offset_of_index(grid.cols, j)).collect();
    (rows, cols)
}

/// Real-valued row-major grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    grid: Grid2,
    data: Vec<f64>,
}

impl RealGrid {
    pub fn zeros(grid: Grid2) -> Self {
        RealGrid {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid2, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::mismatch(format!(
                "grid {} needs {} values, got {}",
                grid,
                grid.len(),
                data.len()
            )));
        }
        Ok(RealGrid { grid, data })
    }

    /// Builds a grid by evaluating `f` at every (row, col) index.
    pub fn from_fn(grid: Grid2, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                data.push(f(r, c));
            }
        }
        RealGrid { grid, data }
    }

    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.grid.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.grid.cols + c] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &RealGrid) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// self + scale * other.
    pub fn add_scaled(&self, other: &RealGrid, scale: f64) -> RealGrid {
        debug_assert_eq!(self.grid, other.grid);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        RealGrid {
            grid: self.grid,
            data,
        }
    }

    pub fn scaled(&self, scale: f64) -> RealGrid {
        RealGrid {
            grid: self.grid,
            data: self.data.iter().map(|v| v * scale).collect(),
        }
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &RealGrid) -> RealGrid {
        debug_assert_eq!(self.grid, other.grid);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        RealGrid {
            grid: self.grid,
            data,
        }
    }

    /// Cyclic translation: output cell (r, c) takes the value of input cell
    /// (r - dr, c - dc) mod size, i.e. the content moves by (+dr, +dc).
    pub fn cyclic_shift(&self, dr: i64, dc: i64) -> RealGrid {
        let (h, w) = (self.grid.rows as i64, self.grid.cols as i64);
        RealGrid::from_fn(self.grid, |r, c| {
            let sr = (r as i64 - dr).rem_euclid(h) as usize;
            let sc = (c as i64 - dc).rem_euclid(w) as usize;
            self.at(sr, sc)
        })
    }
}

/// Complex-valued row-major grid (frequency-domain carrier).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    grid: Grid2,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(grid: Grid2) -> Self {
        ComplexGrid {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_vec(grid: Grid2, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::mismatch(format!(
                "grid {} needs {} values, got {}",
                grid,
                grid.len(),
                data.len()
            )));
        }
        Ok(ComplexGrid { grid, data })
    }

    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.grid.cols + c]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Multi-channel real feature sample; all channels share one grid.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    grid: Grid2,
    channels: Vec<RealGrid>,
}

impl FeatureMap {
    pub fn new(channels: Vec<RealGrid>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("feature map needs at least one channel"))?;
        let grid = first.grid();
        for (l, ch) in channels.iter().enumerate() {
            if ch.grid() != grid {
                return Err(Error::mismatch(format!(
                    "channel {} has grid {}, expected {}",
                    l,
                    ch.grid(),
                    grid
                )));
            }
            if !ch.is_finite() {
                return Err(Error::invalid(format!("channel {l} contains non-finite values")));
            }
        }
        Ok(FeatureMap { grid, channels })
    }

    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    /// Channel count L.
    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, l: usize) -> &RealGrid {
        &self.channels[l]
    }

    pub fn channel_grids(&self) -> &[RealGrid] {
        &self.channels
    }

    /// Channel-wise element product with a shared weight grid.
    pub fn hadamard_all(&self, weights: &RealGrid) -> Result<FeatureMap> {
        if weights.grid() != self.grid {
            return Err(Error::mismatch(format!(
                "weight grid {} vs feature grid {}",
                weights.grid(),
                self.grid
            )));
        }
        FeatureMap::new(self.channels.iter().map(|c| c.hadamard(weights)).collect())
    }
}

/// Gaussian-shaped regression target.
#[derive(Clone, Debug)]
pub struct Label {
    data: RealGrid,
    sigma: f64,
}

impl Label {
    /// Wraps an arbitrary finite target grid. [`make_gaussian_label`] is the
    /// normal construction path; this one exists for degenerate regression
    /// targets in verification code.
    pub fn from_grid(data: RealGrid, sigma: f64) -> Result<Label> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("label sigma must be positive"));
        }
        if !data.is_finite() {
            return Err(Error::invalid("label values must be finite"));
        }
        Ok(Label { data, sigma })
    }

    pub fn data(&self) -> &RealGrid {
        &self.data
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn grid(&self) -> Grid2 {
        self.data.grid()
    }
}

/// Gaussian label peaking (value 1) at the grid's center cell, defined on
/// centered integer offsets. `sigma` is in feature cells.
pub fn make_gaussian_label(grid: Grid2, sigma: f64) -> Result<Label> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("label sigma must be positive, got {sigma}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let data = RealGrid::from_fn(grid, |r, c| {
        let dr = offset_of_index(grid.rows, r) as f64;
        let dc = offset_of_index(grid.cols, c) as f64;
        (-(dr * dr + dc * dc) * inv).exp()
    });
    Ok(Label { data, sigma })
}

/// Default label bandwidth for a target of `h x w` feature cells.
pub fn default_label_sigma(h: f64, w: f64) -> f64 {
    (h * w).sqrt() / 16.0
}

/// Axis-aligned box in pixel coordinates, center convention.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid(format!("box sides must be positive, got {w}x{h}")));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    /// From top-left (x, y, w, h) as used by OTB ground-truth files.
    pub fn from_top_left(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BoundingBox::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    /// Top-left corner (x, y).
    pub fn top_left(&self) -> (f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Parameters of the masked ADMM / alternating solvers.
///
/// Penalty defaults follow the single-base Gaussian-mask configuration:
/// tau = mu = 2.5 with 3 sweeps, growth factor 1.05 capped at 100, and
/// mask decay delta = 1.2.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Ridge weight on the cropped filter (lambda/2 * ||g||^2).
    pub lambda: f64,
    /// Initial residual-split penalty tau.
    pub tau0: f64,
    /// Initial crop-constraint penalty mu.
    pub mu0: f64,
    /// Outer sweep count.
    pub iters: usize,
    pub tau_max: f64,
    pub mu_max: f64,
    /// Per-sweep penalty growth factor p (>= 1).
    pub growth: f64,
    /// Gaussian-mask decay parameter delta.
    pub delta: f64,
    /// Cap on inner conjugate-gradient iterations (multi-base filter step).
    pub inner_iters: usize,
    /// Optional early stop on constraint residuals; off by default to
    /// mirror the fixed iteration counts of the reference configuration.
    pub stop_tol: Option<f64>,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if !(self.tau0 > 0.0 && self.mu0 > 0.0) {
            return Err(Error::invalid("tau0 and mu0 must be positive"));
        }
        if self.iters == 0 {
            return Err(Error::invalid("iters must be >= 1"));
        }
        if self.tau0 > self.tau_max || self.mu0 > self.mu_max {
            return Err(Error::invalid("initial penalties must not exceed their caps"));
        }
        if self.growth < 1.0 {
            return Err(Error::invalid("growth must be >= 1"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        Ok(())
    }

    /// Multi-base defaults (handcrafted-feature configuration): tau = 2.2,
    /// 4 outer alternations, delta = 1.4.
    pub fn multi_base() -> Self {
        SolverConfig {
            tau0: 2.2,
            iters: 4,
            delta: 1.4,
            ..SolverConfig::default()
        }
    }

    /// High-accuracy profile for oracle verification: fixed moderate
    /// penalties and the loop run to near-convergence. The tracking
    /// defaults trade accuracy for speed; this profile does the opposite.
    pub fn verification(lambda: f64) -> Self {
        SolverConfig {
            lambda,
            tau0: 0.3,
            mu0: 3.0,
            tau_max: 0.3,
            mu_max: 3.0,
            growth: 1.0,
            iters: 2000,
            ..SolverConfig::default()
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.01,
            tau0: 2.5,
            mu0: 2.5,
            iters: 3,
            tau_max: 100.0,
            mu_max: 100.0,
            growth: 1.05,
            delta: 1.2,
            inner_iters: 50,
            stop_tol: None,
        }
    }
}
