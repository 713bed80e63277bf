//! Benchmark harness: OTB-layout ingestion, tracking metrics, the
//! four-variant ablation runner, and report emission.
//!
//! Overlap precision and success AUC come from a one-pass evaluation (run
//! once from the first-frame ground truth, no resets). Failure counts come
//! from a separate pass with a simplified reset protocol: a frame with
//! zero overlap counts as one failure and the tracker restarts from the
//! ground-truth box five frames later. The two protocols are reported side
//! by side and failures are labeled "simplified" in all outputs.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::Raster;
use crate::parallel::{map_collect, ExecMode};
use crate::tracker::{SolverMode, Tracker, TrackerConfig, Variant};
use crate::types::BoundingBox;

pub mod dataset;
pub mod report;
pub mod synth;

/// Frames a reset waits after a failure before re-initializing.
pub const REINIT_GAP: usize = 5;

/// An annotated video sequence.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub groundtruth: Vec<BoundingBox>,
    pub attributes: Vec<String>,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Validation(format!(
                "sequence '{}' needs at least 2 frames, found {}",
                self.name,
                self.frames.len()
            )));
        }
        if self.groundtruth.len() != self.frames.len() {
            return Err(Error::Validation(format!(
                "sequence '{}' has {} ground-truth boxes for {} frames",
                self.name,
                self.groundtruth.len(),
                self.frames.len()
            )));
        }
        Ok(())
    }

    pub fn load_frame(&self, i: usize) -> Result<Raster> {
        dataset::load_image(&self.frames[i])
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0) = a.top_left();
    let (bx0, by0) = b.top_left();
    let ix = (ax0 + a.w).min(bx0 + b.w) - ax0.max(bx0);
    let iy = (ay0 + a.h).min(by0 + b.h) - ay0.max(by0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Fraction of frames whose overlap strictly exceeds the threshold.
pub fn overlap_precision(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64
}

/// Mean success rate over the 101 overlap thresholds {0, 0.01, ..., 1}.
/// (The t = 1.0 bin is always zero under the strict inequality, so a
/// perfect run scores 100/101.)
pub fn success_auc(ious: &[f64]) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..=100 {
        acc += overlap_precision(ious, i as f64 / 100.0);
    }
    acc / 101.0
}

/// Simplified failure count over an overlap trace: a frame at or below the
/// threshold is one failure, after which scanning resumes `REINIT_GAP`
/// frames later (the reset protocol's grace window).
pub fn count_failures(ious: &[f64], threshold: f64) -> usize {
    let mut failures = 0;
    let mut i = 0;
    while i < ious.len() {
        if ious[i] <= threshold {
            failures += 1;
            i += REINIT_GAP;
        } else {
            i += 1;
        }
    }
    failures
}

/// Outcome of one (sequence, variant) run.
#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub sequence: String,
    pub variant: String,
    pub op50: f64,
    pub auc: f64,
    /// Simplified failure count from the reset pass.
    pub failures: usize,
    pub fps: f64,
    pub per_frame_iou: Vec<f64>,
    #[serde(skip)]
    pub boxes: Vec<BoundingBox>,
}

/// Tracks a sequence once from the first-frame ground truth (one-pass
/// evaluation). Returns per-frame boxes, overlaps, and the frame rate.
pub fn track_ope(seq: &Sequence, cfg: &TrackerConfig) -> Result<(Vec<BoundingBox>, Vec<f64>, f64)> {
    seq.validate()?;
    let start = Instant::now();
    let first = seq.load_frame(0)?;
    let mut tracker = Tracker::init(&first, seq.groundtruth[0], cfg.clone())?;
    let mut boxes = vec![seq.groundtruth[0]];
    let mut ious = vec![1.0];
    for i in 1..seq.frames.len() {
        let frame = seq.load_frame(i)?;
        let bbox = tracker.step(&frame)?;
        ious.push(iou(&bbox, &seq.groundtruth[i]));
        boxes.push(bbox);
    }
    let fps = seq.frames.len() as f64 / start.elapsed().as_secs_f64().max(1e-9);
    Ok((boxes, ious, fps))
}

/// Tracks a sequence under the simplified reset protocol and returns the
/// failure count (with the overlap trace it was derived from).
pub fn track_with_resets(seq: &Sequence, cfg: &TrackerConfig) -> Result<(usize, Vec<f64>)> {
    seq.validate()?;
    let n = seq.frames.len();
    let mut ious = vec![0.0f64; n];
    ious[0] = 1.0;
    let first = seq.load_frame(0)?;
    let mut tracker = Some(Tracker::init(&first, seq.groundtruth[0], cfg.clone())?);
    let mut failures = 0usize;
    let mut i = 1;
    while i < n {
        let frame = seq.load_frame(i)?;
        match tracker.as_mut() {
            Some(t) => {
                let overlap = match t.step(&frame) {
                    Ok(bbox) => iou(&bbox, &seq.groundtruth[i]),
                    Err(Error::TrackingLost(_)) => 0.0,
                    Err(e) => return Err(e),
                };
                ious[i] = overlap;
                if overlap <= 0.0 {
                    failures += 1;
                    // Skip the grace window, then restart from ground truth.
                    let reinit_at = i + REINIT_GAP;
                    if reinit_at < n {
                        let rf = seq.load_frame(reinit_at)?;
                        tracker = Some(Tracker::init(&rf, seq.groundtruth[reinit_at], cfg.clone())?);
                        ious[reinit_at] = 1.0;
                        i = reinit_at + 1;
                        continue;
                    } else {
                        tracker = None;
                        i = n;
                        continue;
                    }
                }
            }
            None => break,
        }
        i += 1;
    }
    Ok((failures, ious))
}

/// Runs one (sequence, variant) cell: OPE metrics plus reset-pass failures.
pub fn run_cell(seq: &Sequence, base: &TrackerConfig, variant: Variant) -> Result<RunResult> {
    let cfg = TrackerConfig {
        variant,
        ..base.clone()
    };
    let (boxes, ious, fps) = track_ope(seq, &cfg)?;
    let (failures, _) = track_with_resets(seq, &cfg)?;
    Ok(RunResult {
        sequence: seq.name.clone(),
        variant: variant.name().into(),
        op50: overlap_precision(&ious, 0.5),
        auc: success_auc(&ious),
        failures,
        fps,
        per_frame_iou: ious,
        boxes,
    })
}

/// One row of the ablation table.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean_op50: f64,
    pub mean_auc: f64,
    /// Total simplified failures across sequences.
    pub failures: usize,
    pub fps: f64,
}

/// The four-variant ablation outcome.
#[derive(Clone, Debug)]
pub struct AblationReport {
    /// Rows in the fixed order Baseline, RC, RCB, RCG.
    pub rows: Vec<AblationRow>,
    /// One record per (sequence, variant).
    pub records: Vec<RunResult>,
    /// Sequences that failed to evaluate, with the error text.
    pub errors: Vec<(String, String)>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.variant == variant.name())
            .expect("all four rows present")
    }
}

/// Runs Baseline/RC/RCB/RCG over every sequence with identical
/// configuration apart from the variant switch. Per-sequence failures are
/// recorded and do not abort the run.
pub fn run_ablation(
    sequences: &[Sequence],
    mode: SolverMode,
    base: &TrackerConfig,
    exec: ExecMode,
) -> Result<AblationReport> {
    if sequences.is_empty() {
        return Err(Error::invalid("ablation needs at least one sequence"));
    }
    let base = TrackerConfig {
        mode,
        ..base.clone()
    };
    let mut cells = Vec::new();
    for variant in Variant::ALL {
        for seq in sequences {
            cells.push((variant, seq.clone()));
        }
    }
    let base_ref = &base;
    let outcomes = map_collect(cells, exec, move |(variant, seq)| {
        let name = seq.name.clone();
        (
            variant,
            name,
            run_cell(&seq, &TrackerConfig { exec: ExecMode::Sequential, ..base_ref.clone() }, variant),
        )
    });

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (_, name, outcome) in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => errors.push((name, e.to_string())),
        }
    }
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let per: Vec<&RunResult> = records
            .iter()
            .filter(|r| r.variant == variant.name())
            .collect();
        let count = per.len().max(1) as f64;
        rows.push(AblationRow {
            variant: variant.name().into(),
            mean_op50: per.iter().map(|r| r.op50).sum::<f64>() / count,
            mean_auc: per.iter().map(|r| r.auc).sum::<f64>() / count,
            failures: per.iter().map(|r| r.failures).sum(),
            fps: per.iter().map(|r| r.fps).sum::<f64>() / count,
        });
    }
    Ok(AblationReport {
        rows,
        records,
        errors,
    })
}
