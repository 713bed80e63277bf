//! Online tracking loop: detect with the current filter, move the box,
//! rescale, retrain, interpolate the model.
//!
//! Four ablation variants share the loop and differ only in how training
//! samples are weighted:
//! - `Baseline`: cosine window multiplied into every sample, no mask;
//! - `Rc`: window removed, no mask;
//! - `Rcb`: window removed, binary residual mask;
//! - `Rcg`: window removed, Gaussian residual mask.

use crate::error::{Error, Result};
use crate::features::{crop_square, extract_features, FeatureConfig, Raster};
use crate::frequency::response_channels;
use crate::masking::{binary_mask, cosine_window, gaussian_mask, ones_mask, SpatialMask};
use crate::parallel::ExecMode;
use crate::solver_multi::{
    init_projection, project_sample, train_masked_multi, InterpolationKernel, ProjectionMatrix,
    SampleSet, SpatialRegWeights, DEFAULT_REG_PROFILE,
};
use crate::solver_single::{train_masked_bacf_with_mode, CropRegion, FilterBank, TrainRequest};
use crate::types::{
    make_gaussian_label, offset_of_index, BoundingBox, FeatureMap, Grid2, Label, SolverConfig,
};

/// Ablation variant selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Rc,
    Rcb,
    Rcg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Rc, Variant::Rcb, Variant::Rcg];

    /// Whether the cosine window is multiplied into samples.
    pub fn uses_window(&self) -> bool {
        matches!(self, Variant::Baseline)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::Rc => "RC",
            Variant::Rcb => "RCB",
            Variant::Rcg => "RCG",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Variant::Baseline),
            "rc" => Ok(Variant::Rc),
            "rcb" => Ok(Variant::Rcb),
            "rcg" => Ok(Variant::Rcg),
            other => Err(Error::invalid(format!(
                "unknown variant '{other}' (expected baseline|rc|rcb|rcg)"
            ))),
        }
    }
}

/// Single- or multi-base-image training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMode {
    Single,
    Multi,
}

impl SolverMode {
    pub fn parse(s: &str) -> Result<SolverMode> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(SolverMode::Single),
            "multi" => Ok(SolverMode::Multi),
            other => Err(Error::invalid(format!(
                "unknown solver mode '{other}' (expected single|multi)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverMode::Single => "single",
            SolverMode::Multi => "multi",
        }
    }
}

/// Full tracker configuration.
#[derive(Clone, Debug)]
pub struct TrackerConfig {
    pub variant: Variant,
    pub mode: SolverMode,
    pub solver: SolverConfig,
    pub features: FeatureConfig,
    /// Number of scale hypotheses per frame (odd).
    pub scales: usize,
    /// Multiplicative scale step between hypotheses.
    pub scale_step: f64,
    /// Response multiplier applied to non-current scales.
    pub scale_penalty: f64,
    /// Model interpolation rate (single-base).
    pub eta: f64,
    /// Sample-set learning rate (multi-base).
    pub eta_set: f64,
    /// Sample-set capacity K (multi-base).
    pub capacity: usize,
    /// Projected channel count D; None or >= L keeps the identity mixing.
    pub proj_dims: Option<usize>,
    /// Label bandwidth factor: sigma = factor * sqrt(h w) in cells.
    pub sigma_factor: f64,
    /// Spatial regularization profile (base, slope) for multi-base mode.
    pub reg_profile: (f64, f64),
    pub exec: ExecMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            variant: Variant::Rcg,
            mode: SolverMode::Single,
            solver: SolverConfig::default(),
            features: FeatureConfig::default(),
            scales: 5,
            scale_step: 1.02,
            scale_penalty: 0.995,
            eta: 0.0125,
            eta_set: 0.02,
            capacity: 30,
            proj_dims: Some(10),
            sigma_factor: 1.0 / 16.0,
            reg_profile: DEFAULT_REG_PROFILE,
            exec: ExecMode::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.features.validate()?;
        if self.scales == 0 || self.scales % 2 == 0 {
            return Err(Error::invalid("scale count must be odd and positive"));
        }
        if !(self.scale_step > 1.0) {
            return Err(Error::invalid("scale step must exceed 1"));
        }
        if !(0.0 < self.scale_penalty && self.scale_penalty <= 1.0) {
            return Err(Error::invalid("scale penalty must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid("eta must be in [0, 1]"));
        }
        if !(0.0 < self.eta_set && self.eta_set < 1.0) {
            return Err(Error::invalid("eta_set must be in (0, 1)"));
        }
        if self.capacity == 0 {
            return Err(Error::invalid("capacity must be >= 1"));
        }
        if !(self.sigma_factor > 0.0) {
            return Err(Error::invalid("sigma factor must be positive"));
        }
        Ok(())
    }
}

/// Learned model per solver mode.
#[derive(Clone, Debug)]
enum Model {
    Single(FilterBank),
    Multi {
        bank: FilterBank,
        set: SampleSet,
        proj: ProjectionMatrix,
    },
}

/// Per-sequence tracking state carried frame to frame.
#[derive(Clone, Debug)]
pub struct TrackState {
    pub bbox: BoundingBox,
    /// Size multiplier relative to the first frame.
    pub scale: f64,
    pub frame_index: usize,
}

/// Frozen frame-1 geometry: all solver dimensions stay constant and scale
/// changes are absorbed by resampling patches.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    /// Initial target size in pixels.
    base_w: f64,
    base_h: f64,
    /// Search-region side in pixels at scale 1.
    search_side: f64,
    /// Model patch resolution (multiple of the cell size).
    model_px: usize,
    /// Feature grid.
    feat_grid: Grid2,
    /// Target extent on the feature grid, in cells.
    target_cells: (f64, f64),
}

/// One tracker instance bound to one sequence.
#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    geom: Geometry,
    label: Label,
    window: Option<SpatialMask>,
    model: Model,
    pub state: TrackState,
    /// Diagnostic: number of times the cosine window was multiplied into a
    /// sample. Must remain zero for the RC/RCB/RCG variants.
    pub window_apply_count: usize,
}

impl Tracker {
    /// Trains the initial model on the first frame.
    pub fn init(frame: &Raster, bbox: BoundingBox, cfg: TrackerConfig) -> Result<Tracker> {
        cfg.validate()?;
        let cell = cfg.features.cell;
        let search_side = cfg.features.search_scale * (bbox.w * bbox.h).sqrt();
        let model_px = ((search_side / cell as f64).round() as usize).max(3) * cell;
        let feat_grid = Grid2::new(model_px / cell, model_px / cell)?;
        let stretch = model_px as f64 / search_side;
        let target_cells = (
            (bbox.h * stretch / cell as f64).min(feat_grid.rows as f64),
            (bbox.w * stretch / cell as f64).min(feat_grid.cols as f64),
        );
        let sigma = cfg.sigma_factor * (target_cells.0 * target_cells.1).sqrt();
        let label = make_gaussian_label(feat_grid, sigma.max(0.25))?;
        let window = if cfg.variant.uses_window() {
            Some(cosine_window(feat_grid)?)
        } else {
            None
        };
        let geom = Geometry {
            base_w: bbox.w,
            base_h: bbox.h,
            search_side,
            model_px,
            feat_grid,
            target_cells,
        };
        let mut tracker = Tracker {
            cfg,
            geom,
            label,
            window,
            // Placeholder; replaced right below by the first training pass.
            model: Model::Single(FilterBank::zeros(
                feat_grid,
                CropRegion::full(feat_grid),
                1,
            )?),
            state: TrackState {
                bbox,
                scale: 1.0,
                frame_index: 0,
            },
            window_apply_count: 0,
        };
        let sample = tracker.extract_sample(frame, &bbox, 1.0, true)?;
        tracker.model = tracker.train_initial(sample)?;
        Ok(tracker)
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Feature grid the model lives on.
    pub fn feature_grid(&self) -> Grid2 {
        self.geom.feat_grid
    }

    /// Target extent on the feature grid (h, w) in cells.
    pub fn target_cells(&self) -> (f64, f64) {
        self.geom.target_cells
    }

    fn mask_for_frame(&self) -> Result<SpatialMask> {
        let grid = self.geom.feat_grid;
        let (h, w) = self.geom.target_cells;
        match self.cfg.variant {
            Variant::Baseline | Variant::Rc => Ok(ones_mask(grid)),
            Variant::Rcb => binary_mask(grid, h, w),
            Variant::Rcg => gaussian_mask(grid, h, w, self.cfg.solver.delta),
        }
    }

    fn crop_region(&self) -> CropRegion {
        let (h, w) = self.geom.target_cells;
        CropRegion::target_support(self.geom.feat_grid, h, w)
    }

    /// Extracts the model-resolution feature sample around a box.
    /// `training` controls the window-application diagnostic.
    fn extract_sample(
        &mut self,
        frame: &Raster,
        bbox: &BoundingBox,
        scale_factor: f64,
        _training: bool,
    ) -> Result<FeatureMap> {
        let side = (self.geom.search_side * self.state.scale * scale_factor)
            .round()
            .max(self.cfg.features.cell as f64) as usize;
        let patch = crop_square(frame, bbox.cx, bbox.cy, side)?;
        let resized = patch.pixels.resize_bilinear(self.geom.model_px, self.geom.model_px)?;
        let patch = crate::features::ImagePatch {
            pixels: resized,
            source_bbox: *bbox,
        };
        let mut sample = extract_features(&patch, &self.cfg.features)?;
        if let Some(wnd) = &self.window {
            sample = sample.hadamard_all(wnd.data())?;
            self.window_apply_count += 1;
        }
        Ok(sample)
    }

    fn train_initial(&mut self, sample: FeatureMap) -> Result<Model> {
        match self.cfg.mode {
            SolverMode::Single => Ok(Model::Single(self.train_single(sample)?)),
            SolverMode::Multi => {
                let channels = sample.channels();
                let proj = match self.cfg.proj_dims {
                    Some(d) if d < channels => init_projection(&sample, d)?,
                    _ => ProjectionMatrix::identity(channels),
                };
                let mut set = SampleSet::new(self.cfg.capacity)?;
                set.update(sample, self.label.clone(), self.cfg.eta_set)?;
                let bank = self.train_multi(&set, &proj, None)?;
                Ok(Model::Multi { bank, set, proj })
            }
        }
    }

    fn train_single(&self, sample: FeatureMap) -> Result<FilterBank> {
        let req = TrainRequest {
            x: sample,
            y: self.label.clone(),
            mask: self.mask_for_frame()?,
            crop: self.crop_region(),
            config: self.cfg.solver,
        };
        train_masked_bacf_with_mode(&req, self.cfg.exec)
    }

    fn train_multi(
        &self,
        set: &SampleSet,
        proj: &ProjectionMatrix,
        warm: Option<&FilterBank>,
    ) -> Result<FilterBank> {
        let w = SpatialRegWeights::radial(
            self.geom.feat_grid,
            self.geom.target_cells.0,
            self.geom.target_cells.1,
            self.cfg.reg_profile.0,
            self.cfg.reg_profile.1,
        )?;
        let out = train_masked_multi(
            set,
            &self.mask_for_frame()?,
            proj,
            &w,
            InterpolationKernel::default(),
            &self.cfg.solver,
            warm,
            self.cfg.exec,
        )?;
        Ok(out.bank)
    }

    /// Channels the detector correlates with. The model filter is the
    /// crop-constrained P^T g; the full-support split variable f only
    /// approaches it as the ADMM sweeps increase, and its out-of-crop
    /// residue would let the detector anchor on static background.
    fn detection_channels(&self) -> Result<Vec<crate::types::RealGrid>> {
        match &self.model {
            Model::Single(bank) => bank.embedded_cropped(),
            Model::Multi { bank, .. } => Ok(bank.spatial().to_vec()),
        }
    }

    fn detection_sample(&mut self, frame: &Raster, scale_factor: f64) -> Result<FeatureMap> {
        let bbox = self.state.bbox;
        let sample = self.extract_sample(frame, &bbox, scale_factor, false)?;
        match &self.model {
            Model::Single(_) => Ok(sample),
            Model::Multi { proj, .. } => project_sample(&sample, proj),
        }
    }

    /// Runs detection + model update on the next frame; returns the new box.
    pub fn step(&mut self, frame: &Raster) -> Result<BoundingBox> {
        let grid = self.geom.feat_grid;
        let half = (self.cfg.scales / 2) as i64;
        // Current scale first, then outward: ties keep the smallest change.
        let mut order: Vec<i64> = vec![0];
        for k in 1..=half {
            order.push(-k);
            order.push(k);
        }

        struct Best {
            score: f64,
            k: i64,
            dr: i64,
            dc: i64,
            side: f64,
        }
        let filter = self.detection_channels()?;
        let mut best: Option<Best> = None;
        for &k in &order {
            let factor = self.cfg.scale_step.powi(k as i32);
            let sample = self.detection_sample(frame, factor)?;
            let resp = response_channels(&filter, sample.channel_grids())?;
            let penalty = if k == 0 { 1.0 } else { self.cfg.scale_penalty };
            // Peak with smallest-displacement tie-breaking.
            let mut peak: Option<(f64, i64, i64)> = None;
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let v = resp.at(r, c);
                    let dr = offset_of_index(grid.rows, r);
                    let dc = offset_of_index(grid.cols, c);
                    let better = match &peak {
                        None => true,
                        Some((pv, pr, pc)) => {
                            v > *pv
                                || (v == *pv
                                    && (dr * dr + dc * dc, dr, dc) < (pr * pr + pc * pc, *pr, *pc))
                        }
                    };
                    if better {
                        peak = Some((v, dr, dc));
                    }
                }
            }
            let (value, dr, dc) = peak.expect("non-empty grid");
            if std::env::var_os("MASKCF_TRACE").is_some() {
                eprintln!(
                    "[trace] frame {} scale {k:+}: peak {value:.5} at ({dr:+},{dc:+})",
                    self.state.frame_index + 1
                );
            }
            let score = value * penalty;
            let side = self.geom.search_side * self.state.scale * factor;
            let better = match &best {
                None => true,
                Some(b) => score > b.score,
            };
            if better {
                best = Some(Best {
                    score,
                    k,
                    dr,
                    dc,
                    side,
                });
            }
        }
        let best = best.expect("at least one scale");

        // Map the cell displacement back to pixels at the winning scale.
        let px_per_cell = self.cfg.features.cell as f64 * best.side / self.geom.model_px as f64;
        let (ih, iw) = (frame.grid().rows as f64, frame.grid().cols as f64);
        let cx = (self.state.bbox.cx + best.dc as f64 * px_per_cell).clamp(0.0, iw - 1.0);
        let cy = (self.state.bbox.cy + best.dr as f64 * px_per_cell).clamp(0.0, ih - 1.0);
        let scale = (self.state.scale * self.cfg.scale_step.powi(best.k as i32))
            .clamp(0.05, 20.0);
        let bbox = BoundingBox::new(cx, cy, self.geom.base_w * scale, self.geom.base_h * scale)?;

        // Degenerate after clipping to the image?
        let (x0, y0) = bbox.top_left();
        let vis_w = (x0 + bbox.w).min(iw) - x0.max(0.0);
        let vis_h = (y0 + bbox.h).min(ih) - y0.max(0.0);
        if vis_w <= 0.0 || vis_h <= 0.0 {
            return Err(Error::TrackingLost(format!(
                "target region degenerate at frame {}",
                self.state.frame_index + 1
            )));
        }

        self.state.bbox = bbox;
        self.state.scale = scale;
        self.state.frame_index += 1;
        self.update_model(frame)?;
        Ok(self.state.bbox)
    }

    /// Retrains on the current box and folds the fresh model in.
    fn update_model(&mut self, frame: &Raster) -> Result<()> {
        let bbox = self.state.bbox;
        let sample = self.extract_sample(frame, &bbox, 1.0, true)?;
        let placeholder = Model::Single(FilterBank::zeros(
            self.geom.feat_grid,
            CropRegion::full(self.geom.feat_grid),
            1,
        )?);
        match std::mem::replace(&mut self.model, placeholder) {
            Model::Single(bank) => {
                let fresh = self.train_single(sample)?;
                self.model = Model::Single(bank.lerp(&fresh, self.cfg.eta)?);
            }
            Model::Multi {
                bank,
                mut set,
                proj,
            } => {
                set.update(sample, self.label.clone(), self.cfg.eta_set)?;
                let bank = self.train_multi(&set, &proj, Some(&bank))?;
                self.model = Model::Multi { bank, set, proj };
            }
        }
        Ok(())
    }

    /// Model update with an explicit interpolation rate (single-base).
    /// Exposed for rate-semantics tests; `step` uses the configured eta.
    pub fn update_single_with_eta(&mut self, frame: &Raster, eta: f64) -> Result<()> {
        let bbox = self.state.bbox;
        let sample = self.extract_sample(frame, &bbox, 1.0, true)?;
        let fresh = self.train_single(sample)?;
        match &mut self.model {
            Model::Single(bank) => {
                *bank = bank.lerp(&fresh, eta)?;
                Ok(())
            }
            Model::Multi { .. } => Err(Error::invalid("eta override applies to single-base mode")),
        }
    }

    /// Current filter (for diagnostics and tests).
    pub fn filter(&self) -> &FilterBank {
        match &self.model {
            Model::Single(bank) => bank,
            Model::Multi { bank, .. } => bank,
        }
    }
}
