//! Single-base-image CF training.
//!
//! Two trainers live here: the classic per-frequency ridge CF (optionally
//! with cosine-window pre-multiplication — the contaminating step the mask
//! formulation removes), and the masked BACF-style solver
//!
//! ```text
//! min_{f,g} 1/2 ||M (sum_l x_l * f_l - y)||^2 + lambda/2 ||g||^2
//!           s.t. f_l = embed(g_l)
//! ```
//!
//! solved by ADMM with a second split z = sum_l x_l * f_l - y. Every
//! subproblem is closed form: g is an element-wise shrink on the crop, f
//! decouples into T rank-one-plus-identity systems solved with the
//! Sherman-Morrison identity, and z is an element-wise weighted average.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::frequency::{dft2, idft2, response_channels, response_spectrum, SpectrumBank};
use crate::masking::SpatialMask;
use crate::parallel::{for_each_chunk_mut, ExecMode};
use crate::types::{ComplexGrid, FeatureMap, Grid2, Label, RealGrid, SolverConfig};

/// Index block realizing the crop operator P: the filter support is the
/// `rows x cols` block anchored at (row0, col0), wrapping cyclically past
/// the grid edges.
///
/// Under circular convolution `(f * x)[u] = sum_v f[v] x[u - v]`, a filter
/// acting as a spatially local template must have its support around the
/// DFT origin (index 0, wrapping through the corners); the label and mask
/// grids, whose peak sits at the center cell, then read the sample
/// neighborhood around each response position. [`CropRegion::target_support`]
/// builds exactly that origin-anchored block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRegion {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl CropRegion {
    /// Support block of approximately `h x w` cells for a target-sized
    /// template: offsets {-floor(d/2), ..., ceil(d/2)-1} around the DFT
    /// origin on each axis (wrapping through the grid corners).
    pub fn target_support(grid: Grid2, h: f64, w: f64) -> CropRegion {
        let rows = (h.round() as usize).clamp(1, grid.rows);
        let cols = (w.round() as usize).clamp(1, grid.cols);
        CropRegion {
            row0: (grid.rows - rows / 2) % grid.rows,
            col0: (grid.cols - cols / 2) % grid.cols,
            rows,
            cols,
        }
    }

    /// Full-grid support (P = identity).
    pub fn full(grid: Grid2) -> CropRegion {
        CropRegion {
            row0: 0,
            col0: 0,
            rows: grid.rows,
            cols: grid.cols,
        }
    }

    pub fn validate(&self, grid: Grid2) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("crop must be non-empty"));
        }
        if self.rows > grid.rows || self.cols > grid.cols {
            return Err(Error::invalid(format!(
                "crop {}x{} exceeds grid {}",
                self.rows, self.cols, grid
            )));
        }
        if self.row0 >= grid.rows || self.col0 >= grid.cols {
            return Err(Error::invalid("crop anchor outside the grid"));
        }
        Ok(())
    }

    /// Number of retained coefficients D per channel.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn grid(&self) -> Grid2 {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Absolute (row, col) grid positions of the crop cells on a given
    /// grid, row-major within the block, wrapping cyclically.
    pub fn cells_on(&self, grid: Grid2) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (r0, c0, cols) = (self.row0, self.col0, self.cols);
        let (gr, gc) = (grid.rows, grid.cols);
        (0..self.len()).map(move |i| ((r0 + i / cols) % gr, (c0 + i % cols) % gc))
    }

    /// Zero-pads a crop-sized grid back to the full grid (P^T).
    pub fn embed(&self, g: &RealGrid, grid: Grid2) -> Result<RealGrid> {
        self.validate(grid)?;
        if g.grid().rows != self.rows || g.grid().cols != self.cols {
            return Err(Error::mismatch(format!(
                "crop data {} vs crop {}x{}",
                g.grid(),
                self.rows,
                self.cols
            )));
        }
        let mut out = RealGrid::zeros(grid);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(
                    (self.row0 + r) % grid.rows,
                    (self.col0 + c) % grid.cols,
                    g.at(r, c),
                );
            }
        }
        Ok(out)
    }

    /// Restricts a full grid to the crop support (P).
    pub fn extract(&self, f: &RealGrid) -> Result<RealGrid> {
        let grid = f.grid();
        self.validate(grid)?;
        let mut out = RealGrid::zeros(self.grid());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(
                    r,
                    c,
                    f.at((self.row0 + r) % grid.rows, (self.col0 + c) % grid.cols),
                );
            }
        }
        Ok(out)
    }
}

/// Learned filter: full-support channels f, cropped channels g, and the
/// crop geometry tying them together. After convergence f_l = embed(g_l)
/// up to the solver tolerance.
#[derive(Clone, Debug)]
pub struct FilterBank {
    grid: Grid2,
    crop: CropRegion,
    spatial: Vec<RealGrid>,
    cropped: Vec<RealGrid>,
}

impl FilterBank {
    pub fn new(
        grid: Grid2,
        crop: CropRegion,
        spatial: Vec<RealGrid>,
        cropped: Vec<RealGrid>,
    ) -> Result<Self> {
        crop.validate(grid)?;
        if spatial.len() != cropped.len() || spatial.is_empty() {
            return Err(Error::mismatch("filter bank needs matching channel lists"));
        }
        for f in &spatial {
            if f.grid() != grid {
                return Err(Error::mismatch("spatial channels must match the grid"));
            }
        }
        for g in &cropped {
            if g.grid() != crop.grid() {
                return Err(Error::mismatch("cropped channels must match the crop"));
            }
        }
        Ok(FilterBank {
            grid,
            crop,
            spatial,
            cropped,
        })
    }

    pub fn zeros(grid: Grid2, crop: CropRegion, channels: usize) -> Result<Self> {
        FilterBank::new(
            grid,
            crop,
            (0..channels).map(|_| RealGrid::zeros(grid)).collect(),
            (0..channels).map(|_| RealGrid::zeros(crop.grid())).collect(),
        )
    }

    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    pub fn crop(&self) -> CropRegion {
        self.crop
    }

    pub fn channels(&self) -> usize {
        self.spatial.len()
    }

    /// Full-support filter channels f.
    pub fn spatial(&self) -> &[RealGrid] {
        &self.spatial
    }

    /// Cropped filter channels g.
    pub fn cropped(&self) -> &[RealGrid] {
        &self.cropped
    }

    /// embed(g): the cropped channels zero-padded to the full grid.
    pub fn embedded_cropped(&self) -> Result<Vec<RealGrid>> {
        self.cropped
            .iter()
            .map(|g| self.crop.embed(g, self.grid))
            .collect()
    }

    /// Linear interpolation (1 - eta) * self + eta * newer.
    pub fn lerp(&self, newer: &FilterBank, eta: f64) -> Result<FilterBank> {
        if self.grid != newer.grid || self.crop != newer.crop || self.channels() != newer.channels()
        {
            return Err(Error::mismatch("filter banks must share geometry"));
        }
        let spatial = self
            .spatial
            .iter()
            .zip(&newer.spatial)
            .map(|(a, b)| a.scaled(1.0 - eta).add_scaled(b, eta))
            .collect();
        let cropped = self
            .cropped
            .iter()
            .zip(&newer.cropped)
            .map(|(a, b)| a.scaled(1.0 - eta).add_scaled(b, eta))
            .collect();
        FilterBank::new(self.grid, self.crop, spatial, cropped)
    }

    pub fn is_finite(&self) -> bool {
        self.spatial.iter().all(RealGrid::is_finite) && self.cropped.iter().all(RealGrid::is_finite)
    }
}

/// ADMM working state: multipliers, auxiliary residual split, penalties.
#[derive(Clone, Debug)]
pub struct AdmmState {
    /// Per-channel multiplier for the crop constraint f_l = embed(g_l).
    pub zeta: Vec<RealGrid>,
    /// Multiplier for the residual split z = sum_l x_l * f_l - y.
    pub gamma: RealGrid,
    /// Auxiliary residual variable z.
    pub z: RealGrid,
    pub mu: f64,
    pub tau: f64,
    pub iteration: usize,
}

impl AdmmState {
    pub fn fresh(grid: Grid2, channels: usize, config: &SolverConfig) -> AdmmState {
        AdmmState {
            zeta: (0..channels).map(|_| RealGrid::zeros(grid)).collect(),
            gamma: RealGrid::zeros(grid),
            z: RealGrid::zeros(grid),
            mu: config.mu0,
            tau: config.tau0,
            iteration: 0,
        }
    }

    fn is_finite(&self) -> bool {
        self.zeta.iter().all(RealGrid::is_finite) && self.gamma.is_finite() && self.z.is_finite()
    }
}

/// Inputs of one masked single-base training problem.
#[derive(Clone, Debug)]
pub struct TrainRequest {
    pub x: FeatureMap,
    pub y: Label,
    pub mask: SpatialMask,
    pub crop: CropRegion,
    pub config: SolverConfig,
}

impl TrainRequest {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let grid = self.x.grid();
        if self.y.grid() != grid || self.mask.grid() != grid {
            return Err(Error::mismatch(format!(
                "sample {}, label {}, mask {} must share one grid",
                grid,
                self.y.grid(),
                self.mask.grid()
            )));
        }
        self.crop.validate(grid)
    }
}

/// Per-sweep constraint diagnostics of the ADMM loop.
#[derive(Clone, Debug, Default)]
pub struct AdmmTrace {
    /// max_l ||f_l - embed(g_l)||_inf per sweep.
    pub constraint_inf: Vec<f64>,
    /// ||sum_l x_l * f_l - y - z||_inf per sweep.
    pub split_inf: Vec<f64>,
}

/// Ridge CF closed form: fhat_l(t) = conj(xhat_l(t)) yhat(t) /
/// (sum_l |xhat_l(t)|^2 + lambda). With `window` present the sample is
/// pre-multiplied channel-wise before training.
pub fn train_ridge_cf(
    x: &FeatureMap,
    y: &Label,
    lambda: f64,
    window: Option<&SpatialMask>,
) -> Result<FilterBank> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let grid = x.grid();
    if y.grid() != grid {
        return Err(Error::mismatch("sample and label grids differ"));
    }
    let windowed;
    let sample = match window {
        Some(wnd) => {
            windowed = x.hadamard_all(wnd.data())?;
            &windowed
        }
        None => x,
    };
    let xhat = SpectrumBank::from_feature_map(sample);
    let yhat = dft2(y.data());
    let t = grid.len();
    let l_count = sample.channels();
    let mut energy = vec![0.0f64; t];
    for l in 0..l_count {
        for (e, v) in energy.iter_mut().zip(xhat.channel(l).values()) {
            *e += v.norm_sqr();
        }
    }
    if lambda == 0.0 {
        if let Some(bin) = energy.iter().position(|&e| e <= f64::EPSILON) {
            return Err(Error::SingularSystem(format!(
                "ridge denominator vanishes at frequency bin {bin} with lambda = 0"
            )));
        }
    }
    let mut spatial = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let fh: Vec<Complex64> = xhat
            .channel(l)
            .values()
            .iter()
            .zip(yhat.values())
            .zip(&energy)
            .map(|((xv, yv), e)| xv.conj() * yv / (e + lambda))
            .collect();
        spatial.push(idft2(&ComplexGrid::from_vec(grid, fh)?)?);
    }
    let crop = CropRegion::full(grid);
    let cropped = spatial.clone();
    FilterBank::new(grid, crop, spatial, cropped)
}

/// Closed-form g update: with P a selection operator the system
/// (lambda I + mu P P^T) g = P zeta + mu P f is diagonal, so
/// g_l[d] = (zeta_l[d] + mu f_l[d]) / (lambda + mu) over the crop support.
pub fn solve_g(
    f: &[RealGrid],
    zeta: &[RealGrid],
    mu: f64,
    lambda: f64,
    crop: &CropRegion,
) -> Result<Vec<RealGrid>> {
    if lambda + mu <= 0.0 {
        return Err(Error::SingularSystem(format!(
            "g-subproblem needs lambda + mu > 0, got {lambda} + {mu}"
        )));
    }
    if f.len() != zeta.len() {
        return Err(Error::mismatch("f and zeta channel counts differ"));
    }
    let inv = 1.0 / (lambda + mu);
    f.iter()
        .zip(zeta)
        .map(|(fl, zl)| {
            let fc = crop.extract(fl)?;
            let zc = crop.extract(zl)?;
            Ok(zc.add_scaled(&fc, mu).scaled(inv))
        })
        .collect()
}

/// Solves one frequency bin of the f subproblem:
/// (mu I + tau conj(xhat) xhat^T) fhat = rhs via Sherman-Morrison with
/// b = mu/tau + s_x, s_x = sum_l |xhat_l|^2.
pub fn sherman_morrison_bin(
    xhat: &[Complex64],
    rhs: &[Complex64],
    mu: f64,
    tau: f64,
) -> Vec<Complex64> {
    debug_assert_eq!(xhat.len(), rhs.len());
    if tau <= 0.0 {
        return rhs.iter().map(|r| r / mu).collect();
    }
    let s_x: f64 = xhat.iter().map(|v| v.norm_sqr()).sum();
    let x_dot_rhs: Complex64 = xhat.iter().zip(rhs).map(|(x, r)| x * r).sum();
    let b = mu / tau + s_x;
    let correction = x_dot_rhs / (mu * b);
    xhat.iter()
        .zip(rhs)
        .map(|(x, r)| r / mu - x.conj() * correction)
        .collect()
}

/// f update: per frequency bin t the stationarity system is
/// (mu I + tau conj(xhat(t)) xhat(t)^T) fhat(t) = rhat(t) with
/// rhat_l = tau conj(xhat_l)(yhat + zhat) - conj(xhat_l) gammahat
///          - zetahat_l + mu qhat_l,  qhat_l = dft2(embed(g_l)).
pub fn solve_f(
    g: &[RealGrid],
    crop: &CropRegion,
    zeta: &[RealGrid],
    gamma: &RealGrid,
    z: &RealGrid,
    x: &FeatureMap,
    y: &Label,
    mu: f64,
    tau: f64,
    mode: ExecMode,
) -> Result<Vec<RealGrid>> {
    if mu <= 0.0 {
        return Err(Error::invalid("f-subproblem needs mu > 0"));
    }
    let grid = x.grid();
    let t = grid.len();
    let l_count = x.channels();
    if g.len() != l_count || zeta.len() != l_count {
        return Err(Error::mismatch("channel counts differ in solve_f"));
    }
    let xhat = SpectrumBank::from_feature_map(x);
    let yhat = dft2(y.data());
    let zhat = dft2(z);
    let gammahat = dft2(gamma);
    let zetahat: Vec<ComplexGrid> = zeta.iter().map(dft2).collect();
    let qhat: Result<Vec<ComplexGrid>> = g
        .iter()
        .map(|gl| Ok(dft2(&crop.embed(gl, grid)?)))
        .collect();
    let qhat = qhat?;

    // Bin-major buffers: element t*L + l belongs to bin t, channel l.
    let mut xbin = vec![Complex64::new(0.0, 0.0); t * l_count];
    let mut rbin = vec![Complex64::new(0.0, 0.0); t * l_count];
    for l in 0..l_count {
        let xv = xhat.channel(l).values();
        let zv = zetahat[l].values();
        let qv = qhat[l].values();
        for bin in 0..t {
            let xc = xv[bin].conj();
            xbin[bin * l_count + l] = xv[bin];
            rbin[bin * l_count + l] = tau * xc * (yhat.values()[bin] + zhat.values()[bin])
                - xc * gammahat.values()[bin]
                - zv[bin]
                + mu * qv[bin];
        }
    }
    let mut fbin = vec![Complex64::new(0.0, 0.0); t * l_count];
    {
        let xref = &xbin;
        let rref = &rbin;
        for_each_chunk_mut(&mut fbin, l_count, mode, |bin, out| {
            let lo = bin * l_count;
            let sol = sherman_morrison_bin(&xref[lo..lo + l_count], &rref[lo..lo + l_count], mu, tau);
            out.copy_from_slice(&sol);
        });
    }
    let mut spatial = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let fh: Vec<Complex64> = (0..t).map(|bin| fbin[bin * l_count + l]).collect();
        spatial.push(idft2(&ComplexGrid::from_vec(grid, fh)?)?);
    }
    Ok(spatial)
}

/// Closed-form z update:
/// z = (tau (sum_l x_l * f_l - y) + gamma) / (M .* M + tau), element-wise.
/// `mask` carries the per-cell weights M.
pub fn solve_z(
    f: &[RealGrid],
    x: &FeatureMap,
    y: &Label,
    gamma: &RealGrid,
    mask: &RealGrid,
    tau: f64,
) -> Result<RealGrid> {
    if tau <= 0.0 {
        return Err(Error::invalid("z-subproblem needs tau > 0"));
    }
    let resp = response_channels(f, x.channel_grids())?;
    let grid = resp.grid();
    if mask.grid() != grid || gamma.grid() != grid || y.grid() != grid {
        return Err(Error::mismatch("shapes must agree in solve_z"));
    }
    let mut out = RealGrid::zeros(grid);
    for i in 0..grid.len() {
        let m = mask.values()[i];
        let r = resp.values()[i] - y.data().values()[i];
        out.values_mut()[i] = (tau * r + gamma.values()[i]) / (m * m + tau);
    }
    Ok(out)
}

/// Multiplier ascent:
/// zeta_l += mu (f_l - embed(g_l)),
/// gamma  += tau (sum_l x_l * f_l - y - z).
pub fn update_multipliers(
    state: &AdmmState,
    f: &[RealGrid],
    g: &[RealGrid],
    crop: &CropRegion,
    z: &RealGrid,
    x: &FeatureMap,
    y: &Label,
) -> Result<AdmmState> {
    let grid = x.grid();
    let mut zeta = Vec::with_capacity(f.len());
    for ((fl, gl), zl) in f.iter().zip(g).zip(&state.zeta) {
        let emb = crop.embed(gl, grid)?;
        zeta.push(zl.add_scaled(&fl.add_scaled(&emb, -1.0), state.mu));
    }
    let resp = response_channels(f, x.channel_grids())?;
    let split = resp.add_scaled(y.data(), -1.0).add_scaled(z, -1.0);
    let gamma = state.gamma.add_scaled(&split, state.tau);
    Ok(AdmmState {
        zeta,
        gamma,
        z: z.clone(),
        mu: state.mu,
        tau: state.tau,
        iteration: state.iteration + 1,
    })
}

/// Full masked single-base ADMM loop with the default execution mode.
pub fn train_masked_bacf(req: &TrainRequest) -> Result<FilterBank> {
    train_masked_bacf_with_mode(req, ExecMode::default())
}

pub fn train_masked_bacf_with_mode(req: &TrainRequest, mode: ExecMode) -> Result<FilterBank> {
    Ok(train_masked_bacf_traced(req, mode)?.0)
}

/// As [`train_masked_bacf`], also returning per-sweep constraint
/// diagnostics.
pub fn train_masked_bacf_traced(
    req: &TrainRequest,
    mode: ExecMode,
) -> Result<(FilterBank, AdmmTrace)> {
    req.validate()?;
    let grid = req.x.grid();
    let l_count = req.x.channels();
    let cfg = &req.config;
    let mut state = AdmmState::fresh(grid, l_count, cfg);
    // Warm start from the ridge closed form; it shares the data term and
    // cuts the sweeps needed noticeably. Degenerate spectra fall back to
    // the zero filter.
    let mut f: Vec<RealGrid> = match train_ridge_cf(&req.x, &req.y, cfg.lambda, None) {
        Ok(bank) => bank.spatial().to_vec(),
        Err(_) => (0..l_count).map(|_| RealGrid::zeros(grid)).collect(),
    };
    let mut g: Vec<RealGrid> = f
        .iter()
        .map(|fl| req.crop.extract(fl))
        .collect::<Result<Vec<_>>>()?;
    let mut trace = AdmmTrace::default();

    for sweep in 0..cfg.iters {
        g = solve_g(&f, &state.zeta, state.mu, cfg.lambda, &req.crop)?;
        f = solve_f(
            &g, &req.crop, &state.zeta, &state.gamma, &state.z, &req.x, &req.y, state.mu,
            state.tau, mode,
        )?;
        let z = solve_z(&f, &req.x, &req.y, &state.gamma, req.mask.data(), state.tau)?;
        state = update_multipliers(&state, &f, &g, &req.crop, &z, &req.x, &req.y)?;

        let finite = f.iter().all(RealGrid::is_finite)
            && g.iter().all(RealGrid::is_finite)
            && state.is_finite();
        if !finite {
            return Err(Error::NumericDivergence {
                iteration: sweep,
                what: "non-finite ADMM iterate".into(),
            });
        }

        let mut constraint = 0.0f64;
        for (fl, gl) in f.iter().zip(&g) {
            let emb = req.crop.embed(gl, grid)?;
            constraint = constraint.max(fl.add_scaled(&emb, -1.0).max_abs());
        }
        let resp = response_channels(&f, req.x.channel_grids())?;
        let split = resp
            .add_scaled(req.y.data(), -1.0)
            .add_scaled(&state.z, -1.0)
            .max_abs();
        trace.constraint_inf.push(constraint);
        trace.split_inf.push(split);
        if let Some(tol) = cfg.stop_tol {
            if constraint <= tol && split <= tol {
                break;
            }
        }

        state.mu = (cfg.growth * state.mu).min(cfg.mu_max);
        state.tau = (cfg.growth * state.tau).min(cfg.tau_max);
    }

    let bank = FilterBank::new(grid, req.crop, f, g)?;
    Ok((bank, trace))
}

/// Response spectra helper shared by tracker-side detection: spectrum of
/// sum_l f_l * x_l for precomputed filter spectra.
pub fn detection_response(fhat: &SpectrumBank, x: &FeatureMap) -> Result<RealGrid> {
    if fhat.channels() != x.channels() || fhat.grid() != x.grid() {
        return Err(Error::mismatch("detection channel/grid mismatch"));
    }
    let xhat = SpectrumBank::from_feature_map(x);
    idft2(&response_spectrum(fhat.channel_grids(), xhat.channel_grids()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{binary_mask, cosine_window, ones_mask};
    use crate::oracle::{build_dense, dense_solve_masked_cf, eval_masked_objective_cropped};
    use crate::rng::SplitMix64;
    use crate::types::make_gaussian_label;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn random_feature(grid: Grid2, channels: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        FeatureMap::new(
            (0..channels)
                .map(|_| RealGrid::from_fn(grid, |_, _| rng.next_signed()))
                .collect(),
        )
        .unwrap()
    }

    fn delta_feature(grid: Grid2) -> FeatureMap {
        let mut d = RealGrid::zeros(grid);
        d.set(0, 0, 1.0);
        FeatureMap::new(vec![d]).unwrap()
    }

    #[test]
    fn crop_embed_extract_roundtrip() {
        let grid = Grid2::new(10, 10).unwrap();
        let crop = CropRegion::target_support(grid, 6.0, 6.0);
        // Origin-anchored support wrapping through the corners: rows and
        // columns {7, 8, 9, 0, 1, 2} carry offsets {-3, ..., 2}.
        assert_eq!((crop.row0, crop.col0, crop.rows, crop.cols), (7, 7, 6, 6));
        let mut rng = SplitMix64::new(1);
        let g = RealGrid::from_fn(crop.grid(), |_, _| rng.next_signed());
        let f = crop.embed(&g, grid).unwrap();
        let back = crop.extract(&f).unwrap();
        assert_eq!(g, back);
        // Zeros outside the support; support cells live in the corners.
        let mut nonzero = 0;
        for v in f.values() {
            if *v != 0.0 {
                nonzero += 1;
            }
        }
        assert_eq!(nonzero, 36);
        assert_ne!(f.at(0, 0), 0.0);
        assert_eq!(f.at(5, 5), 0.0);
    }

    #[test]
    fn cropped_filter_acts_as_centered_template() {
        // A delta template embedded at the origin is the convolution
        // identity: the response to any sample reproduces the sample, so
        // content at the center cell drives the response at the center.
        let grid = Grid2::new(8, 8).unwrap();
        let crop = CropRegion::target_support(grid, 3.0, 3.0);
        let mut g = RealGrid::zeros(crop.grid());
        // Offset (0, 0) lives at block position (rows/2, cols/2).
        g.set(1, 1, 1.0);
        let f = crop.embed(&g, grid).unwrap();
        assert_eq!(f.at(0, 0), 1.0);
        let x = random_feature(grid, 1, 77);
        let resp = response_channels(&[f], x.channel_grids()).unwrap();
        for (a, b) in resp.values().iter().zip(x.channel(0).values()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn ridge_delta_sample_reproduces_label() {
        let grid = Grid2::new(8, 8).unwrap();
        let x = delta_feature(grid);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let bank = train_ridge_cf(&x, &y, 0.0, None).unwrap();
        for (f, yv) in bank.spatial()[0].values().iter().zip(y.data().values()) {
            assert_relative_eq!(f, yv, epsilon = 1e-10);
        }
    }

    #[test]
    fn ridge_huge_lambda_shrinks_filter() {
        let grid = Grid2::new(8, 8).unwrap();
        let x = random_feature(grid, 2, 3);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let bank = train_ridge_cf(&x, &y, 1e12, None).unwrap();
        let norm: f64 = bank.spatial().iter().map(RealGrid::norm_sq).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "norm {norm}");
    }

    #[test]
    fn ridge_matches_dense_solve() {
        let grid = Grid2::new(8, 8).unwrap();
        let x = random_feature(grid, 2, 17);
        let y = make_gaussian_label(grid, 1.3).unwrap();
        let lambda = 0.37;
        let bank = train_ridge_cf(&x, &y, lambda, None).unwrap();
        // The ridge model is the masked model with ones mask and full crop.
        let p = build_dense(&x, &ones_mask(grid), &y, &CropRegion::full(grid), lambda).unwrap();
        let sol = dense_solve_masked_cf(&p).unwrap();
        for (fl, gl) in bank.spatial().iter().zip(&sol.g) {
            for (a, b) in fl.values().iter().zip(gl.values()) {
                assert_relative_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn ridge_windowed_training_multiplies_sample() {
        let grid = Grid2::new(8, 8).unwrap();
        let x = random_feature(grid, 1, 7);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let wnd = cosine_window(grid).unwrap();
        let windowed = x.hadamard_all(wnd.data()).unwrap();
        let a = train_ridge_cf(&x, &y, 0.1, Some(&wnd)).unwrap();
        let b = train_ridge_cf(&windowed, &y, 0.1, None).unwrap();
        for (fa, fb) in a.spatial().iter().zip(b.spatial()) {
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn ridge_zero_denominator_is_singular() {
        let grid = Grid2::new(4, 4).unwrap();
        // Constant sample: spectrum is DC-only, every other bin vanishes.
        let x = FeatureMap::new(vec![RealGrid::from_fn(grid, |_, _| 1.0)]).unwrap();
        let y = make_gaussian_label(grid, 1.0).unwrap();
        assert!(matches!(
            train_ridge_cf(&x, &y, 0.0, None),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn solve_g_limits() {
        let grid = Grid2::new(10, 10).unwrap();
        let crop = CropRegion::target_support(grid, 6.0, 6.0);
        let f: Vec<RealGrid> = vec![random_feature(grid, 1, 5).channel(0).clone()];
        let zeros = vec![RealGrid::zeros(grid)];
        // zeta = 0, lambda = 0: g = crop(f).
        let g = solve_g(&f, &zeros, 2.0, 0.0, &crop).unwrap();
        assert_eq!(g[0], crop.extract(&f[0]).unwrap());
        // f = 0, zeta = 0: g = 0.
        let g = solve_g(&zeros, &zeros, 2.0, 0.7, &crop).unwrap();
        assert!(g[0].max_abs() == 0.0);
        assert!(solve_g(&f, &zeros, 0.0, 0.0, &crop).is_err());
    }

    #[test]
    fn solve_g_matches_dense_projection_solve() {
        let grid = Grid2::new(10, 10).unwrap();
        let crop = CropRegion::target_support(grid, 6.0, 6.0);
        let (mu, lambda) = (1.7, 0.4);
        let f = vec![random_feature(grid, 1, 11).channel(0).clone()];
        let zeta = vec![random_feature(grid, 1, 13).channel(0).clone()];
        let g = solve_g(&f, &zeta, mu, lambda, &crop).unwrap();
        // Explicit (lambda I + mu P P^T)^{-1} (P zeta + mu P f) with P the
        // D x T selection matrix.
        let t = grid.len();
        let d = crop.len();
        let mut p_mat = DMatrix::<f64>::zeros(d, t);
        for (row, (r, c)) in crop.cells_on(grid).enumerate() {
            p_mat[(row, r * grid.cols + c)] = 1.0;
        }
        let a = DMatrix::<f64>::identity(d, d) * lambda + (&p_mat * p_mat.transpose()) * mu;
        let fv = DVector::from_iterator(t, f[0].values().iter().copied());
        let zv = DVector::from_iterator(t, zeta[0].values().iter().copied());
        let rhs = &p_mat * zv + (&p_mat * fv) * mu;
        let expect = a.lu().solve(&rhs).unwrap();
        for (i, v) in g[0].values().iter().enumerate() {
            assert_relative_eq!(*v, expect[i], epsilon = 1e-12);
        }
    }

    fn random_complex_vec(n: usize, rng: &mut SplitMix64) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.next_signed(), rng.next_signed()))
            .collect()
    }

    #[test]
    fn sherman_morrison_scalar_case() {
        let mut rng = SplitMix64::new(2);
        let x = random_complex_vec(1, &mut rng);
        let r = random_complex_vec(1, &mut rng);
        let (mu, tau) = (1.3, 0.8);
        let out = sherman_morrison_bin(&x, &r, mu, tau);
        let expect = r[0] / (mu + tau * x[0].norm_sqr());
        assert!((out[0] - expect).norm() < 1e-12);
    }

    #[test]
    fn sherman_morrison_zero_sample_bin() {
        let x = vec![Complex64::new(0.0, 0.0); 3];
        let mut rng = SplitMix64::new(9);
        let r = random_complex_vec(3, &mut rng);
        let out = sherman_morrison_bin(&x, &r, 2.0, 1.0);
        for (o, rv) in out.iter().zip(&r) {
            assert!((o - rv / 2.0).norm() < 1e-14);
        }
    }

    #[test]
    fn sherman_morrison_matches_direct_solve() {
        let (mu, tau) = (0.9, 1.7);
        for l in [1usize, 2, 3, 5, 8] {
            for trial in 0..40 {
                let mut rng = SplitMix64::new(900 + (l as u64) * 100 + trial);
                let x = random_complex_vec(l, &mut rng);
                let r = random_complex_vec(l, &mut rng);
                let fast = sherman_morrison_bin(&x, &r, mu, tau);
                // Direct L x L complex solve of (mu I + tau conj(x) x^T).
                let mut a = DMatrix::<Complex64>::zeros(l, l);
                for i in 0..l {
                    for j in 0..l {
                        a[(i, j)] = tau * x[i].conj() * x[j];
                    }
                    a[(i, i)] += Complex64::new(mu, 0.0);
                }
                let rhs = DVector::from_iterator(l, r.iter().copied());
                let direct = a.lu().solve(&rhs).unwrap();
                for i in 0..l {
                    assert!(
                        (fast[i] - direct[i]).norm() <= 1e-10,
                        "L={l} trial={trial} bin {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn solve_z_limits_and_stationarity() {
        let grid = Grid2::new(5, 5).unwrap();
        let x = random_feature(grid, 1, 3);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let f = vec![random_feature(grid, 1, 4).channel(0).clone()];
        let gamma = random_feature(grid, 1, 5).channel(0).clone();
        let tau = 1.9;
        // Zero mask: z = residual + gamma / tau.
        let zero_mask = RealGrid::zeros(grid);
        let z = solve_z(&f, &x, &y, &gamma, &zero_mask, tau).unwrap();
        let resp = response_channels(&f, x.channel_grids()).unwrap();
        for i in 0..grid.len() {
            let expect = resp.values()[i] - y.data().values()[i] + gamma.values()[i] / tau;
            assert_relative_eq!(z.values()[i], expect, epsilon = 1e-10);
        }
        // Mask energy dominates (M^2 >> tau): z -> 0.
        let ones = ones_mask(grid);
        let z = solve_z(&f, &x, &y, &RealGrid::zeros(grid), ones.data(), 1e-9).unwrap();
        assert!(z.max_abs() <= 1e-8 * (resp.max_abs() + 1.0));
        // Finite-difference stationarity of the z subobjective
        // 1/2 ||M z||^2 + gamma^T (r - z) + tau/2 ||r - z||^2.
        let m = binary_mask(grid, 2.0, 2.0).unwrap();
        let z = solve_z(&f, &x, &y, &gamma, m.data(), tau).unwrap();
        let sub = |zv: &RealGrid| -> f64 {
            let mz = m.data().hadamard(zv);
            let diff = resp.add_scaled(y.data(), -1.0).add_scaled(zv, -1.0);
            0.5 * mz.norm_sq() + gamma.dot(&diff) + 0.5 * tau * diff.norm_sq()
        };
        let h = 1e-6;
        let mut max_grad = 0.0f64;
        for i in 0..grid.len() {
            let mut plus = z.clone();
            plus.values_mut()[i] += h;
            let mut minus = z.clone();
            minus.values_mut()[i] -= h;
            max_grad = max_grad.max(((sub(&plus) - sub(&minus)) / (2.0 * h)).abs());
        }
        assert!(max_grad <= 1e-8, "max finite-difference gradient {max_grad}");
    }

    #[test]
    fn multiplier_update_fixed_points() {
        let grid = Grid2::new(6, 6).unwrap();
        let crop = CropRegion::target_support(grid, 4.0, 4.0);
        let x = random_feature(grid, 2, 8);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let mut state = AdmmState::fresh(grid, 2, &cfg);
        state.zeta = vec![
            random_feature(grid, 1, 21).channel(0).clone(),
            random_feature(grid, 1, 22).channel(0).clone(),
        ];
        state.gamma = random_feature(grid, 1, 23).channel(0).clone();

        // Feasible point: f = embed(g), z = response - y.
        let g: Vec<RealGrid> = (0..2)
            .map(|l| crop.extract(x.channel(l)).unwrap())
            .collect();
        let f: Vec<RealGrid> = g.iter().map(|gl| crop.embed(gl, grid).unwrap()).collect();
        let resp = response_channels(&f, x.channel_grids()).unwrap();
        let z = resp.add_scaled(y.data(), -1.0);
        let next = update_multipliers(&state, &f, &g, &crop, &z, &x, &y).unwrap();
        for (a, b) in next.zeta.iter().zip(&state.zeta) {
            assert!(a.add_scaled(b, -1.0).max_abs() < 1e-10);
        }
        assert!(next.gamma.add_scaled(&state.gamma, -1.0).max_abs() < 1e-10);

        // mu = tau = 0: unchanged regardless of feasibility.
        let mut frozen = state.clone();
        frozen.mu = 0.0;
        frozen.tau = 0.0;
        let arbitrary_z = RealGrid::zeros(grid);
        let next = update_multipliers(&frozen, &f, &g, &crop, &arbitrary_z, &x, &y).unwrap();
        for (a, b) in next.zeta.iter().zip(&frozen.zeta) {
            assert_eq!(a, b);
        }
        assert_eq!(next.gamma, frozen.gamma);
    }

    #[test]
    fn multiplier_update_matches_scalar_loop() {
        let grid = Grid2::new(5, 4).unwrap();
        let crop = CropRegion::target_support(grid, 3.0, 2.0);
        let x = random_feature(grid, 1, 31);
        let y = make_gaussian_label(grid, 0.9).unwrap();
        let cfg = SolverConfig {
            mu0: 1.3,
            tau0: 0.7,
            ..SolverConfig::default()
        };
        let mut state = AdmmState::fresh(grid, 1, &cfg);
        state.zeta = vec![random_feature(grid, 1, 32).channel(0).clone()];
        state.gamma = random_feature(grid, 1, 33).channel(0).clone();
        let f = vec![random_feature(grid, 1, 34).channel(0).clone()];
        let g = vec![RealGrid::from_fn(crop.grid(), |r, c| (r + c) as f64 * 0.1)];
        let z = random_feature(grid, 1, 35).channel(0).clone();
        let next = update_multipliers(&state, &f, &g, &crop, &z, &x, &y).unwrap();
        let emb = crop.embed(&g[0], grid).unwrap();
        let resp = response_channels(&f, x.channel_grids()).unwrap();
        for i in 0..grid.len() {
            let expect_zeta =
                state.zeta[0].values()[i] + state.mu * (f[0].values()[i] - emb.values()[i]);
            assert_relative_eq!(next.zeta[0].values()[i], expect_zeta, epsilon = 1e-12);
            let expect_gamma = state.gamma.values()[i]
                + state.tau * (resp.values()[i] - y.data().values()[i] - z.values()[i]);
            assert_relative_eq!(next.gamma.values()[i], expect_gamma, epsilon = 1e-12);
        }
    }

    #[test]
    fn admm_exact_fit_on_delta_sample() {
        // ones mask, lambda = 0, delta sample, full crop: the response can
        // match the label exactly and the loop should find it.
        let grid = Grid2::new(8, 8).unwrap();
        let x = delta_feature(grid);
        let y = make_gaussian_label(grid, 1.5).unwrap();
        let req = TrainRequest {
            x: x.clone(),
            y: y.clone(),
            mask: ones_mask(grid),
            crop: CropRegion::full(grid),
            config: SolverConfig {
                lambda: 0.0,
                iters: 50,
                ..SolverConfig::default()
            },
        };
        let bank = train_masked_bacf(&req).unwrap();
        let resp = response_channels(bank.spatial(), x.channel_grids()).unwrap();
        let err = resp.add_scaled(y.data(), -1.0).max_abs();
        assert!(err <= 1e-4, "max response error {err}");
    }

    #[test]
    fn admm_matches_dense_oracle_on_masked_instance() {
        let grid = Grid2::new(12, 12).unwrap();
        let x = random_feature(grid, 1, 2024);
        let y = make_gaussian_label(grid, 1.5).unwrap();
        let mask = binary_mask(grid, 6.0, 6.0).unwrap();
        let crop = CropRegion::target_support(grid, 6.0, 6.0);
        let lambda = 0.5;
        let req = TrainRequest {
            x: x.clone(),
            y: y.clone(),
            mask: mask.clone(),
            crop,
            config: SolverConfig::verification(lambda),
        };
        let bank = train_masked_bacf(&req).unwrap();
        let admm_obj =
            eval_masked_objective_cropped(bank.cropped(), &crop, &x, &y, &mask, lambda).unwrap();
        let p = build_dense(&x, &mask, &y, &crop, lambda).unwrap();
        let sol = dense_solve_masked_cf(&p).unwrap();
        let gap = (admm_obj - sol.objective) / sol.objective;
        assert!(gap.abs() <= 1e-4, "relative objective gap {gap:.3e}");
    }

    #[test]
    fn admm_constraints_converge_with_reference_schedule() {
        let grid = Grid2::new(10, 10).unwrap();
        // Feature-realistic sample magnitudes (HOG cells live well below 1).
        let x = {
            let raw = random_feature(grid, 2, 555);
            FeatureMap::new(raw.channel_grids().iter().map(|c| c.scaled(0.25)).collect()).unwrap()
        };
        let y = make_gaussian_label(grid, 1.2).unwrap();
        let mask = binary_mask(grid, 5.0, 5.0).unwrap();
        let crop = CropRegion::target_support(grid, 5.0, 5.0);
        let req = TrainRequest {
            x,
            y,
            mask,
            crop,
            config: SolverConfig {
                lambda: 0.5,
                iters: 50,
                ..SolverConfig::default()
            },
        };
        let (_, trace) = train_masked_bacf_traced(&req, ExecMode::default()).unwrap();
        let last_c = *trace.constraint_inf.last().unwrap();
        let last_s = *trace.split_inf.last().unwrap();
        assert!(last_c <= 1e-3, "constraint residual {last_c}");
        assert!(last_s <= 1e-3, "split residual {last_s}");
    }

    #[test]
    fn admm_reduces_to_windowed_bacf_with_ones_mask() {
        // Baseline-variant fidelity: ones mask on a cosine-windowed sample
        // equals a direct solve of the classic model on that sample.
        let grid = Grid2::new(10, 10).unwrap();
        let x = random_feature(grid, 2, 77);
        let wnd = cosine_window(grid).unwrap();
        let xw = x.hadamard_all(wnd.data()).unwrap();
        let y = make_gaussian_label(grid, 1.2).unwrap();
        let crop = CropRegion::target_support(grid, 4.0, 4.0);
        let lambda = 0.5;
        let req = TrainRequest {
            x: xw.clone(),
            y: y.clone(),
            mask: ones_mask(grid),
            crop,
            config: SolverConfig::verification(lambda),
        };
        let bank = train_masked_bacf(&req).unwrap();
        let admm_obj =
            eval_masked_objective_cropped(bank.cropped(), &crop, &xw, &y, &ones_mask(grid), lambda)
                .unwrap();
        let p = build_dense(&xw, &ones_mask(grid), &y, &crop, lambda).unwrap();
        let sol = dense_solve_masked_cf(&p).unwrap();
        let gap = (admm_obj - sol.objective) / sol.objective;
        assert!(gap.abs() <= 1e-4, "relative gap {gap:.3e}");
    }

    #[test]
    fn admm_modes_are_bit_identical() {
        let grid = Grid2::new(9, 9).unwrap();
        let x = random_feature(grid, 3, 99);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let mask = binary_mask(grid, 4.0, 4.0).unwrap();
        let crop = CropRegion::target_support(grid, 4.0, 4.0);
        let req = TrainRequest {
            x,
            y,
            mask,
            crop,
            config: SolverConfig {
                iters: 10,
                ..SolverConfig::default()
            },
        };
        let seq = train_masked_bacf_with_mode(&req, ExecMode::Sequential).unwrap();
        let par = train_masked_bacf_with_mode(&req, ExecMode::Parallel).unwrap();
        for (a, b) in seq.spatial().iter().zip(par.spatial()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn ridge_response_scales_linearly_with_label() {
        let grid = Grid2::new(8, 8).unwrap();
        let x = random_feature(grid, 2, 41);
        let y = make_gaussian_label(grid, 1.0).unwrap();
        let k = 3.7;
        let yk = Label::from_grid(y.data().scaled(k), y.sigma()).unwrap();
        let a = train_ridge_cf(&x, &y, 0.0, None).unwrap();
        let b = train_ridge_cf(&x, &yk, 0.0, None).unwrap();
        let ra = response_channels(a.spatial(), x.channel_grids()).unwrap();
        let rb = response_channels(b.spatial(), x.channel_grids()).unwrap();
        for (u, v) in ra.values().iter().zip(rb.values()) {
            assert_relative_eq!(u * k, v, epsilon = 1e-8);
        }
    }
}
