//! Masked multi-base-image CF training.
//!
//! The model couples K weighted base images through one filter:
//!
//! ```text
//! min_f 1/2 sum_k alpha_k ||M (sum_d f_d * p_{k,d} - y_k)||^2
//!       + 1/2 sum_d ||w f_d||^2  (+ lambda/2 ||Q||^2, Q frozen)
//! ```
//!
//! where p_{k,d} = sum_l q_{l,d} J_l{x_{k,l}} are the interpolated,
//! channel-projected samples. Training relaxes the masked residuals into
//! auxiliary variables z_k = sqrt(alpha_k) (sum_d f_d * p_{k,d} - y_k) and
//! alternates an element-wise closed-form z_k update with a
//! preconditioned-conjugate-gradient filter update; both blocks minimize
//! their subproblem exactly (or to tolerance), so the relaxed objective is
//! non-increasing within every alternation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::frequency::{dft2, idft2, response_channels, SpectrumBank};
use crate::masking::SpatialMask;
use crate::parallel::{map_collect, ExecMode};
use crate::solver_single::{CropRegion, FilterBank};
use crate::types::{ComplexGrid, FeatureMap, Grid2, Label, RealGrid, SolverConfig};

/// One weighted base image.
#[derive(Clone, Debug)]
pub struct SampleEntry {
    pub x: FeatureMap,
    pub y: Label,
    pub weight: f64,
}

/// Capacity-bounded set of weighted base images. Weights always sum to 1.
#[derive(Clone, Debug)]
pub struct SampleSet {
    capacity: usize,
    entries: Vec<SampleEntry>,
}

impl SampleSet {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("sample-set capacity must be >= 1"));
        }
        Ok(SampleSet {
            capacity,
            entries: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn weight_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    /// Recency-weighted insertion: existing weights decay by (1 - eta), the
    /// new sample enters with weight eta, the minimum-weight entry (oldest
    /// on ties) is evicted when over capacity, and weights renormalize.
    pub fn update(&mut self, x: FeatureMap, y: Label, eta: f64) -> Result<()> {
        if !(0.0 < eta && eta < 1.0) {
            return Err(Error::invalid(format!("learning rate must be in (0, 1), got {eta}")));
        }
        if let Some(first) = self.entries.first() {
            if first.x.grid() != x.grid() || first.x.channels() != x.channels() {
                return Err(Error::mismatch("sample shape differs from the set"));
            }
        }
        for e in &mut self.entries {
            e.weight *= 1.0 - eta;
        }
        self.entries.push(SampleEntry { x, y, weight: eta });
        if self.entries.len() > self.capacity {
            let evict = self
                .entries
                .iter()
                .enumerate()
                .min_by(|(ia, a), (ib, b)| {
                    a.weight
                        .partial_cmp(&b.weight)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(ia.cmp(ib))
                })
                .map(|(i, _)| i)
                .expect("non-empty");
            self.entries.remove(evict);
        }
        let sum = self.weight_sum();
        for e in &mut self.entries {
            e.weight /= sum;
        }
        Ok(())
    }
}

/// Channel-mixing matrix Q (L x D, orthonormal columns at initialization).
#[derive(Clone, Debug)]
pub struct ProjectionMatrix {
    q: DMatrix<f64>,
}

impl ProjectionMatrix {
    pub fn identity(channels: usize) -> Self {
        ProjectionMatrix {
            q: DMatrix::identity(channels, channels),
        }
    }

    pub fn from_matrix(q: DMatrix<f64>) -> Result<Self> {
        if q.ncols() == 0 || q.nrows() == 0 || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("projection matrix must be non-empty and finite"));
        }
        Ok(ProjectionMatrix { q })
    }

    pub fn input_channels(&self) -> usize {
        self.q.nrows()
    }

    pub fn output_channels(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn norm_sq(&self) -> f64 {
        self.q.iter().map(|v| v * v).sum()
    }
}

/// Learns Q from the first frame: columns are the top-D principal
/// directions of the channel-by-cell data matrix.
pub fn init_projection(x: &FeatureMap, d: usize) -> Result<ProjectionMatrix> {
    let l = x.channels();
    if d == 0 || d >= l {
        return Err(Error::invalid(format!(
            "projection needs 1 <= D < L, got D = {d}, L = {l}"
        )));
    }
    let t = x.grid().len();
    let mut a = DMatrix::<f64>::zeros(l, t);
    for (li, ch) in x.channel_grids().iter().enumerate() {
        for (ti, &v) in ch.values().iter().enumerate() {
            a[(li, ti)] = v;
        }
    }
    let cov = &a * a.transpose();
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut q = DMatrix::<f64>::zeros(l, d);
    for (col, &idx) in order.iter().take(d).enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into();
        // Deterministic sign: largest-magnitude component positive.
        let lead = v
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v = -v;
        }
        q.set_column(col, &v);
    }
    ProjectionMatrix::from_matrix(q)
}

/// Applies Q as channel mixing: output channel d = sum_l q_{l,d} x_l.
pub fn project_sample(x: &FeatureMap, q: &ProjectionMatrix) -> Result<FeatureMap> {
    if x.channels() != q.input_channels() {
        return Err(Error::mismatch(format!(
            "sample has {} channels, projection expects {}",
            x.channels(),
            q.input_channels()
        )));
    }
    let grid = x.grid();
    let mut out = Vec::with_capacity(q.output_channels());
    for d in 0..q.output_channels() {
        let mut acc = RealGrid::zeros(grid);
        for l in 0..q.input_channels() {
            let coef = q.matrix()[(l, d)];
            if coef != 0.0 {
                acc = acc.add_scaled(x.channel(l), coef);
            }
        }
        out.push(acc);
    }
    FeatureMap::new(out)
}

/// Periodic interpolation kernel used to lift native feature grids onto
/// the common training resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InterpolationKernel {
    /// Exact pass-through; native and common sizes must agree.
    Identity,
    /// Keys cubic-convolution kernel with parameter `a` (interpolating,
    /// unit partition, support of 4 input samples).
    Cubic { a: f64 },
}

impl Default for InterpolationKernel {
    fn default() -> Self {
        InterpolationKernel::Cubic { a: -0.75 }
    }
}

fn keys_cubic(a: f64, s: f64) -> f64 {
    let s = s.abs();
    if s < 1.0 {
        ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0
    } else if s < 2.0 {
        (((s - 5.0) * s + 8.0) * s - 4.0) * a
    } else {
        0.0
    }
}

fn interpolate_axis(input: &[f64], n: usize, t_common: usize, kernel: InterpolationKernel) -> Vec<f64> {
    match kernel {
        InterpolationKernel::Identity => input.to_vec(),
        InterpolationKernel::Cubic { a } => {
            let mut out = vec![0.0; t_common];
            let ratio = n as f64 / t_common as f64;
            for (j, o) in out.iter_mut().enumerate() {
                // Position of output sample j in input-sample units.
                let pos = j as f64 * ratio;
                let mut acc = 0.0;
                for (i, &v) in input.iter().enumerate().take(n) {
                    // Periodic distance in input-sample units.
                    let mut dist = pos - i as f64;
                    let nf = n as f64;
                    dist -= (dist / nf).round() * nf;
                    acc += v * keys_cubic(a, dist);
                }
                *o = acc;
            }
            out
        }
    }
}

/// Resamples one channel from its native grid to the common grid with a
/// separable periodic kernel. Identity requires equal sizes; the cubic
/// kernel's 4-sample support must fit inside the period (native size >= 4
/// per axis).
pub fn interpolate_feature(
    x: &RealGrid,
    kernel: InterpolationKernel,
    common: Grid2,
) -> Result<RealGrid> {
    let native = x.grid();
    if native.rows > common.rows || native.cols > common.cols {
        return Err(Error::invalid(format!(
            "native grid {native} exceeds common grid {common}"
        )));
    }
    match kernel {
        InterpolationKernel::Identity => {
            if native != common {
                return Err(Error::invalid(
                    "identity kernel requires native size == common size",
                ));
            }
            Ok(x.clone())
        }
        InterpolationKernel::Cubic { .. } => {
            if native == common {
                // Interpolating kernel: exact at the original sample points.
                return Ok(x.clone());
            }
            // Only axes that actually resample need the 4-sample support
            // to fit inside their period.
            if (native.rows != common.rows && native.rows < 4)
                || (native.cols != common.cols && native.cols < 4)
            {
                return Err(Error::invalid(format!(
                    "cubic kernel support (4 samples) exceeds the period of native grid {native}"
                )));
            }
            // Rows pass: native.rows x common.cols.
            let mut rows_pass = Vec::with_capacity(native.rows * common.cols);
            for r in 0..native.rows {
                let row: Vec<f64> = (0..native.cols).map(|c| x.at(r, c)).collect();
                rows_pass.extend(interpolate_axis(&row, native.cols, common.cols, kernel));
            }
            // Columns pass: common.rows x common.cols.
            let mut out = RealGrid::zeros(common);
            let mut col_buf = vec![0.0; native.rows];
            for c in 0..common.cols {
                for r in 0..native.rows {
                    col_buf[r] = rows_pass[r * common.cols + c];
                }
                let col = interpolate_axis(&col_buf, native.rows, common.rows, kernel);
                for (r, v) in col.into_iter().enumerate() {
                    out.set(r, c, v);
                }
            }
            Ok(out)
        }
    }
}

/// Resamples every channel of a feature map.
pub fn interpolate_map(
    x: &FeatureMap,
    kernel: InterpolationKernel,
    common: Grid2,
) -> Result<FeatureMap> {
    FeatureMap::new(
        x.channel_grids()
            .iter()
            .map(|ch| interpolate_feature(ch, kernel, common))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Spatial regularization weights w (strictly positive everywhere so the
/// filter subproblem stays positive definite).
#[derive(Clone, Debug)]
pub struct SpatialRegWeights {
    data: RealGrid,
}

impl SpatialRegWeights {
    pub fn from_grid(data: RealGrid) -> Result<Self> {
        let min = data.values().iter().fold(f64::MAX, |a, &b| a.min(b));
        if !(min > 0.0) {
            return Err(Error::invalid(format!(
                "regularization weights must be strictly positive, min = {min}"
            )));
        }
        Ok(SpatialRegWeights { data })
    }

    /// Default radial profile w(x, y) = base + slope ((x/h)^2 + (y/w)^2).
    /// The offsets are wrapped distances from the DFT origin, where a
    /// filter acting as a centered template carries its coefficients under
    /// circular convolution, so weights stay small over the template
    /// support and grow toward the boundary band.
    pub fn radial(grid: Grid2, target_h: f64, target_w: f64, base: f64, slope: f64) -> Result<Self> {
        if !(target_h > 0.0 && target_w > 0.0) {
            return Err(Error::invalid("target extent must be positive"));
        }
        let wrapped = |i: usize, n: usize| i.min(n - i) as f64;
        let data = RealGrid::from_fn(grid, |r, c| {
            let x = wrapped(r, grid.rows) / target_h;
            let y = wrapped(c, grid.cols) / target_w;
            base + slope * (x * x + y * y)
        });
        SpatialRegWeights::from_grid(data)
    }

    pub fn constant(grid: Grid2, value: f64) -> Result<Self> {
        SpatialRegWeights::from_grid(RealGrid::from_fn(grid, |_, _| value))
    }

    pub fn data(&self) -> &RealGrid {
        &self.data
    }
}

/// Default (base, slope) of the radial regularization profile.
pub const DEFAULT_REG_PROFILE: (f64, f64) = (0.1, 3.0);

/// Closed-form z_k update:
/// z_k = tau sqrt(alpha_k) (sum_d f_d * p_{k,d} - y_k) / (M .* M + tau).
/// Entries with alpha_k = 0 are defined as zero.
pub fn solve_zk(
    f: &[RealGrid],
    q: &ProjectionMatrix,
    x_k: &FeatureMap,
    y_k: &Label,
    alpha_k: f64,
    mask: &RealGrid,
    tau: f64,
) -> Result<RealGrid> {
    if tau <= 0.0 {
        return Err(Error::invalid("z_k update needs tau > 0"));
    }
    if alpha_k < 0.0 {
        return Err(Error::invalid("alpha_k must be nonnegative"));
    }
    let grid = mask.grid();
    if alpha_k == 0.0 {
        return Ok(RealGrid::zeros(grid));
    }
    let projected = project_sample(x_k, q)?;
    let resp = response_channels(f, projected.channel_grids())?;
    let scale = tau * alpha_k.sqrt();
    let mut out = RealGrid::zeros(grid);
    for i in 0..grid.len() {
        let m = mask.values()[i];
        let r = resp.values()[i] - y_k.data().values()[i];
        out.values_mut()[i] = scale * r / (m * m + tau);
    }
    Ok(out)
}

/// Relaxed objective of the alternating scheme at penalty `tau`:
/// `1/2 sum_k ||M z_k||^2 + 1/2 sum_d ||w f_d||^2 + lambda/2 ||Q||^2
///  + tau/2 sum_k alpha_k ||R_k - z_k / sqrt(alpha_k)||^2`.
/// `projected` holds the already-projected samples p_k.
pub fn eval_relaxed_objective(
    f: &[RealGrid],
    z: &[RealGrid],
    projected: &[(FeatureMap, Label, f64)],
    mask: &RealGrid,
    w: &SpatialRegWeights,
    tau: f64,
    lambda: f64,
    q_norm_sq: f64,
) -> Result<f64> {
    let mut total = 0.5 * lambda * q_norm_sq;
    for fd in f {
        total += 0.5 * w.data().hadamard(fd).norm_sq();
    }
    for (zk, (xk, yk, alpha)) in z.iter().zip(projected) {
        if *alpha == 0.0 {
            continue;
        }
        total += 0.5 * mask.hadamard(zk).norm_sq();
        let resp = response_channels(f, xk.channel_grids())?;
        let inv_sqrt = 1.0 / alpha.sqrt();
        let mut pen = 0.0;
        for i in 0..mask.grid().len() {
            let r = resp.values()[i] - yk.data().values()[i] - zk.values()[i] * inv_sqrt;
            pen += r * r;
        }
        total += 0.5 * tau * alpha * pen;
    }
    Ok(total)
}

/// Per-alternation diagnostics of [`train_masked_multi`].
#[derive(Clone, Debug, Default)]
pub struct MultiTrace {
    /// Relaxed objective before the (z, f) block updates, at that
    /// alternation's tau.
    pub relaxed_before: Vec<f64>,
    /// Relaxed objective after both block updates, at the same tau.
    pub relaxed_after: Vec<f64>,
    pub tau: Vec<f64>,
    /// Conjugate-gradient iterations spent per filter update.
    pub inner_iters: Vec<usize>,
}

/// Outcome of multi-base training: a full-support filter bank over the
/// projected channel space plus per-alternation diagnostics.
pub struct MultiTrainOutcome {
    pub bank: FilterBank,
    pub trace: MultiTrace,
}

struct CgWorkspace {
    grid: Grid2,
    d_channels: usize,
    tau: f64,
    alphas: Vec<f64>,
    /// Spectra of the projected samples, [k][d].
    p_hat: Vec<Vec<ComplexGrid>>,
    /// Jacobi diagonal per channel cell.
    jacobi: Vec<RealGrid>,
    w_sq: RealGrid,
}

impl CgWorkspace {
    /// Applies the normal operator
    /// A f = w^2 f + tau sum_k alpha_k J_k^T (J_k f).
    fn apply(&self, f: &[RealGrid]) -> Result<Vec<RealGrid>> {
        let fhat: Vec<ComplexGrid> = f.iter().map(dft2).collect();
        let mut out_hat: Vec<Vec<Complex64>> =
            vec![vec![Complex64::new(0.0, 0.0); self.grid.len()]; self.d_channels];
        for (k, alpha) in self.alphas.iter().enumerate() {
            if *alpha == 0.0 {
                continue;
            }
            // r_k spectrum = sum_d p_hat[k][d] .* fhat[d].
            let mut rk = vec![Complex64::new(0.0, 0.0); self.grid.len()];
            for d in 0..self.d_channels {
                for (acc, (p, fv)) in rk
                    .iter_mut()
                    .zip(self.p_hat[k][d].values().iter().zip(fhat[d].values()))
                {
                    *acc += p * fv;
                }
            }
            let scale = self.tau * alpha;
            for d in 0..self.d_channels {
                for (acc, (p, rv)) in out_hat[d]
                    .iter_mut()
                    .zip(self.p_hat[k][d].values().iter().zip(&rk))
                {
                    *acc += scale * p.conj() * rv;
                }
            }
        }
        let mut out = Vec::with_capacity(self.d_channels);
        for (d, hat) in out_hat.into_iter().enumerate() {
            let data_part = idft2(&ComplexGrid::from_vec(self.grid, hat)?)?;
            out.push(data_part.add_scaled(&self.w_sq.hadamard(&f[d]), 1.0));
        }
        Ok(out)
    }
}

fn stack_dot(a: &[RealGrid], b: &[RealGrid]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Preconditioned CG on the filter subproblem, warm-started from `f`.
/// Returns the iteration count used.
fn cg_filter_update(
    f: &mut Vec<RealGrid>,
    rhs: &[RealGrid],
    ws: &CgWorkspace,
    max_iters: usize,
    grad_tol: f64,
) -> Result<usize> {
    let apply = |v: &[RealGrid]| ws.apply(v);
    let precond = |v: &[RealGrid]| -> Vec<RealGrid> {
        v.iter()
            .zip(&ws.jacobi)
            .map(|(r, j)| {
                let mut out = r.clone();
                for (o, jv) in out.values_mut().iter_mut().zip(j.values()) {
                    *o /= *jv;
                }
                out
            })
            .collect()
    };
    let af = apply(f)?;
    let mut residual: Vec<RealGrid> = rhs
        .iter()
        .zip(&af)
        .map(|(r, a)| r.add_scaled(a, -1.0))
        .collect();
    let mut iters = 0usize;
    if stack_dot(&residual, &residual).sqrt() <= grad_tol {
        return Ok(0);
    }
    let mut z = precond(&residual);
    let mut p = z.clone();
    let mut rz = stack_dot(&residual, &z);
    for _ in 0..max_iters {
        iters += 1;
        let ap = apply(&p)?;
        let denom = stack_dot(&p, &ap);
        if denom <= 0.0 || !denom.is_finite() {
            break;
        }
        let step = rz / denom;
        for d in 0..f.len() {
            f[d] = f[d].add_scaled(&p[d], step);
            residual[d] = residual[d].add_scaled(&ap[d], -step);
        }
        if stack_dot(&residual, &residual).sqrt() <= grad_tol {
            break;
        }
        z = precond(&residual);
        let rz_new = stack_dot(&residual, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for d in 0..p.len() {
            p[d] = z[d].add_scaled(&p[d], beta);
        }
    }
    Ok(iters)
}

/// Gradient-norm target of the filter subproblem.
pub const FILTER_GRAD_TOL: f64 = 1e-6;

/// Trains the masked multi-base filter on a sample set.
///
/// `initial` warm-starts the filter (the online tracker passes the
/// previous model); `None` starts from zero.
#[allow(clippy::too_many_arguments)]
pub fn train_masked_multi(
    set: &SampleSet,
    mask: &SpatialMask,
    q: &ProjectionMatrix,
    w: &SpatialRegWeights,
    kernel: InterpolationKernel,
    config: &SolverConfig,
    initial: Option<&FilterBank>,
    mode: ExecMode,
) -> Result<MultiTrainOutcome> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("sample set is empty"));
    }
    let grid = mask.grid();
    if w.data().grid() != grid {
        return Err(Error::mismatch("regularization weights must live on the mask grid"));
    }
    let d_channels = q.output_channels();

    // Interpolate + project every base image once.
    let mut projected: Vec<(FeatureMap, Label, f64)> = Vec::with_capacity(set.len());
    for e in set.entries() {
        if e.y.grid() != grid {
            return Err(Error::mismatch("labels must live on the common grid"));
        }
        let lifted = interpolate_map(&e.x, kernel, grid)?;
        projected.push((project_sample(&lifted, q)?, e.y.clone(), e.weight));
    }

    let mut f: Vec<RealGrid> = match initial {
        Some(bank) => {
            if bank.channels() != d_channels || bank.grid() != grid {
                return Err(Error::mismatch("initial filter geometry mismatch"));
            }
            bank.spatial().to_vec()
        }
        None => (0..d_channels).map(|_| RealGrid::zeros(grid)).collect(),
    };
    let mut z: Vec<RealGrid> = (0..set.len()).map(|_| RealGrid::zeros(grid)).collect();

    let p_hat: Vec<Vec<ComplexGrid>> = projected
        .iter()
        .map(|(p, _, _)| SpectrumBank::from_feature_map(p).channel_grids().to_vec())
        .collect();
    let alphas: Vec<f64> = projected.iter().map(|(_, _, a)| *a).collect();
    let w_sq = w.data().hadamard(w.data());

    let mut tau = config.tau0;
    let mut trace = MultiTrace::default();
    for outer in 0..config.iters {
        let before = eval_relaxed_objective(&f, &z, &projected, mask.data(), w, tau, config.lambda, q.norm_sq())?;

        // (a) closed-form z_k updates, independent across k.
        let items: Vec<usize> = (0..projected.len()).collect();
        let f_ref = &f;
        let projected_ref = &projected;
        z = map_collect(items, mode, |k| {
            let (xk, yk, alpha) = &projected_ref[k];
            if *alpha == 0.0 {
                return Ok(RealGrid::zeros(grid));
            }
            let resp = response_channels(f_ref, xk.channel_grids())?;
            let scale = tau * alpha.sqrt();
            let mut out = RealGrid::zeros(grid);
            for i in 0..grid.len() {
                let m = mask.data().values()[i];
                let r = resp.values()[i] - yk.data().values()[i];
                out.values_mut()[i] = scale * r / (m * m + tau);
            }
            Ok(out)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        // (b) filter update: PCG on the stationarity system.
        let mut jacobi = Vec::with_capacity(d_channels);
        for d in 0..d_channels {
            let mut diag = w_sq.clone();
            for (k, alpha) in alphas.iter().enumerate() {
                if *alpha == 0.0 {
                    continue;
                }
                let p_norm_sq = projected[k].0.channel(d).norm_sq();
                let add = tau * alpha * p_norm_sq;
                for v in diag.values_mut() {
                    *v += add;
                }
            }
            jacobi.push(diag);
        }
        let ws = CgWorkspace {
            grid,
            d_channels,
            tau,
            alphas: alphas.clone(),
            p_hat: p_hat.clone(),
            jacobi,
            w_sq: w_sq.clone(),
        };
        // rhs_d = tau sum_k alpha_k corr(p_{k,d}, y_k + z_k / sqrt(alpha_k)).
        let mut rhs_hat: Vec<Vec<Complex64>> =
            vec![vec![Complex64::new(0.0, 0.0); grid.len()]; d_channels];
        for (k, (_, yk, alpha)) in projected.iter().enumerate() {
            if *alpha == 0.0 {
                continue;
            }
            let target = yk.data().add_scaled(&z[k], 1.0 / alpha.sqrt());
            let that = dft2(&target);
            let scale = tau * alpha;
            for d in 0..d_channels {
                for (acc, (p, tv)) in rhs_hat[d]
                    .iter_mut()
                    .zip(p_hat[k][d].values().iter().zip(that.values()))
                {
                    *acc += scale * p.conj() * tv;
                }
            }
        }
        let mut rhs = Vec::with_capacity(d_channels);
        for hat in rhs_hat {
            rhs.push(idft2(&ComplexGrid::from_vec(grid, hat)?)?);
        }
        let used = cg_filter_update(&mut f, &rhs, &ws, config.inner_iters, FILTER_GRAD_TOL)?;

        if !f.iter().all(RealGrid::is_finite) || !z.iter().all(RealGrid::is_finite) {
            return Err(Error::NumericDivergence {
                iteration: outer,
                what: "non-finite multi-base iterate".into(),
            });
        }

        let after = eval_relaxed_objective(&f, &z, &projected, mask.data(), w, tau, config.lambda, q.norm_sq())?;
        trace.relaxed_before.push(before);
        trace.relaxed_after.push(after);
        trace.tau.push(tau);
        trace.inner_iters.push(used);

        tau = (config.growth * tau).min(config.tau_max);
    }

    let crop = CropRegion::full(grid);
    let bank = FilterBank::new(grid, crop, f.clone(), f)?;
    Ok(MultiTrainOutcome { bank, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::ones_mask;
    use crate::oracle::{dense_solve_spatially_weighted, eval_masked_multi_objective, WeightedSample};
    use crate::rng::SplitMix64;
    use crate::types::make_gaussian_label;
    use approx::assert_relative_eq;

    fn random_feature(grid: Grid2, channels: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        FeatureMap::new(
            (0..channels)
                .map(|_| RealGrid::from_fn(grid, |_, _| rng.next_signed()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_interpolation_passes_through() {
        let g = Grid2::new(6, 6).unwrap();
        let x = random_feature(g, 1, 1).channel(0).clone();
        let out = interpolate_feature(&x, InterpolationKernel::Identity, g).unwrap();
        assert_eq!(out, x);
        let bigger = Grid2::new(8, 8).unwrap();
        assert!(interpolate_feature(&x, InterpolationKernel::Identity, bigger).is_err());
    }

    #[test]
    fn cubic_interpolation_preserves_constants() {
        let native = Grid2::new(5, 7).unwrap();
        let common = Grid2::new(11, 13).unwrap();
        let x = RealGrid::from_fn(native, |_, _| 2.5);
        let out = interpolate_feature(&x, InterpolationKernel::default(), common).unwrap();
        for v in out.values() {
            assert_relative_eq!(*v, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn cubic_interpolation_matches_direct_sum() {
        // 1-D check against a literal evaluation of the interpolation sum
        // J{x}(t) = sum_n x[n] b(t - T n / N) at the output sample points.
        let native = Grid2::new(1, 4).unwrap();
        let common = Grid2::new(1, 8).unwrap();
        let x = RealGrid::from_vec(native, vec![0.3, -1.1, 0.7, 2.0]).unwrap();
        let out = interpolate_feature(&x, InterpolationKernel::Cubic { a: -0.75 }, common).unwrap();
        let t_period = 8.0f64;
        let n = 4.0f64;
        for j in 0..8 {
            let t = j as f64 * (t_period / 8.0);
            let mut expect = 0.0;
            for (i, &v) in x.values().iter().enumerate() {
                // Kernel argument in input-sample units, periodic wrap.
                let mut dist = (t - t_period * i as f64 / n) / (t_period / n);
                dist -= (dist / n).round() * n;
                expect += v * keys_cubic(-0.75, dist);
            }
            assert_relative_eq!(out.at(0, j), expect, epsilon = 1e-12);
        }
        // Exact at the original sample points.
        for i in 0..4 {
            assert_relative_eq!(out.at(0, 2 * i), x.at(0, i), epsilon = 1e-12);
        }
    }

    #[test]
    fn cubic_rejects_too_small_period() {
        let native = Grid2::new(3, 3).unwrap();
        let common = Grid2::new(6, 6).unwrap();
        let x = RealGrid::zeros(native);
        assert!(interpolate_feature(&x, InterpolationKernel::default(), common).is_err());
    }

    #[test]
    fn projection_init_is_orthonormal_and_bounded() {
        let g = Grid2::new(8, 8).unwrap();
        let x = random_feature(g, 6, 99);
        assert!(init_projection(&x, 6).is_err());
        assert!(init_projection(&x, 0).is_err());
        let q = init_projection(&x, 3).unwrap();
        let qtq = q.matrix().transpose() * q.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(qtq[(i, j)], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn projection_recovers_planted_subspace() {
        // Six channels mixed from two latent grids: the top-2 principal
        // subspace must equal the mixing column space.
        let g = Grid2::new(8, 8).unwrap();
        let mut rng = SplitMix64::new(7);
        let latent: Vec<RealGrid> = (0..2)
            .map(|_| RealGrid::from_fn(g, |_, _| rng.next_signed()))
            .collect();
        let mixing: Vec<[f64; 2]> = (0..6)
            .map(|_| [rng.next_signed(), rng.next_signed()])
            .collect();
        let channels: Vec<RealGrid> = mixing
            .iter()
            .map(|m| latent[0].scaled(m[0]).add_scaled(&latent[1], m[1]))
            .collect();
        let x = FeatureMap::new(channels).unwrap();
        let q = init_projection(&x, 2).unwrap();
        // Principal angle check: projecting the mixing vectors onto the
        // learned subspace must preserve their norms.
        let qm = q.matrix();
        for m in &mixing {
            let v = DVector::from_vec(vec![m[0], m[1]]);
            // The mixing vector lives in channel space through the latent
            // loadings: channel l weight on latent j is mixing[l][j].
            let mut chan = DVector::zeros(6);
            for l in 0..6 {
                chan[l] = mixing[l][0] * v[0] + mixing[l][1] * v[1];
            }
            let proj = qm * (qm.transpose() * &chan);
            let angle_residual = (&chan - &proj).norm() / chan.norm();
            assert!(angle_residual < 1e-6, "residual {angle_residual}");
        }
    }

    #[test]
    fn project_sample_contracts() {
        let g = Grid2::new(5, 5).unwrap();
        let x = random_feature(g, 3, 11);
        let idq = ProjectionMatrix::identity(3);
        let same = project_sample(&x, &idq).unwrap();
        for (a, b) in same.channel_grids().iter().zip(x.channel_grids()) {
            assert_eq!(a, b);
        }
        // Column e_1 selects the first channel.
        let mut m = DMatrix::zeros(3, 1);
        m[(0, 0)] = 1.0;
        let q = ProjectionMatrix::from_matrix(m).unwrap();
        let first = project_sample(&x, &q).unwrap();
        assert_eq!(first.channel(0), x.channel(0));
        // Random Q against a scalar triple loop.
        let mut rng = SplitMix64::new(13);
        let qm = DMatrix::from_fn(3, 2, |_, _| rng.next_signed());
        let q = ProjectionMatrix::from_matrix(qm.clone()).unwrap();
        let out = project_sample(&x, &q).unwrap();
        for d in 0..2 {
            for r in 0..5 {
                for c in 0..5 {
                    let mut expect = 0.0;
                    for l in 0..3 {
                        expect += qm[(l, d)] * x.channel(l).at(r, c);
                    }
                    assert_relative_eq!(out.channel(d).at(r, c), expect, epsilon = 1e-12);
                }
            }
        }
        assert!(project_sample(&random_feature(g, 2, 1), &q).is_err());
    }

    #[test]
    fn sample_set_update_follows_decay_recurrence() {
        let g = Grid2::new(4, 4).unwrap();
        let y = make_gaussian_label(g, 1.0).unwrap();
        let mut set = SampleSet::new(10).unwrap();
        set.update(random_feature(g, 1, 1), y.clone(), 0.1).unwrap();
        assert_eq!(set.len(), 1);
        assert_relative_eq!(set.entries()[0].weight, 1.0);
        set.update(random_feature(g, 1, 2), y.clone(), 0.1).unwrap();
        set.update(random_feature(g, 1, 3), y.clone(), 0.1).unwrap();
        let weights: Vec<f64> = set.entries().iter().map(|e| e.weight).collect();
        // Hand recurrence: [1] -> [0.9, 0.1] -> [0.81, 0.09, 0.1].
        assert_relative_eq!(weights[0], 0.81, epsilon = 1e-12);
        assert_relative_eq!(weights[1], 0.09, epsilon = 1e-12);
        assert_relative_eq!(weights[2], 0.10, epsilon = 1e-12);
        assert_relative_eq!(set.weight_sum(), 1.0, epsilon = 1e-12);
        assert!(set.update(random_feature(g, 1, 4), y.clone(), 1.5).is_err());
    }

    #[test]
    fn sample_set_evicts_minimum_weight_on_overflow() {
        let g = Grid2::new(4, 4).unwrap();
        let y = make_gaussian_label(g, 1.0).unwrap();
        let mut set = SampleSet::new(3).unwrap();
        for seed in 0..4 {
            set.update(random_feature(g, 1, 100 + seed), y.clone(), 0.1)
                .unwrap();
        }
        assert_eq!(set.len(), 3);
        // Pre-eviction weights were [0.729, 0.081, 0.09, 0.1]: the second
        // sample holds the minimum (the first kept weight 1 from the
        // empty-set insertion and still dominates), so seed 101 goes.
        let expect = [100u64, 102, 103];
        for (e, seed) in set.entries().iter().zip(expect) {
            let reference = random_feature(g, 1, seed);
            assert_eq!(e.x.channel(0).values(), reference.channel(0).values());
        }
        assert_relative_eq!(set.weight_sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_set_breaks_weight_ties_by_age() {
        let g = Grid2::new(4, 4).unwrap();
        let y = make_gaussian_label(g, 1.0).unwrap();
        let mut set = SampleSet::new(2).unwrap();
        // eta = 0.5 makes the two oldest entries tie exactly.
        for seed in 0..3 {
            set.update(random_feature(g, 1, 200 + seed), y.clone(), 0.5)
                .unwrap();
        }
        assert_eq!(set.len(), 2);
        let expect = [201u64, 202];
        for (e, seed) in set.entries().iter().zip(expect) {
            let reference = random_feature(g, 1, seed);
            assert_eq!(e.x.channel(0).values(), reference.channel(0).values());
        }
    }

    #[test]
    fn solve_zk_limits_and_stationarity() {
        let g = Grid2::new(5, 5).unwrap();
        let x = random_feature(g, 2, 21);
        let y = make_gaussian_label(g, 1.0).unwrap();
        let f: Vec<RealGrid> = vec![
            random_feature(g, 1, 22).channel(0).clone(),
            random_feature(g, 1, 23).channel(0).clone(),
        ];
        let q = ProjectionMatrix::identity(2);
        let (alpha, tau) = (0.6, 1.3);
        // Zero mask: z_k = sqrt(alpha) * residual.
        let zero_mask = RealGrid::zeros(g);
        let z = solve_zk(&f, &q, &x, &y, alpha, &zero_mask, tau).unwrap();
        let resp = response_channels(&f, x.channel_grids()).unwrap();
        for i in 0..g.len() {
            let expect = alpha.sqrt() * (resp.values()[i] - y.data().values()[i]);
            assert_relative_eq!(z.values()[i], expect, epsilon = 1e-10);
        }
        // Zero residual: z_k = 0.
        let y_match = Label::from_grid(resp.clone(), 1.0).unwrap();
        let ones = ones_mask(g);
        let z0 = solve_zk(&f, &q, &x, &y_match, alpha, ones.data(), tau).unwrap();
        assert!(z0.max_abs() < 1e-12);
        // alpha = 0 is defined as zero.
        let z0 = solve_zk(&f, &q, &x, &y, 0.0, ones.data(), tau).unwrap();
        assert!(z0.max_abs() == 0.0);

        // Finite-difference stationarity of the relaxed z_k subobjective
        // 1/2 ||M z||^2 + tau/2 alpha ||R - z / sqrt(alpha)||^2.
        let mask = crate::masking::binary_mask(g, 2.0, 2.0).unwrap();
        let z = solve_zk(&f, &q, &x, &y, alpha, mask.data(), tau).unwrap();
        let sub = |zv: &RealGrid| -> f64 {
            let mz = mask.data().hadamard(zv);
            let mut pen = 0.0;
            for i in 0..g.len() {
                let r = resp.values()[i] - y.data().values()[i] - zv.values()[i] / alpha.sqrt();
                pen += r * r;
            }
            0.5 * mz.norm_sq() + 0.5 * tau * alpha * pen
        };
        let h = 1e-6;
        let mut max_grad = 0.0f64;
        for i in 0..g.len() {
            let mut plus = z.clone();
            plus.values_mut()[i] += h;
            let mut minus = z.clone();
            minus.values_mut()[i] -= h;
            max_grad = max_grad.max(((sub(&plus) - sub(&minus)) / (2.0 * h)).abs());
        }
        assert!(max_grad <= 1e-8, "max finite-difference gradient {max_grad}");
    }

    fn multi_config(tau0: f64, iters: usize, inner: usize) -> SolverConfig {
        SolverConfig {
            lambda: 0.0,
            tau0,
            mu0: 1.0,
            iters,
            tau_max: 1e9,
            mu_max: 1e9,
            growth: 1.0,
            delta: 1.4,
            inner_iters: inner,
            stop_tol: None,
        }
    }

    #[test]
    fn multi_matches_weighted_dense_oracle_at_large_tau() {
        let g = Grid2::new(8, 8).unwrap();
        let x = random_feature(g, 1, 313);
        let y = make_gaussian_label(g, 1.2).unwrap();
        let mask = ones_mask(g);
        let w = SpatialRegWeights::constant(g, 0.4).unwrap();
        let mut set = SampleSet::new(4).unwrap();
        set.update(x.clone(), y.clone(), 0.5).unwrap();
        let q = ProjectionMatrix::identity(1);
        // Penalty continuation: the naive alternation contracts at a rate
        // of only O(1/tau) once tau is large, so the limit is approached
        // by growing tau slowly while the blocks track the moving optimum.
        let cfg = SolverConfig {
            lambda: 0.0,
            tau0: 2.5,
            mu0: 1.0,
            iters: 1100,
            tau_max: 1e4,
            mu_max: 1e9,
            growth: 1.01,
            delta: 1.4,
            inner_iters: 150,
            stop_tol: None,
        };
        let out = train_masked_multi(
            &set,
            &mask,
            &q,
            &w,
            InterpolationKernel::Identity,
            &cfg,
            None,
            ExecMode::default(),
        )
        .unwrap();
        let dense = dense_solve_spatially_weighted(
            &[WeightedSample {
                x: &x,
                y: &y,
                alpha: 1.0,
            }],
            &mask,
            w.data(),
        )
        .unwrap();
        let ours = eval_masked_multi_objective(
            out.bank.spatial(),
            &[WeightedSample {
                x: &x,
                y: &y,
                alpha: 1.0,
            }],
            &mask,
            w.data(),
            0.0,
            0.0,
        )
        .unwrap();
        let gap = (ours - dense.objective) / dense.objective;
        assert!(gap.abs() <= 1e-3, "relative gap {gap:.3e}");
    }

    #[test]
    fn relaxed_objective_descends_within_alternations() {
        let g = Grid2::new(8, 8).unwrap();
        let y = make_gaussian_label(g, 1.0).unwrap();
        let mask = crate::masking::binary_mask(g, 4.0, 4.0).unwrap();
        let w = SpatialRegWeights::radial(g, 4.0, 4.0, 0.1, 3.0).unwrap();
        let mut set = SampleSet::new(5).unwrap();
        for seed in 0..3 {
            set.update(random_feature(g, 2, 400 + seed), y.clone(), 0.3)
                .unwrap();
        }
        let q = ProjectionMatrix::identity(2);
        let cfg = SolverConfig {
            iters: 6,
            inner_iters: 100,
            ..SolverConfig::multi_base()
        };
        let out = train_masked_multi(
            &set,
            &mask,
            &q,
            &w,
            InterpolationKernel::default(),
            &cfg,
            None,
            ExecMode::default(),
        )
        .unwrap();
        for (b, a) in out
            .trace
            .relaxed_before
            .iter()
            .zip(&out.trace.relaxed_after)
        {
            assert!(a <= &(b + 1e-10), "before {b}, after {a}");
        }
        // Fixed tau (growth 1.0 in multi_base? no: growth defaults 1.05) -
        // also check full-sequence monotonicity under constant tau.
        let cfg_fixed = multi_config(2.2, 6, 100);
        let out = train_masked_multi(
            &set,
            &mask,
            &q,
            &w,
            InterpolationKernel::default(),
            &cfg_fixed,
            None,
            ExecMode::default(),
        )
        .unwrap();
        for win in out.trace.relaxed_after.windows(2) {
            assert!(win[1] <= win[0] + 1e-10);
        }
    }

    #[test]
    fn duplicated_samples_match_single_sample() {
        let g = Grid2::new(6, 6).unwrap();
        let x = random_feature(g, 2, 555);
        let y = make_gaussian_label(g, 1.0).unwrap();
        let mask = crate::masking::binary_mask(g, 3.0, 3.0).unwrap();
        let w = SpatialRegWeights::constant(g, 0.5).unwrap();
        let q = ProjectionMatrix::identity(2);
        let cfg = multi_config(2.5, 4, 150);

        let mut single = SampleSet::new(8).unwrap();
        single.update(x.clone(), y.clone(), 0.5).unwrap();
        let a = train_masked_multi(
            &single,
            &mask,
            &q,
            &w,
            InterpolationKernel::Identity,
            &cfg,
            None,
            ExecMode::default(),
        )
        .unwrap();

        let mut dup = SampleSet::new(8).unwrap();
        for _ in 0..5 {
            dup.update(x.clone(), y.clone(), 0.2).unwrap();
        }
        // Force exactly uniform weights.
        let b = {
            let mut uniform = SampleSet::new(8).unwrap();
            for _ in 0..5 {
                uniform.update(x.clone(), y.clone(), 0.2).unwrap();
            }
            // Weights after repeated equal insertions are not exactly
            // uniform; rebuild with explicit weights through update order
            // does not matter for identical samples since the objective
            // only sees sum alpha_k = 1.
            train_masked_multi(
                &uniform,
                &mask,
                &q,
                &w,
                InterpolationKernel::Identity,
                &cfg,
                None,
                ExecMode::default(),
            )
            .unwrap()
        };
        for (fa, fb) in a.bank.spatial().iter().zip(b.bank.spatial()) {
            for (u, v) in fa.values().iter().zip(fb.values()) {
                assert_relative_eq!(u, v, epsilon = 1e-7);
            }
        }
        let _ = dup;
    }

    #[test]
    fn weight_simplex_invariant_holds() {
        let g = Grid2::new(4, 4).unwrap();
        let y = make_gaussian_label(g, 1.0).unwrap();
        let mut set = SampleSet::new(5).unwrap();
        for seed in 0..12 {
            set.update(random_feature(g, 1, seed), y.clone(), 0.02).unwrap();
            assert!((set.weight_sum() - 1.0).abs() <= 1e-12);
            assert!(set.entries().iter().all(|e| e.weight >= 0.0));
            assert!(set.len() <= 5);
        }
    }
}
