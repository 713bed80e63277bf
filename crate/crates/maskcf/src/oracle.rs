//! Dense brute-force reference solvers and literal objective evaluators.
//!
//! Everything here works in the spatial domain with explicitly
//! materialized circulant matrices and O(T^2) convolution sums. None of it
//! shares a code path with the frequency-domain solvers it certifies; that
//! independence is the point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::masking::SpatialMask;
use crate::solver_single::CropRegion;
use crate::types::{FeatureMap, Grid2, Label, RealGrid};

/// Hard cap so an accidental full-size instance cannot hang a test run.
pub const MAX_DENSE_CELLS: usize = 4096;

/// Direct O(T^2) cyclic convolution. Reference implementation for the FFT
/// route; deliberately naive.
pub fn direct_circ_conv(a: &RealGrid, b: &RealGrid) -> Result<RealGrid> {
    if a.grid() != b.grid() {
        return Err(Error::mismatch(format!(
            "direct_circ_conv operands {} vs {}",
            a.grid(),
            b.grid()
        )));
    }
    let g = a.grid();
    let (h, w) = (g.rows as i64, g.cols as i64);
    Ok(RealGrid::from_fn(g, |r, c| {
        let mut acc = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let br = (r as i64 - i as i64).rem_euclid(h) as usize;
                let bc = (c as i64 - j as i64).rem_euclid(w) as usize;
                acc += a.at(i, j) * b.at(br, bc);
            }
        }
        acc
    }))
}

/// Explicit vectorization of the masked, cropped CF objective
/// `1/2 ||D_M (X g - y)||^2 + lambda/2 ||g||^2`, where column (l, d) of X
/// is the cyclic shift of channel l aligned with crop cell d.
#[derive(Clone, Debug)]
pub struct DenseProblem {
    grid: Grid2,
    crop: CropRegion,
    channels: usize,
    x_mat: DMatrix<f64>,
    mask: DVector<f64>,
    y: DVector<f64>,
    lambda: f64,
}

impl DenseProblem {
    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    pub fn crop(&self) -> CropRegion {
        self.crop
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn x_mat(&self) -> &DMatrix<f64> {
        &self.x_mat
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Objective value at an arbitrary coefficient vector.
    pub fn objective_at(&self, g: &DVector<f64>) -> f64 {
        let residual = &self.x_mat * g - &self.y;
        let data: f64 = residual
            .iter()
            .zip(self.mask.iter())
            .map(|(r, m)| (m * r) * (m * r))
            .sum();
        0.5 * data + 0.5 * self.lambda * g.norm_squared()
    }

    /// Flattens per-channel crop grids into the coefficient ordering used
    /// by the columns of X (channel-major, crop cells row-major).
    pub fn vectorize(&self, g: &[RealGrid]) -> Result<DVector<f64>> {
        if g.len() != self.channels {
            return Err(Error::mismatch(format!(
                "expected {} channels, got {}",
                self.channels,
                g.len()
            )));
        }
        let d = self.crop.rows * self.crop.cols;
        let mut v = DVector::zeros(self.channels * d);
        for (l, ch) in g.iter().enumerate() {
            if ch.grid().rows != self.crop.rows || ch.grid().cols != self.crop.cols {
                return Err(Error::mismatch("crop grid shape mismatch"));
            }
            for (i, &val) in ch.values().iter().enumerate() {
                v[l * d + i] = val;
            }
        }
        Ok(v)
    }

    fn unvectorize(&self, v: &DVector<f64>) -> Vec<RealGrid> {
        let crop_grid = Grid2 {
            rows: self.crop.rows,
            cols: self.crop.cols,
        };
        let d = crop_grid.len();
        (0..self.channels)
            .map(|l| {
                RealGrid::from_vec(crop_grid, (0..d).map(|i| v[l * d + i]).collect())
                    .expect("shape by construction")
            })
            .collect()
    }
}

/// Materializes the circulant system for one sample, mask, and crop.
pub fn build_dense(
    x: &FeatureMap,
    m: &SpatialMask,
    y: &Label,
    crop: &CropRegion,
    lambda: f64,
) -> Result<DenseProblem> {
    let grid = x.grid();
    if grid.len() > MAX_DENSE_CELLS {
        return Err(Error::invalid(format!(
            "dense oracle refuses grids above {MAX_DENSE_CELLS} cells, got {}",
            grid.len()
        )));
    }
    if m.grid() != grid || y.grid() != grid {
        return Err(Error::mismatch("sample, mask, and label must share one grid"));
    }
    crop.validate(grid)?;
    let t = grid.len();
    let d = crop.rows * crop.cols;
    let l_count = x.channels();
    let mut x_mat = DMatrix::zeros(t, l_count * d);
    for l in 0..l_count {
        let ch = x.channel(l);
        for (di, (r, c)) in crop.cells_on(grid).enumerate() {
            let col = ch.cyclic_shift(r as i64, c as i64);
            for (row_idx, &v) in col.values().iter().enumerate() {
                x_mat[(row_idx, l * d + di)] = v;
            }
        }
    }
    Ok(DenseProblem {
        grid,
        crop: *crop,
        channels: l_count,
        x_mat,
        mask: DVector::from_iterator(t, m.data().values().iter().copied()),
        y: DVector::from_iterator(t, y.data().values().iter().copied()),
        lambda,
    })
}

/// Exact minimizer of the dense problem via the normal equations.
pub struct DenseSolution {
    pub g: Vec<RealGrid>,
    pub coefficients: DVector<f64>,
    pub objective: f64,
}

pub fn dense_solve_masked_cf(p: &DenseProblem) -> Result<DenseSolution> {
    let n = p.x_mat.ncols();
    // Rows scaled by the mask: D_M X and D_M y.
    let xw = {
        let mut xw = p.x_mat.clone();
        for (mut row, m) in xw.row_iter_mut().zip(p.mask.iter()) {
            row *= *m;
        }
        xw
    };
    let yw = p.y.component_mul(&p.mask);
    let mut normal = xw.transpose() * &xw;
    for i in 0..n {
        normal[(i, i)] += p.lambda;
    }
    let rhs = xw.transpose() * yw;
    let coefficients = solve_spd(normal, rhs)?;
    let objective = p.objective_at(&coefficients);
    Ok(DenseSolution {
        g: p.unvectorize(&coefficients),
        coefficients,
        objective,
    })
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("dense normal matrix is singular".into()))
}

/// One base image of a multi-base dense instance.
pub struct WeightedSample<'a> {
    pub x: &'a FeatureMap,
    pub y: &'a Label,
    pub alpha: f64,
}

/// Exact minimizer and optimum of the spatially weighted multi-base
/// objective
/// `1/2 sum_k alpha_k ||M (X_k f - y_k)||^2 + 1/2 sum_d ||w f_d||^2`
/// with full filter support (no crop).
pub fn dense_solve_spatially_weighted(
    samples: &[WeightedSample<'_>],
    m: &SpatialMask,
    w: &RealGrid,
) -> Result<DenseSolution> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("need at least one sample"))?;
    let grid = first.x.grid();
    let channels = first.x.channels();
    if grid.len() > MAX_DENSE_CELLS {
        return Err(Error::invalid(format!(
            "dense oracle refuses grids above {MAX_DENSE_CELLS} cells"
        )));
    }
    if w.grid() != grid || m.grid() != grid {
        return Err(Error::mismatch("mask and weights must live on the sample grid"));
    }
    let full = CropRegion::full(grid);
    let n = channels * grid.len();
    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut problems = Vec::new();
    for s in samples {
        if s.x.grid() != grid || s.x.channels() != channels || s.y.grid() != grid {
            return Err(Error::mismatch("samples must share grid and channel count"));
        }
        let p = build_dense(s.x, m, s.y, &full, 0.0)?;
        let mut xw = p.x_mat.clone();
        for (mut row, mv) in xw.row_iter_mut().zip(p.mask.iter()) {
            row *= *mv;
        }
        let yw = p.y.component_mul(&p.mask);
        normal += (xw.transpose() * &xw) * s.alpha;
        rhs += xw.transpose() * yw * s.alpha;
        problems.push(p);
    }
    for l in 0..channels {
        for (i, &wv) in w.values().iter().enumerate() {
            normal[(l * grid.len() + i, l * grid.len() + i)] += wv * wv;
        }
    }
    let coefficients = solve_spd(normal, rhs)?;
    let g = problems[0].unvectorize(&coefficients);
    let objective = eval_weighted_objective_at(&problems, samples, w, &coefficients);
    Ok(DenseSolution {
        g,
        coefficients,
        objective,
    })
}

fn eval_weighted_objective_at(
    problems: &[DenseProblem],
    samples: &[WeightedSample<'_>],
    w: &RealGrid,
    coeffs: &DVector<f64>,
) -> f64 {
    let mut total = 0.0;
    for (p, s) in problems.iter().zip(samples) {
        let residual = &p.x_mat * coeffs - &p.y;
        let data: f64 = residual
            .iter()
            .zip(p.mask.iter())
            .map(|(r, m)| (m * r) * (m * r))
            .sum();
        total += 0.5 * s.alpha * data;
    }
    let t = w.grid().len();
    let channels = coeffs.len() / t;
    for l in 0..channels {
        for (i, &wv) in w.values().iter().enumerate() {
            let v = coeffs[l * t + i];
            total += 0.5 * (wv * v) * (wv * v);
        }
    }
    total
}

/// Literal spatial-domain evaluation of the masked single-base objective
/// at the constrained point f = embed(g):
/// `1/2 ||M (sum_l x_l * embed(g_l) - y)||^2 + lambda/2 ||g||^2`.
/// Convolutions are direct cyclic sums; no FFT is involved.
pub fn eval_masked_objective_cropped(
    g: &[RealGrid],
    crop: &CropRegion,
    x: &FeatureMap,
    y: &Label,
    m: &SpatialMask,
    lambda: f64,
) -> Result<f64> {
    if g.len() != x.channels() {
        return Err(Error::mismatch(format!(
            "filter has {} channels, sample {}",
            g.len(),
            x.channels()
        )));
    }
    let grid = x.grid();
    if m.grid() != grid || y.grid() != grid {
        return Err(Error::mismatch("shapes must agree"));
    }
    let mut resp = RealGrid::zeros(grid);
    let mut g_norm_sq = 0.0;
    for (gl, xl) in g.iter().zip(x.channel_grids()) {
        let f_l = crop.embed(gl, grid)?;
        resp = resp.add_scaled(&direct_circ_conv(&f_l, xl)?, 1.0);
        g_norm_sq += gl.norm_sq();
    }
    let mut data = 0.0;
    for ((r, yv), mv) in resp
        .values()
        .iter()
        .zip(y.data().values())
        .zip(m.data().values())
    {
        let e = mv * (r - yv);
        data += e * e;
    }
    Ok(0.5 * data + 0.5 * lambda * g_norm_sq)
}

/// Literal spatial-domain evaluation of the masked full-support objective
/// `1/2 ||M (sum_l f_l * x_l - y)||^2 + lambda/2 ||f||^2`.
pub fn eval_masked_objective(
    f: &[RealGrid],
    x: &FeatureMap,
    y: &Label,
    m: &SpatialMask,
    lambda: f64,
) -> Result<f64> {
    let grid = x.grid();
    let full = CropRegion::full(grid);
    // Full support: f and g coincide.
    eval_masked_objective_cropped(f, &full, x, y, m, lambda)
}

/// Frequency-domain twin of [`eval_masked_objective_cropped`]: the response
/// is computed through the DFT and every norm through Parseval. Used to
/// cross-check the spatial evaluator.
pub fn eval_masked_objective_freq(
    g: &[RealGrid],
    crop: &CropRegion,
    x: &FeatureMap,
    y: &Label,
    m: &SpatialMask,
    lambda: f64,
) -> Result<f64> {
    use crate::frequency::{dft2, parseval_norm_sq, response_channels};
    let grid = x.grid();
    let f: Result<Vec<RealGrid>> = g.iter().map(|gl| crop.embed(gl, grid)).collect();
    let f = f?;
    let resp = response_channels(&f, x.channel_grids())?;
    let masked = m.data().hadamard(&resp.add_scaled(y.data(), -1.0));
    let data = parseval_norm_sq(&dft2(&masked));
    let mut g_norm_sq = 0.0;
    for gl in g {
        // ||g||^2 via Parseval on the embedded channel.
        g_norm_sq += parseval_norm_sq(&dft2(&crop.embed(gl, grid)?));
    }
    Ok(0.5 * data + 0.5 * lambda * g_norm_sq)
}

/// Literal spatial-domain evaluation of the masked multi-base objective
/// `1/2 sum_k alpha_k ||M (sum_d f_d * x_{k,d} - y_k)||^2
///  + 1/2 sum_d ||w f_d||^2 + lambda_q/2 q_norm_sq`.
/// Samples are expected already projected to the filter's channel count.
pub fn eval_masked_multi_objective(
    f: &[RealGrid],
    samples: &[WeightedSample<'_>],
    m: &SpatialMask,
    w: &RealGrid,
    lambda_q: f64,
    q_norm_sq: f64,
) -> Result<f64> {
    let grid = m.grid();
    let mut total = 0.5 * lambda_q * q_norm_sq;
    for fd in f {
        if fd.grid() != grid {
            return Err(Error::mismatch("filter channels must live on the mask grid"));
        }
        total += 0.5 * w.hadamard(fd).norm_sq();
    }
    for s in samples {
        if s.x.channels() != f.len() {
            return Err(Error::mismatch(format!(
                "sample has {} channels, filter {}",
                s.x.channels(),
                f.len()
            )));
        }
        let mut resp = RealGrid::zeros(grid);
        for (fd, xd) in f.iter().zip(s.x.channel_grids()) {
            resp = resp.add_scaled(&direct_circ_conv(fd, xd)?, 1.0);
        }
        let mut data = 0.0;
        for ((r, yv), mv) in resp
            .values()
            .iter()
            .zip(s.y.data().values())
            .zip(m.data().values())
        {
            let e = mv * (r - yv);
            data += e * e;
        }
        total += 0.5 * s.alpha * data;
    }
    Ok(total)
}
