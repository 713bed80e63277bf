//! 2-D DFT engine and circulant-convolution algebra.
//!
//! The forward transform is the unnormalized DFT (equal to sqrt(T) times
//! the unitary DFT); the inverse divides by T = rows * cols. Under this
//! scaling Parseval reads `<a, b>_spatial * T = <dft2(a), dft2(b)>`, and
//! the convolution theorem holds without extra constants:
//! `circ_conv(a, b) = idft2(dft2(a) .* dft2(b))`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::solver_single::FilterBank;
use crate::types::{ComplexGrid, FeatureMap, Grid2, RealGrid};

thread_local! {
    static PLAN_CACHE: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLAN_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                FftPlanner::new().plan_fft(len, dir)
            })
            .clone()
    })
}

fn fft2_in_place(data: &mut [Complex64], grid: Grid2, inverse: bool) {
    let (rows, cols) = (grid.rows, grid.cols);
    let row_plan = plan(cols, inverse);
    for row in data.chunks_mut(cols) {
        row_plan.process(row);
    }
    let col_plan = plan(rows, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_plan.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}

/// Unnormalized forward 2-D DFT of a real grid.
pub fn dft2(g: &RealGrid) -> ComplexGrid {
    let mut data: Vec<Complex64> = g.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut data, g.grid(), false);
    ComplexGrid::from_vec(g.grid(), data).expect("shape preserved")
}

/// Forward 2-D DFT of an already-complex grid.
pub fn dft2_complex(g: &ComplexGrid) -> ComplexGrid {
    let mut data = g.values().to_vec();
    fft2_in_place(&mut data, g.grid(), false);
    ComplexGrid::from_vec(g.grid(), data).expect("shape preserved")
}

/// Inverse 2-D DFT back to a real grid (divides by T).
///
/// The input must be (numerically) conjugate symmetric; a relative
/// imaginary residue above 1e-6 is reported as a numeric error.
pub fn idft2(s: &ComplexGrid) -> Result<RealGrid> {
    let grid = s.grid();
    let scale = 1.0 / grid.len() as f64;
    let mut data = s.values().to_vec();
    fft2_in_place(&mut data, grid, true);
    let mut max_re: f64 = 0.0;
    let mut max_im: f64 = 0.0;
    for v in &data {
        max_re = max_re.max((v.re * scale).abs());
        max_im = max_im.max((v.im * scale).abs());
    }
    if max_im > 1e-6 * max_re.max(1.0) {
        return Err(Error::Numeric(format!(
            "idft2 imaginary residue {max_im:.3e} exceeds 1e-6 relative (max real {max_re:.3e})"
        )));
    }
    Ok(RealGrid::from_vec(grid, data.iter().map(|v| v.re * scale).collect()).expect("shape preserved"))
}

/// Inverse 2-D DFT keeping the complex result (divides by T).
pub fn idft2_complex(s: &ComplexGrid) -> ComplexGrid {
    let grid = s.grid();
    let scale = 1.0 / grid.len() as f64;
    let mut data = s.values().to_vec();
    fft2_in_place(&mut data, grid, true);
    for v in &mut data {
        *v *= scale;
    }
    ComplexGrid::from_vec(grid, data).expect("shape preserved")
}

/// Circular convolution of two equally sized grids via the DFT.
pub fn circ_conv(a: &RealGrid, b: &RealGrid) -> Result<RealGrid> {
    if a.grid() != b.grid() {
        return Err(Error::mismatch(format!(
            "circ_conv operands {} vs {}",
            a.grid(),
            b.grid()
        )));
    }
    let ah = dft2(a);
    let bh = dft2(b);
    let prod: Vec<Complex64> = ah
        .values()
        .iter()
        .zip(bh.values())
        .map(|(x, y)| x * y)
        .collect();
    idft2(&ComplexGrid::from_vec(a.grid(), prod)?)
}

/// Response map sum_l f_l * x_l computed in the frequency domain.
pub fn response(f: &FilterBank, x: &FeatureMap) -> Result<RealGrid> {
    if f.channels() != x.channels() || f.grid() != x.grid() {
        return Err(Error::mismatch(format!(
            "filter {}ch {} vs sample {}ch {}",
            f.channels(),
            f.grid(),
            x.channels(),
            x.grid()
        )));
    }
    response_channels(f.spatial(), x.channel_grids())
}

/// Response map for raw channel lists (same contract as [`response`]).
pub fn response_channels(f: &[RealGrid], x: &[RealGrid]) -> Result<RealGrid> {
    if f.len() != x.len() || f.is_empty() {
        return Err(Error::mismatch(format!(
            "channel count {} vs {}",
            f.len(),
            x.len()
        )));
    }
    let grid = f[0].grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (fl, xl) in f.iter().zip(x) {
        if fl.grid() != grid || xl.grid() != grid {
            return Err(Error::mismatch("response channels must share one grid"));
        }
        let fh = dft2(fl);
        let xh = dft2(xl);
        for (a, (u, v)) in acc.iter_mut().zip(fh.values().iter().zip(xh.values())) {
            *a += u * v;
        }
    }
    idft2(&ComplexGrid::from_vec(grid, acc)?)
}

/// Response spectrum sum_l fhat_l .* xhat_l for precomputed spectra.
pub fn response_spectrum(fhat: &[ComplexGrid], xhat: &[ComplexGrid]) -> ComplexGrid {
    debug_assert_eq!(fhat.len(), xhat.len());
    let grid = fhat[0].grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (fl, xl) in fhat.iter().zip(xhat) {
        for (a, (u, v)) in acc.iter_mut().zip(fl.values().iter().zip(xl.values())) {
            *a += u * v;
        }
    }
    ComplexGrid::from_vec(grid, acc).expect("shape preserved")
}

/// L-channel spectrum bank (the frequency-domain mirror of a FeatureMap).
#[derive(Clone, Debug)]
pub struct SpectrumBank {
    grid: Grid2,
    channels: Vec<ComplexGrid>,
}

impl SpectrumBank {
    pub fn new(channels: Vec<ComplexGrid>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("spectrum bank needs at least one channel"))?;
        let grid = first.grid();
        for ch in &channels {
            if ch.grid() != grid {
                return Err(Error::mismatch("spectrum bank channels must share one grid"));
            }
        }
        Ok(SpectrumBank { grid, channels })
    }

    pub fn from_feature_map(x: &FeatureMap) -> Self {
        let channels = x.channel_grids().iter().map(dft2).collect();
        SpectrumBank {
            grid: x.grid(),
            channels,
        }
    }

    pub fn from_grids(grids: &[RealGrid]) -> Self {
        let channels: Vec<ComplexGrid> = grids.iter().map(dft2).collect();
        SpectrumBank {
            grid: grids[0].grid(),
            channels,
        }
    }

    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, l: usize) -> &ComplexGrid {
        &self.channels[l]
    }

    pub fn channel_grids(&self) -> &[ComplexGrid] {
        &self.channels
    }
}

/// Spatial inner product evaluated in the frequency domain via Parseval:
/// `<a, b>_spatial = Re <ahat, bhat> / T`.
pub fn parseval_dot(ahat: &ComplexGrid, bhat: &ComplexGrid) -> f64 {
    debug_assert_eq!(ahat.grid(), bhat.grid());
    let t = ahat.grid().len() as f64;
    ahat.values()
        .iter()
        .zip(bhat.values())
        .map(|(u, v)| (u * v.conj()).re)
        .sum::<f64>()
        / t
}

/// Spatial squared norm of the signal whose spectrum is `shat`.
pub fn parseval_norm_sq(shat: &ComplexGrid) -> f64 {
    let t = shat.grid().len() as f64;
    shat.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / t
}
