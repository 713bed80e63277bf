//! Cosine windows and the binary / Gaussian residual masks.
//!
//! The cosine window multiplies the *sample* before training (the classic
//! boundary-discontinuity device this toolkit removes). The binary and
//! Gaussian masks instead weight the per-cell training *residual*: a cell
//! at centered offset (x, y) keeps its weight only while |x| <= H/2 - h/2
//! and |y| <= W/2 - w/2, i.e. while the cyclic shift it represents is a
//! real image patch for an h x w target in an H x W base region.

use crate::error::{Error, Result};
use crate::types::{offset_of_index, Grid2, RealGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Cosine,
    Binary,
    Gaussian,
    Ones,
}

/// Nonnegative per-cell weight grid with values in [0, 1].
#[derive(Clone, Debug)]
pub struct SpatialMask {
    data: RealGrid,
    kind: MaskKind,
    /// Target extent (h, w) in cells; present for binary/gaussian kinds.
    target: Option<(f64, f64)>,
}

impl SpatialMask {
    pub fn data(&self) -> &RealGrid {
        &self.data
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn target(&self) -> Option<(f64, f64)> {
        self.target
    }

    pub fn grid(&self) -> Grid2 {
        self.data.grid()
    }

    /// Fraction of cells with nonzero weight.
    pub fn support_fraction(&self) -> f64 {
        let nz = self.data.values().iter().filter(|&&v| v != 0.0).count();
        nz as f64 / self.data.grid().len() as f64
    }
}

/// All-ones mask (no residual reweighting).
pub fn ones_mask(grid: Grid2) -> SpatialMask {
    SpatialMask {
        data: RealGrid::from_fn(grid, |_, _| 1.0),
        kind: MaskKind::Ones,
        target: None,
    }
}

/// Separable Hann window: c(i, j) = sin^2(pi i / (H-1)) sin^2(pi j / (W-1)).
/// Zero on the outermost rows and columns, maximal at the center.
pub fn cosine_window(grid: Grid2) -> Result<SpatialMask> {
    if grid.rows < 2 || grid.cols < 2 {
        return Err(Error::invalid(format!(
            "cosine window needs at least 2 cells per axis, got {grid}"
        )));
    }
    let hann = |i: usize, n: usize| {
        if i == 0 || i == n - 1 {
            return 0.0;
        }
        let s = (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin();
        s * s
    };
    let data = RealGrid::from_fn(grid, |r, c| hann(r, grid.rows) * hann(c, grid.cols));
    Ok(SpatialMask {
        data,
        kind: MaskKind::Cosine,
        target: None,
    })
}

fn check_target(grid: Grid2, h: f64, w: f64) -> Result<()> {
    if !(h > 0.0 && w > 0.0) {
        return Err(Error::invalid(format!("target extent must be positive, got {h}x{w}")));
    }
    if h > grid.rows as f64 || w > grid.cols as f64 {
        return Err(Error::invalid(format!(
            "target {h}x{w} exceeds grid {grid}"
        )));
    }
    Ok(())
}

#[inline]
fn in_support(grid: Grid2, r: usize, c: usize, h: f64, w: f64) -> bool {
    // Real-arithmetic inequality; boundary ties are inside the support.
    let x = offset_of_index(grid.rows, r) as f64;
    let y = offset_of_index(grid.cols, c) as f64;
    x.abs() <= grid.rows as f64 / 2.0 - h / 2.0 && y.abs() <= grid.cols as f64 / 2.0 - w / 2.0
}

/// Indicator of the boundary-continuous shift positions for an h x w
/// target: 1 where |x| <= H/2 - h/2 and |y| <= W/2 - w/2, else 0.
pub fn binary_mask(grid: Grid2, h: f64, w: f64) -> Result<SpatialMask> {
    check_target(grid, h, w)?;
    let data = RealGrid::from_fn(grid, |r, c| {
        if in_support(grid, r, c, h, w) {
            1.0
        } else {
            0.0
        }
    });
    Ok(SpatialMask {
        data,
        kind: MaskKind::Binary,
        target: Some((h, w)),
    })
}

/// Gaussian-shaped mask: exp(-(x/(h delta))^2 - (y/(w delta))^2) on the
/// binary-mask support, 0 outside. Larger delta decays slower; as
/// delta -> inf this degrades to the binary mask.
pub fn gaussian_mask(grid: Grid2, h: f64, w: f64, delta: f64) -> Result<SpatialMask> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    check_target(grid, h, w)?;
    let data = RealGrid::from_fn(grid, |r, c| {
        if in_support(grid, r, c, h, w) {
            let x = offset_of_index(grid.rows, r) as f64 / (h * delta);
            let y = offset_of_index(grid.cols, c) as f64 / (w * delta);
            (-(x * x) - y * y).exp()
        } else {
            0.0
        }
    });
    Ok(SpatialMask {
        data,
        kind: MaskKind::Gaussian,
        target: Some((h, w)),
    })
}

/// Element-wise product of a mask with a grid.
pub fn apply_mask(m: &SpatialMask, g: &RealGrid) -> Result<RealGrid> {
    if m.grid() != g.grid() {
        return Err(Error::mismatch(format!(
            "mask {} vs grid {}",
            m.grid(),
            g.grid()
        )));
    }
    Ok(m.data().hadamard(g))
}
