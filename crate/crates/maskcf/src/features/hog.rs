//! 31-channel Felzenszwalb HOG.
//!
//! Channels 0..17 are contrast-sensitive orientation bins (18 directions
//! over the full circle), 18..26 contrast-insensitive bins (9 directions
//! over the half circle), 27..30 the four block-normalization texture
//! sums. Gradients come from centered differences on luminance with
//! replicated borders; histogram values are block-normalized against the
//! four 2x2 cell neighborhoods and truncated at 0.2.

use super::ImagePatch;
use crate::error::{Error, Result};
use crate::types::{FeatureMap, Grid2, RealGrid};

pub const HOG_CHANNELS: usize = 31;
const ORIENTATIONS: usize = 9;
const TRUNCATION: f64 = 0.2;
const NORM_EPS: f64 = 1e-4;
/// 1 / sqrt(18): scale of the texture-sum channels.
const TEXTURE_SCALE: f64 = 0.235_702_260_395_515_84;

pub fn extract_hog(patch: &ImagePatch, cell: usize) -> Result<FeatureMap> {
    if cell == 0 {
        return Err(Error::invalid("cell size must be >= 1"));
    }
    let lum = patch.pixels.luminance();
    let (ph, pw) = (lum.grid().rows, lum.grid().cols);
    if ph < 3 * cell || pw < 3 * cell {
        return Err(Error::invalid(format!(
            "patch {ph}x{pw} too small for HOG with cell {cell} (needs >= {})",
            3 * cell
        )));
    }
    if ph % cell != 0 || pw % cell != 0 {
        return Err(Error::invalid(format!(
            "cell size {cell} must divide the patch size {ph}x{pw}"
        )));
    }
    let cy = ph / cell;
    let cx = pw / cell;

    // Orientation half-circle directions.
    let (uu, vv): (Vec<f64>, Vec<f64>) = (0..ORIENTATIONS)
        .map(|o| {
            let a = std::f64::consts::PI * o as f64 / ORIENTATIONS as f64;
            (a.cos(), a.sin())
        })
        .unzip();

    // Orientation histograms: hist[(i * cx + j) * 18 + o].
    let mut hist = vec![0.0f64; cy * cx * 2 * ORIENTATIONS];
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    for r in 0..ph {
        for c in 0..pw {
            let gx = lum.at(r, clamp(c as i64 + 1, pw)) - lum.at(r, clamp(c as i64 - 1, pw));
            let gy = lum.at(clamp(r as i64 + 1, ph), c) - lum.at(clamp(r as i64 - 1, ph), c);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // Snap to the best half-circle direction, signed.
            let mut best = 0.0;
            let mut best_o = 0usize;
            for o in 0..ORIENTATIONS {
                let dot = gx * uu[o] + gy * vv[o];
                if dot > best {
                    best = dot;
                    best_o = o;
                } else if -dot > best {
                    best = -dot;
                    best_o = o + ORIENTATIONS;
                }
            }
            // Bilinear spatial interpolation into the cell grid.
            let yp = (r as f64 + 0.5) / cell as f64 - 0.5;
            let xp = (c as f64 + 0.5) / cell as f64 - 0.5;
            let iy = yp.floor();
            let ix = xp.floor();
            let wy1 = yp - iy;
            let wx1 = xp - ix;
            for (dy, wy) in [(0i64, 1.0 - wy1), (1, wy1)] {
                for (dx, wx) in [(0i64, 1.0 - wx1), (1, wx1)] {
                    let ci = iy as i64 + dy;
                    let cj = ix as i64 + dx;
                    if ci >= 0 && (ci as usize) < cy && cj >= 0 && (cj as usize) < cx {
                        hist[(ci as usize * cx + cj as usize) * 2 * ORIENTATIONS + best_o] +=
                            mag * wy * wx;
                    }
                }
            }
        }
    }

    // Per-cell gradient energy over insensitive orientations.
    let mut energy = vec![0.0f64; cy * cx];
    for i in 0..cy {
        for j in 0..cx {
            let base = (i * cx + j) * 2 * ORIENTATIONS;
            let mut e = 0.0;
            for o in 0..ORIENTATIONS {
                let s = hist[base + o] + hist[base + o + ORIENTATIONS];
                e += s * s;
            }
            energy[i * cx + j] = e;
        }
    }
    let n_at = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i as usize >= cy || j as usize >= cx {
            0.0
        } else {
            energy[i as usize * cx + j as usize]
        }
    };

    let grid = Grid2::new(cy, cx)?;
    let mut channels: Vec<RealGrid> = (0..HOG_CHANNELS).map(|_| RealGrid::zeros(grid)).collect();
    for i in 0..cy as i64 {
        for j in 0..cx as i64 {
            let norms = [
                1.0 / (n_at(i, j) + n_at(i, j + 1) + n_at(i + 1, j) + n_at(i + 1, j + 1) + NORM_EPS)
                    .sqrt(),
                1.0 / (n_at(i, j) + n_at(i, j + 1) + n_at(i - 1, j) + n_at(i - 1, j + 1) + NORM_EPS)
                    .sqrt(),
                1.0 / (n_at(i, j) + n_at(i, j - 1) + n_at(i + 1, j) + n_at(i + 1, j - 1) + NORM_EPS)
                    .sqrt(),
                1.0 / (n_at(i, j) + n_at(i, j - 1) + n_at(i - 1, j) + n_at(i - 1, j - 1) + NORM_EPS)
                    .sqrt(),
            ];
            let base = (i as usize * cx + j as usize) * 2 * ORIENTATIONS;
            let mut texture = [0.0f64; 4];
            for o in 0..2 * ORIENTATIONS {
                let h = hist[base + o];
                let mut acc = 0.0;
                for (t, n) in texture.iter_mut().zip(&norms) {
                    let v = (h * n).min(TRUNCATION);
                    acc += v;
                    *t += v;
                }
                channels[o].set(i as usize, j as usize, 0.5 * acc);
            }
            for o in 0..ORIENTATIONS {
                let h = hist[base + o] + hist[base + o + ORIENTATIONS];
                let mut acc = 0.0;
                for n in &norms {
                    acc += (h * n).min(TRUNCATION);
                }
                channels[2 * ORIENTATIONS + o].set(i as usize, j as usize, 0.5 * acc);
            }
            for (t_idx, t) in texture.iter().enumerate() {
                channels[27 + t_idx].set(i as usize, j as usize, TEXTURE_SCALE * t);
            }
        }
    }
    FeatureMap::new(channels)
}
