//! Image patches and dense feature extraction (grayscale, 31-channel HOG).

use crate::error::{Error, Result};
use crate::types::{BoundingBox, FeatureMap, Grid2, RealGrid};

pub mod hog;

/// Planar raster image with values in [0, 1]; 1 (luminance) or 3 (RGB)
/// channels.
#[derive(Clone, Debug)]
pub struct Raster {
    grid: Grid2,
    channels: Vec<RealGrid>,
}

impl Raster {
    pub fn new(channels: Vec<RealGrid>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("raster needs at least one channel"))?;
        let grid = first.grid();
        if channels.len() != 1 && channels.len() != 3 {
            return Err(Error::invalid(format!(
                "raster must have 1 or 3 channels, got {}",
                channels.len()
            )));
        }
        for ch in &channels {
            if ch.grid() != grid {
                return Err(Error::mismatch("raster channels must share one grid"));
            }
        }
        Ok(Raster { grid, channels })
    }

    pub fn grid(&self) -> Grid2 {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, i: usize) -> &RealGrid {
        &self.channels[i]
    }

    /// Rec. 601 luminance (identity for single-channel rasters).
    pub fn luminance(&self) -> RealGrid {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let (r, g, b) = (&self.channels[0], &self.channels[1], &self.channels[2]);
        RealGrid::from_fn(self.grid, |i, j| {
            0.299 * r.at(i, j) + 0.587 * g.at(i, j) + 0.114 * b.at(i, j)
        })
    }

    /// Bilinear resize to `rows x cols`.
    pub fn resize_bilinear(&self, rows: usize, cols: usize) -> Result<Raster> {
        let out_grid = Grid2::new(rows, cols)?;
        let channels = self
            .channels
            .iter()
            .map(|ch| resize_channel_bilinear(ch, out_grid))
            .collect();
        Raster::new(channels)
    }
}

fn resize_channel_bilinear(ch: &RealGrid, out: Grid2) -> RealGrid {
    let (ih, iw) = (ch.grid().rows, ch.grid().cols);
    let ry = ih as f64 / out.rows as f64;
    let rx = iw as f64 / out.cols as f64;
    RealGrid::from_fn(out, |r, c| {
        // Pixel-center alignment.
        let sy = ((r as f64 + 0.5) * ry - 0.5).clamp(0.0, (ih - 1) as f64);
        let sx = ((c as f64 + 0.5) * rx - 0.5).clamp(0.0, (iw - 1) as f64);
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let x1 = (x0 + 1).min(iw - 1);
        let fy = sy - y0 as f64;
        let fx = sx - x0 as f64;
        ch.at(y0, x0) * (1.0 - fy) * (1.0 - fx)
            + ch.at(y0, x1) * (1.0 - fy) * fx
            + ch.at(y1, x0) * fy * (1.0 - fx)
            + ch.at(y1, x1) * fy * fx
    })
}

/// Square image patch cut around a target box.
#[derive(Clone, Debug)]
pub struct ImagePatch {
    pub pixels: Raster,
    pub source_bbox: BoundingBox,
}

/// Feature family selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Grayscale,
    Hog31,
}

/// Extraction parameters.
#[derive(Clone, Copy, Debug)]
pub struct FeatureConfig {
    /// Pixels per feature cell.
    pub cell: usize,
    pub kind: FeatureKind,
    /// Search-region side as a multiple of sqrt(target area).
    pub search_scale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            cell: 4,
            kind: FeatureKind::Hog31,
            search_scale: 5.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 {
            return Err(Error::invalid("cell size must be >= 1"));
        }
        if !(self.search_scale >= 1.0) {
            return Err(Error::invalid("search scale must be >= 1"));
        }
        Ok(())
    }
}

/// Cuts a square region of side `side` pixels centered on (cx, cy).
/// Pixels outside the image replicate the nearest edge.
pub fn crop_square(image: &Raster, cx: f64, cy: f64, side: usize) -> Result<ImagePatch> {
    if side == 0 {
        return Err(Error::invalid("patch side must be >= 1"));
    }
    let top = (cy - side as f64 / 2.0).round() as i64;
    let left = (cx - side as f64 / 2.0).round() as i64;
    let grid = Grid2::new(side, side)?;
    let channels = (0..image.channels())
        .map(|ci| {
            let src = image.channel(ci);
            RealGrid::from_fn(grid, |r, c| {
                let sr = (top + r as i64).clamp(0, image.grid().rows as i64 - 1) as usize;
                let sc = (left + c as i64).clamp(0, image.grid().cols as i64 - 1) as usize;
                src.at(sr, sc)
            })
        })
        .collect();
    Ok(ImagePatch {
        pixels: Raster::new(channels)?,
        source_bbox: BoundingBox::new(cx, cy, side as f64, side as f64)?,
    })
}

/// Cuts the square region of side `s * sqrt(w h)` centered on the box.
/// Pixels outside the image replicate the nearest edge.
pub fn crop_patch(image: &Raster, bbox: &BoundingBox, search_scale: f64) -> Result<ImagePatch> {
    if search_scale < 1.0 {
        return Err(Error::invalid("search scale must be >= 1"));
    }
    let (ih, iw) = (image.grid().rows as f64, image.grid().cols as f64);
    let (x0, y0) = bbox.top_left();
    if x0 + bbox.w <= 0.0 || y0 + bbox.h <= 0.0 || x0 >= iw || y0 >= ih {
        return Err(Error::invalid("bounding box lies entirely outside the image"));
    }
    let side = (search_scale * (bbox.w * bbox.h).sqrt()).round().max(1.0) as usize;
    let mut patch = crop_square(image, bbox.cx, bbox.cy, side)?;
    patch.source_bbox = *bbox;
    Ok(patch)
}

/// Mean-pooled, mean-centered luminance cells: the minimal 1-channel
/// feature.
pub fn extract_grayscale(patch: &ImagePatch, cell: usize) -> Result<FeatureMap> {
    if cell == 0 {
        return Err(Error::invalid("cell size must be >= 1"));
    }
    let lum = patch.pixels.luminance();
    let (ph, pw) = (lum.grid().rows, lum.grid().cols);
    if ph % cell != 0 || pw % cell != 0 || ph < cell || pw < cell {
        return Err(Error::invalid(format!(
            "cell size {cell} must divide the patch size {ph}x{pw}"
        )));
    }
    let grid = Grid2::new(ph / cell, pw / cell)?;
    let inv = 1.0 / (cell * cell) as f64;
    let mut pooled = RealGrid::from_fn(grid, |r, c| {
        let mut acc = 0.0;
        for i in 0..cell {
            for j in 0..cell {
                acc += lum.at(r * cell + i, c * cell + j);
            }
        }
        acc * inv
    });
    let mean = pooled.values().iter().sum::<f64>() / grid.len() as f64;
    for v in pooled.values_mut() {
        *v -= mean;
    }
    FeatureMap::new(vec![pooled])
}

/// Dispatches on the configured feature family.
pub fn extract_features(patch: &ImagePatch, cfg: &FeatureConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    match cfg.kind {
        FeatureKind::Grayscale => extract_grayscale(patch, cfg.cell),
        FeatureKind::Hog31 => hog::extract_hog(patch, cfg.cell),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn flat_raster(rows: usize, cols: usize, v: f64) -> Raster {
        Raster::new(vec![RealGrid::from_fn(Grid2::new(rows, cols).unwrap(), |_, _| v)]).unwrap()
    }

    fn ramp_raster(rows: usize, cols: usize) -> Raster {
        Raster::new(vec![RealGrid::from_fn(Grid2::new(rows, cols).unwrap(), |r, c| {
            (r * cols + c) as f64 / (rows * cols) as f64
        })])
        .unwrap()
    }

    #[test]
    fn crop_patch_inside_is_exact_subimage() {
        let img = ramp_raster(60, 60);
        let bbox = BoundingBox::new(30.0, 30.0, 20.0, 20.0).unwrap();
        let patch = crop_patch(&img, &bbox, 1.0).unwrap();
        assert_eq!(patch.pixels.grid().rows, 20);
        // Patch top-left lands at (20, 20) of the source.
        for r in 0..20 {
            for c in 0..20 {
                assert_eq!(patch.pixels.channel(0).at(r, c), img.channel(0).at(20 + r, 20 + c));
            }
        }
    }

    #[test]
    fn crop_patch_replicates_borders() {
        let img = ramp_raster(30, 30);
        let bbox = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let patch = crop_patch(&img, &bbox, 2.0).unwrap();
        // Region extends well outside the top-left corner; the outside band
        // replicates row/column 0.
        assert_eq!(patch.pixels.channel(0).at(0, 0), img.channel(0).at(0, 0));
        let side = patch.pixels.grid().rows;
        assert_eq!(side, 20);
        // All pixels in the out-of-image band equal the clamped source.
        assert_eq!(patch.pixels.channel(0).at(0, 5), patch.pixels.channel(0).at(3, 5));
    }

    #[test]
    fn crop_patch_side_follows_search_scale() {
        let img = flat_raster(400, 400, 0.5);
        let bbox = BoundingBox::new(200.0, 200.0, 20.0, 20.0).unwrap();
        let patch = crop_patch(&img, &bbox, 5.0).unwrap();
        assert_eq!(patch.pixels.grid().rows, 100);
        assert_eq!(patch.pixels.grid().cols, 100);
    }

    #[test]
    fn crop_patch_rejects_outside_box() {
        let img = flat_raster(30, 30, 0.1);
        let bbox = BoundingBox::new(100.0, 100.0, 10.0, 10.0).unwrap();
        assert!(crop_patch(&img, &bbox, 1.0).is_err());
    }

    #[test]
    fn grayscale_constant_patch_is_zero() {
        let patch = ImagePatch {
            pixels: flat_raster(16, 16, 0.7),
            source_bbox: BoundingBox::new(8.0, 8.0, 8.0, 8.0).unwrap(),
        };
        let f = extract_grayscale(&patch, 4).unwrap();
        assert_eq!(f.channels(), 1);
        assert!(f.channel(0).max_abs() < 1e-15);
    }

    #[test]
    fn grayscale_cell_one_is_identity_minus_mean() {
        let mut rng = SplitMix64::new(5);
        let grid = Grid2::new(6, 6).unwrap();
        let img = RealGrid::from_fn(grid, |_, _| rng.next_f64());
        let patch = ImagePatch {
            pixels: Raster::new(vec![img.clone()]).unwrap(),
            source_bbox: BoundingBox::new(3.0, 3.0, 3.0, 3.0).unwrap(),
        };
        let f = extract_grayscale(&patch, 1).unwrap();
        let mean = img.values().iter().sum::<f64>() / 36.0;
        for (a, b) in f.channel(0).values().iter().zip(img.values()) {
            assert!((a - (b - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn grayscale_checkerboard_pools_to_zero() {
        let grid = Grid2::new(8, 8).unwrap();
        let img = RealGrid::from_fn(grid, |r, c| if (r + c) % 2 == 0 { 1.0 } else { 0.0 });
        let patch = ImagePatch {
            pixels: Raster::new(vec![img]).unwrap(),
            source_bbox: BoundingBox::new(4.0, 4.0, 4.0, 4.0).unwrap(),
        };
        let f = extract_grayscale(&patch, 2).unwrap();
        assert!(f.channel(0).max_abs() < 1e-15);
    }

    #[test]
    fn resize_preserves_constants_and_shape() {
        let img = flat_raster(10, 14, 0.3);
        let out = img.resize_bilinear(25, 19).unwrap();
        assert_eq!((out.grid().rows, out.grid().cols), (25, 19));
        for v in out.channel(0).values() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }
}
