//! Synthetic-sequence generator: a textured square target translating over
//! a textured background, written in the same OTB layout the loader reads.
//!
//! The `Border` clutter mode plants high-contrast distractor blocks at a
//! fixed offset from the target chosen to sit near the training-patch
//! boundary, i.e. inside the band of shift positions whose cyclic samples
//! are boundary-discontinuous. That band is exactly what the residual
//! masks deactivate, so it stresses the unmasked no-window variant.

use std::path::Path;

use crate::bench::dataset::save_image;
use crate::error::{Error, Result};
use crate::features::Raster;
use crate::rng::SplitMix64;
use crate::types::{BoundingBox, Grid2, RealGrid};

/// Background structure a sequence carries around the target path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clutter {
    /// Low-contrast textured background only.
    Plain,
    /// Additional high-contrast distractor blocks riding near the
    /// training-patch border.
    Border,
}

impl Clutter {
    pub fn parse(s: &str) -> Result<Clutter> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "none" => Ok(Clutter::Plain),
            "border" => Ok(Clutter::Border),
            other => Err(Error::invalid(format!(
                "unknown clutter '{other}' (expected plain|border)"
            ))),
        }
    }
}

/// Target motion model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    /// Constant velocity (vx, vy) pixels per frame, reflecting off the
    /// frame borders.
    Linear { vx: f64, vy: f64 },
}

impl Motion {
    /// Parses `linear:vx,vy`.
    pub fn parse(s: &str) -> Result<Motion> {
        let lower = s.to_ascii_lowercase();
        let rest = lower
            .strip_prefix("linear:")
            .ok_or_else(|| Error::invalid(format!("unknown motion '{s}' (expected linear:vx,vy)")))?;
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::invalid("motion expects two components: linear:vx,vy"));
        }
        let vx: f64 = parts[0]
            .parse()
            .map_err(|_| Error::invalid(format!("bad motion component '{}'", parts[0])))?;
        let vy: f64 = parts[1]
            .parse()
            .map_err(|_| Error::invalid(format!("bad motion component '{}'", parts[1])))?;
        Ok(Motion::Linear { vx, vy })
    }
}

/// Full generator specification.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub target_w: usize,
    pub target_h: usize,
    pub start: (f64, f64),
    pub motion: Motion,
    pub clutter: Clutter,
    /// Additive per-frame pixel noise amplitude (sensor noise).
    pub noise: f64,
    /// Maximum camera-jitter excursion in pixels. The background drifts on
    /// a seeded random walk inside this bound while the target follows its
    /// own path, as in handheld video. A pixel-static background would be
    /// a perfect spurious predictor of the label and no tracker variant
    /// could be compared meaningfully against it.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 320,
            height: 240,
            frames: 50,
            target_w: 40,
            target_h: 40,
            start: (70.0, 120.0),
            motion: Motion::Linear { vx: 3.0, vy: 0.0 },
            clutter: Clutter::Plain,
            noise: 0.02,
            jitter: 6,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("need at least 2 frames"));
        }
        if self.target_w == 0 || self.target_h == 0 {
            return Err(Error::invalid("target must be non-empty"));
        }
        if self.target_w >= self.width || self.target_h >= self.height {
            return Err(Error::invalid("target must fit inside the frame"));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::invalid("noise amplitude must be in [0, 0.5]"));
        }
        Ok(())
    }
}

struct Texture {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Texture {
    /// Block-structured pattern: constant over `block x block` pixel
    /// tiles. Gives the gradient features stable structure under sub-cell
    /// translations, unlike per-pixel noise.
    fn blocks(w: usize, h: usize, block: usize, rng: &mut SplitMix64, lo: f64, hi: f64) -> Texture {
        let bw = w.div_ceil(block);
        let bh = h.div_ceil(block);
        let tiles: Vec<f64> = (0..bw * bh).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
        let data = (0..w * h)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                tiles[(r / block) * bw + c / block]
            })
            .collect();
        Texture { w, h, data }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }
}

/// Smooth low-frequency field whose control points drift frame to frame:
/// a slowly morphing backdrop, the way real backgrounds shimmer under
/// sensor noise, compression, and micro parallax. A pixel-static backdrop
/// would be a perfect spurious predictor of the regression label.
struct SmoothField {
    w: usize,
    h: usize,
    spacing: usize,
    gw: usize,
    control: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl SmoothField {
    fn new(w: usize, h: usize, spacing: usize, rng: &mut SplitMix64, lo: f64, hi: f64) -> Self {
        let gw = w / spacing + 2;
        let gh = h / spacing + 2;
        let control = (0..gw * gh).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
        SmoothField {
            w,
            h,
            spacing,
            gw,
            control,
            lo,
            hi,
        }
    }

    fn step(&mut self, rng: &mut SplitMix64, amount: f64) {
        let scale = (self.hi - self.lo) * amount;
        for v in &mut self.control {
            *v = (*v + scale * rng.next_signed()).clamp(self.lo, self.hi);
        }
    }

    fn render(&self) -> Texture {
        let data = (0..self.w * self.h)
            .map(|i| {
                let (r, c) = (i / self.w, i % self.w);
                let fy = r as f64 / self.spacing as f64;
                let fx = c as f64 / self.spacing as f64;
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
                let v00 = self.control[y0 * self.gw + x0];
                let v01 = self.control[y0 * self.gw + x0 + 1];
                let v10 = self.control[(y0 + 1) * self.gw + x0];
                let v11 = self.control[(y0 + 1) * self.gw + x0 + 1];
                v00 * (1.0 - wy) * (1.0 - wx)
                    + v01 * (1.0 - wy) * wx
                    + v10 * wy * (1.0 - wx)
                    + v11 * wy * wx
            })
            .collect();
        Texture {
            w: self.w,
            h: self.h,
            data,
        }
    }
}

fn paint(img: &mut RealGrid, tex: &Texture, left: i64, top: i64) {
    let (rows, cols) = (img.grid().rows as i64, img.grid().cols as i64);
    for r in 0..tex.h as i64 {
        for c in 0..tex.w as i64 {
            let rr = top + r;
            let cc = left + c;
            if rr >= 0 && rr < rows && cc >= 0 && cc < cols {
                img.set(rr as usize, cc as usize, tex.at(r as usize, c as usize));
            }
        }
    }
}

/// Generates the frames and ground-truth boxes in memory.
pub fn generate_frames(spec: &SynthSpec) -> Result<Vec<(Raster, BoundingBox)>> {
    spec.validate()?;
    let grid = Grid2::new(spec.height, spec.width)?;
    let mut rng = SplitMix64::new(spec.seed);
    // Strongly textured target over a smooth low-contrast background. The
    // background texture carries a margin so camera jitter never exposes
    // uncovered pixels.
    let margin = 2 * spec.jitter + 2;
    let target = Texture::blocks(spec.target_w, spec.target_h, 4, &mut rng, 0.0, 1.0);
    let mut background = SmoothField::new(
        spec.width + 2 * margin,
        spec.height + 2 * margin,
        16,
        &mut rng,
        0.3,
        0.6,
    );
    // Border distractors are twins of the target texture riding at half
    // the training-patch side from the center: they permanently straddle
    // the patch boundary, so their cyclic shifts are exactly the
    // boundary-discontinuous samples the residual masks deactivate.
    let patch_side = 5.0 * ((spec.target_w * spec.target_h) as f64).sqrt();
    let distractor_dist = 0.5 * patch_side;
    let distractors: Vec<(Texture, f64, f64)> = match spec.clutter {
        Clutter::Plain => Vec::new(),
        Clutter::Border => {
            let mut v = Vec::new();
            for (dx, dy) in [
                (0.0, -distractor_dist),
                (0.0, distractor_dist),
                (-distractor_dist, 0.0),
                (distractor_dist, 0.0),
            ] {
                let tex = Texture {
                    w: target.w,
                    h: target.h,
                    data: target.data.clone(),
                };
                v.push((tex, dx, dy));
            }
            v
        }
    };

    let Motion::Linear { vx, vy } = spec.motion;
    let (mut cx, mut cy) = spec.start;
    let (mut dx, mut dy) = (vx, vy);
    let half_w = spec.target_w as f64 / 2.0;
    let half_h = spec.target_h as f64 / 2.0;
    let mut jitter_rng = SplitMix64::new(spec.seed.wrapping_mul(0x5851_f42d_4c95_7f2d));
    let (mut jx, mut jy) = (0i64, 0i64);

    let mut out = Vec::with_capacity(spec.frames);
    for frame_idx in 0..spec.frames {
        let backdrop = background.render();
        let mut img = RealGrid::from_fn(grid, |r, c| {
            backdrop.at(
                (r as i64 + margin as i64 + jy) as usize,
                (c as i64 + margin as i64 + jx) as usize,
            )
        });
        for (tex, ox, oy) in &distractors {
            let left = (cx + ox - half_w).round() as i64;
            let top = (cy + oy - half_h).round() as i64;
            paint(&mut img, tex, left, top);
        }
        let left = (cx - half_w).round() as i64;
        let top = (cy - half_h).round() as i64;
        paint(&mut img, &target, left, top);
        if spec.noise > 0.0 {
            let mut frame_rng = SplitMix64::new(spec.seed ^ (0x9e3779b9 + frame_idx as u64));
            for v in img.values_mut() {
                *v = (*v + spec.noise * frame_rng.next_signed()).clamp(0.0, 1.0);
            }
        }
        // Camera random walk (steps up to 2 px) and backdrop morphing.
        if spec.jitter > 0 {
            let j = spec.jitter as i64;
            jx = (jx + jitter_rng.next_below(5) as i64 - 2).clamp(-j, j);
            jy = (jy + jitter_rng.next_below(5) as i64 - 2).clamp(-j, j);
        }
        background.step(&mut jitter_rng, 0.06);
        // Ground truth matches the rendered (rounded) position.
        let bbox = BoundingBox::from_top_left(
            left as f64,
            top as f64,
            spec.target_w as f64,
            spec.target_h as f64,
        )?;
        out.push((Raster::new(vec![img])?, bbox));

        cx += dx;
        cy += dy;
        // Reflect off the walls, keeping the target fully visible.
        if cx - half_w < 1.0 || cx + half_w > spec.width as f64 - 1.0 {
            dx = -dx;
            cx += 2.0 * dx;
        }
        if cy - half_h < 1.0 || cy + half_h > spec.height as f64 - 1.0 {
            dy = -dy;
            cy += 2.0 * dy;
        }
    }
    Ok(out)
}

/// Writes the sequence in OTB layout: `img/%04d.jpg` plus
/// `groundtruth_rect.txt` (top-left integer convention).
pub fn write_otb(spec: &SynthSpec, dir: &Path) -> Result<()> {
    let frames = generate_frames(spec)?;
    let img_dir = dir.join("img");
    std::fs::create_dir_all(&img_dir)?;
    let mut gt = String::new();
    for (i, (raster, bbox)) in frames.iter().enumerate() {
        save_image(raster, &img_dir.join(format!("{:04}.jpg", i + 1)))?;
        let (x, y) = bbox.top_left();
        gt.push_str(&format!("{},{},{},{}\n", x as i64, y as i64, bbox.w as i64, bbox.h as i64));
    }
    std::fs::write(dir.join("groundtruth_rect.txt"), gt)?;
    Ok(())
}
