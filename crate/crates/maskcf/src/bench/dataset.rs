//! OTB-layout sequence ingestion: `img/` folder of numbered frames plus
//! `groundtruth_rect.txt` with one `x,y,w,h` line per frame (top-left
//! convention, comma / tab / space separated).

use std::path::Path;

use image::GenericImageView;

use crate::bench::Sequence;
use crate::error::{Error, Result};
use crate::features::Raster;
use crate::types::{BoundingBox, Grid2, RealGrid};

/// Decodes a PNG/JPEG image into a planar [0, 1] raster.
pub fn load_image(path: &Path) -> Result<Raster> {
    let img = image::open(path)?;
    let (w, h) = img.dimensions();
    let grid = Grid2::new(h as usize, w as usize)?;
    let rgb = img.to_rgb8();
    let mut channels = vec![vec![0.0f64; grid.len()]; 3];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            channels[c][i] = px.0[c] as f64 / 255.0;
        }
    }
    // Collapse grayscale sources back to one channel.
    let is_gray = channels[0] == channels[1] && channels[1] == channels[2];
    let planes: Vec<RealGrid> = if is_gray {
        vec![RealGrid::from_vec(grid, channels.swap_remove(0))?]
    } else {
        channels
            .into_iter()
            .map(|c| RealGrid::from_vec(grid, c))
            .collect::<Result<Vec<_>>>()?
    };
    Raster::new(planes)
}

/// Writes a single-channel raster as an 8-bit image (PNG or JPEG chosen by
/// the extension).
pub fn save_image(raster: &Raster, path: &Path) -> Result<()> {
    let grid = raster.grid();
    let lum = raster.luminance();
    let mut buf = image::GrayImage::new(grid.cols as u32, grid.rows as u32);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let v = (lum.at(r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(c as u32, r as u32, image::Luma([v]));
        }
    }
    buf.save(path)?;
    Ok(())
}

fn parse_gt_line(line: &str, file: &str, line_no: usize) -> Result<BoundingBox> {
    let fields: Vec<&str> = line
        .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            file: file.into(),
            line: line_no,
            msg: format!("expected 4 numbers, got {}", fields.len()),
        });
    }
    let mut vals = [0.0f64; 4];
    for (i, f) in fields.iter().enumerate() {
        vals[i] = f.parse().map_err(|_| Error::Parse {
            file: file.into(),
            line: line_no,
            msg: format!("bad number '{f}'"),
        })?;
    }
    BoundingBox::from_top_left(vals[0], vals[1], vals[2], vals[3]).map_err(|e| Error::Parse {
        file: file.into(),
        line: line_no,
        msg: e.to_string(),
    })
}

/// Loads one OTB-layout sequence directory.
pub fn load_otb_sequence(dir: &Path) -> Result<Sequence> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    let img_dir = dir.join("img");
    if !img_dir.is_dir() {
        return Err(Error::Validation(format!(
            "missing img/ folder under {}",
            dir.display()
        )));
    }
    let mut frames: Vec<_> = std::fs::read_dir(&img_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
                .unwrap_or(false)
        })
        .collect();
    frames.sort();
    let gt_path = dir.join("groundtruth_rect.txt");
    let gt_text = std::fs::read_to_string(&gt_path)
        .map_err(|_| Error::Validation(format!("missing {}", gt_path.display())))?;
    let gt_name = gt_path.display().to_string();
    let mut groundtruth = Vec::new();
    for (i, line) in gt_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        groundtruth.push(parse_gt_line(line, &gt_name, i + 1)?);
    }
    let attributes = std::fs::read_to_string(dir.join("attrs.txt"))
        .map(|t| {
            t.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default();
    let seq = Sequence {
        name,
        frames,
        groundtruth,
        attributes,
    };
    seq.validate()?;
    Ok(seq)
}
