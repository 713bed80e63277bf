//! Axis-orientation check for feature extraction.

use maskcf::features::{extract_grayscale, hog::extract_hog, ImagePatch, Raster};
use maskcf::types::{BoundingBox, Grid2, RealGrid};

fn patch(img: RealGrid) -> ImagePatch {
    ImagePatch {
        pixels: Raster::new(vec![img]).unwrap(),
        source_bbox: BoundingBox::new(16.0, 16.0, 16.0, 16.0).unwrap(),
    }
}

fn main() {
    let g = Grid2::new(32, 32).unwrap();
    // Bright vertical line at pixel column 16: content varies along x only.
    let vline = RealGrid::from_fn(g, |_, c| if c == 16 { 1.0 } else { 0.0 });
    // Bright horizontal line at pixel row 16.
    let hline = RealGrid::from_fn(g, |r, _| if r == 16 { 1.0 } else { 0.0 });

    for (name, img) in [("vline(col 16)", vline), ("hline(row 16)", hline)] {
        let f = extract_hog(&patch(img.clone()), 4).unwrap();
        // Sum energy across channels per cell; find the argmax cell.
        let mut best = (0.0f64, 0usize, 0usize);
        let mut row_sums = vec![0.0; 8];
        let mut col_sums = vec![0.0; 8];
        for r in 0..8 {
            for c in 0..8 {
                let e: f64 = (0..31).map(|l| f.channel(l).at(r, c).powi(2)).sum();
                row_sums[r] += e;
                col_sums[c] += e;
                if e > best.0 {
                    best = (e, r, c);
                }
            }
        }
        println!("HOG  {name}: peak cell ({}, {}), row sums {:?}, col sums {:?}",
            best.1, best.2,
            row_sums.iter().map(|v| (v * 100.0) as i64).collect::<Vec<_>>(),
            col_sums.iter().map(|v| (v * 100.0) as i64).collect::<Vec<_>>());

        let gf = extract_grayscale(&patch(img), 4).unwrap();
        let mut best = (f64::MIN, 0usize, 0usize);
        for r in 0..8 {
            for c in 0..8 {
                let v = gf.channel(0).at(r, c);
                if v > best.0 {
                    best = (v, r, c);
                }
            }
        }
        println!("GRAY {name}: peak cell ({}, {})", best.1, best.2);
    }
}
