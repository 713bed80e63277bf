//! Committed verification fixtures: small masked-CF instances on which the
//! frequency-domain ADMM solver is compared against the dense oracle.
//!
//! Fixture definitions are plain-text numeric files. The first
//! non-comment line is the header `H W L h w lambda seed`; each following
//! line is one instance. Sample data is generated from the committed
//! SplitMix64 stream so failures reproduce exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::masking::{binary_mask, gaussian_mask, ones_mask, MaskKind, SpatialMask};
use crate::oracle::{build_dense, dense_solve_masked_cf, eval_masked_objective_cropped};
use crate::parallel::{map_collect, ExecMode};
use crate::rng::SplitMix64;
use crate::solver_single::{train_masked_bacf_with_mode, CropRegion, TrainRequest};
use crate::types::{
    default_label_sigma, make_gaussian_label, FeatureMap, Grid2, Label, RealGrid, SolverConfig,
};

/// Embedded copy of the committed fixture file.
pub const BUILTIN_FIXTURES: &str = include_str!("../fixtures/admm_fixtures.txt");

/// Gaussian-mask decay used by the fixture suite.
pub const SUITE_DELTA: f64 = 1.2;

/// Relative objective-gap bound the suite enforces.
pub const SUITE_GAP_TOL: f64 = 1e-4;

/// Relative filter-error bound the suite enforces.
pub const SUITE_FILTER_TOL: f64 = 1e-3;

const HEADER: [&str; 7] = ["H", "W", "L", "h", "w", "lambda", "seed"];

/// One parsed fixture row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixtureDef {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub target_h: f64,
    pub target_w: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl FixtureDef {
    pub fn name(&self) -> String {
        format!(
            "{}x{}_L{}_h{}w{}_seed{}",
            self.rows, self.cols, self.channels, self.target_h, self.target_w, self.seed
        )
    }

    pub fn grid(&self) -> Grid2 {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Deterministic sample and label for this row.
    pub fn instantiate(&self) -> (FeatureMap, Label) {
        let grid = self.grid();
        let mut rng = SplitMix64::new(self.seed);
        let channels = (0..self.channels)
            .map(|_| RealGrid::from_fn(grid, |_, _| rng.next_signed()))
            .collect();
        let x = FeatureMap::new(channels).expect("fixture channels are valid by construction");
        let sigma = default_label_sigma(self.target_h, self.target_w).max(0.5);
        let y = make_gaussian_label(grid, sigma).expect("positive sigma");
        (x, y)
    }

    pub fn crop(&self) -> CropRegion {
        CropRegion::target_support(self.grid(), self.target_h, self.target_w)
    }

    /// The three mask variants checked for this instance.
    pub fn masks(&self) -> Result<Vec<SpatialMask>> {
        let grid = self.grid();
        Ok(vec![
            ones_mask(grid),
            binary_mask(grid, self.target_h, self.target_w)?,
            gaussian_mask(grid, self.target_h, self.target_w, SUITE_DELTA)?,
        ])
    }
}

/// Parses fixture text. `source` only labels error messages.
pub fn parse_fixture_defs(text: &str, source: &str) -> Result<Vec<FixtureDef>> {
    let mut defs = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !header_seen {
            if fields != HEADER {
                return Err(Error::Parse {
                    file: source.into(),
                    line: idx + 1,
                    msg: format!("expected header '{}'", HEADER.join(" ")),
                });
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 7 {
            return Err(Error::Parse {
                file: source.into(),
                line: idx + 1,
                msg: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                file: source.into(),
                line: idx + 1,
                msg: format!("bad {what}: '{s}'"),
            })
        };
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                file: source.into(),
                line: idx + 1,
                msg: format!("bad {what}: '{s}'"),
            })
        };
        let def = FixtureDef {
            rows: parse_usize(fields[0], "H")?,
            cols: parse_usize(fields[1], "W")?,
            channels: parse_usize(fields[2], "L")?,
            target_h: parse_f64(fields[3], "h")?,
            target_w: parse_f64(fields[4], "w")?,
            lambda: parse_f64(fields[5], "lambda")?,
            seed: parse_usize(fields[6], "seed")? as u64,
        };
        if def.rows == 0 || def.cols == 0 || def.channels == 0 {
            return Err(Error::Parse {
                file: source.into(),
                line: idx + 1,
                msg: "H, W, L must be positive".into(),
            });
        }
        if def.target_h > def.rows as f64 || def.target_w > def.cols as f64 {
            return Err(Error::Parse {
                file: source.into(),
                line: idx + 1,
                msg: "target extent exceeds grid".into(),
            });
        }
        defs.push(def);
    }
    if !header_seen {
        return Err(Error::Parse {
            file: source.into(),
            line: 1,
            msg: "missing header line".into(),
        });
    }
    Ok(defs)
}

/// The committed fixture set.
pub fn builtin_defs() -> Vec<FixtureDef> {
    parse_fixture_defs(BUILTIN_FIXTURES, "builtin").expect("committed fixtures parse")
}

/// Loads every `*.txt` fixture file under `dir`.
pub fn load_fixture_dir(dir: &Path) -> Result<Vec<FixtureDef>> {
    let mut defs = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Validation(format!(
            "no .txt fixture files under {}",
            dir.display()
        )));
    }
    for path in entries {
        let text = std::fs::read_to_string(&path)?;
        defs.extend(parse_fixture_defs(&text, &path.display().to_string())?);
    }
    Ok(defs)
}

fn mask_label(kind: MaskKind) -> &'static str {
    match kind {
        MaskKind::Ones => "ones",
        MaskKind::Binary => "binary",
        MaskKind::Gaussian => "gaussian",
        MaskKind::Cosine => "cosine",
    }
}

/// Outcome of one (instance, mask) verification cell.
#[derive(Clone, Debug)]
pub struct FixtureOutcome {
    pub name: String,
    pub mask: &'static str,
    pub admm_objective: f64,
    pub dense_objective: f64,
    /// (admm - dense) / dense.
    pub rel_gap: f64,
    /// ||g_admm - g_dense|| / ||g_dense||.
    pub filter_rel_err: f64,
}

impl FixtureOutcome {
    pub fn passes(&self) -> bool {
        self.rel_gap.is_finite()
            && self.rel_gap.abs() <= SUITE_GAP_TOL
            && self.filter_rel_err <= SUITE_FILTER_TOL
    }
}

fn run_one(def: &FixtureDef, mask: &SpatialMask, mode: ExecMode) -> Result<FixtureOutcome> {
    let (x, y) = def.instantiate();
    let crop = def.crop();
    let config = SolverConfig::verification(def.lambda);
    let req = TrainRequest {
        x: x.clone(),
        y: y.clone(),
        mask: mask.clone(),
        crop,
        config,
    };
    let bank = train_masked_bacf_with_mode(&req, mode)?;
    let admm_objective =
        eval_masked_objective_cropped(bank.cropped(), &crop, &x, &y, mask, def.lambda)?;
    let dense = dense_solve_masked_cf(&build_dense(&x, mask, &y, &crop, def.lambda)?)?;
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    for (a, b) in bank.cropped().iter().zip(&dense.g) {
        diff_sq += a.add_scaled(b, -1.0).norm_sq();
        ref_sq += b.norm_sq();
    }
    Ok(FixtureOutcome {
        name: def.name(),
        mask: mask_label(mask.kind()),
        admm_objective,
        dense_objective: dense.objective,
        rel_gap: (admm_objective - dense.objective) / dense.objective,
        filter_rel_err: (diff_sq / ref_sq.max(f64::MIN_POSITIVE)).sqrt(),
    })
}

/// Runs the full (instance x mask) verification matrix.
pub fn run_admm_suite(defs: &[FixtureDef], mode: ExecMode) -> Result<Vec<FixtureOutcome>> {
    let mut cells = Vec::new();
    for def in defs {
        for mask in def.masks()? {
            cells.push((*def, mask));
        }
    }
    let outcomes = map_collect(cells, mode, |(def, mask)| {
        run_one(&def, &mask, ExecMode::Sequential)
    });
    outcomes.into_iter().collect()
}

/// Plain-text gap table for command-line output.
pub fn format_suite_table(outcomes: &[FixtureOutcome]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<26} {:<9} {:>14} {:>14} {:>11} {:>11}",
        "instance", "mask", "admm obj", "dense obj", "rel gap", "filter err"
    );
    for o in outcomes {
        let _ = writeln!(
            out,
            "{:<26} {:<9} {:>14.8e} {:>14.8e} {:>11.3e} {:>11.3e}",
            o.name, o.mask, o.admm_objective, o.dense_objective, o.rel_gap, o.filter_rel_err
        );
    }
    out
}
