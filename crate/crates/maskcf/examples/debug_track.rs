//! Scratch diagnostics for the tracking pipeline (not part of the suite).

use maskcf::bench::synth::{generate_frames, Clutter, Motion, SynthSpec};
use maskcf::bench::{count_failures, iou, success_auc};
use maskcf::tracker::{SolverMode, Tracker, TrackerConfig, Variant};

fn run(spec: &SynthSpec, cfg: &TrackerConfig) -> (f64, f64, usize, f64) {
    let frames = generate_frames(spec).unwrap();
    let start = std::time::Instant::now();
    let mut tracker = Tracker::init(&frames[0].0, frames[0].1, cfg.clone()).unwrap();
    let mut ious = vec![1.0];
    for (raster, gt) in frames.iter().skip(1) {
        match tracker.step(raster) {
            Ok(b) => ious.push(iou(&b, gt)),
            Err(_) => ious.push(0.0),
        }
    }
    let fps = frames.len() as f64 / start.elapsed().as_secs_f64();
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    (mean, success_auc(&ious), count_failures(&ious, 0.0), fps)
}

fn main() {
    let motion = SynthSpec {
        frames: 50,
        motion: Motion::Linear { vx: 3.0, vy: 0.0 },
        ..SynthSpec::default()
    };
    println!("== 50-frame linear motion, single-base, default HOG config");
    for variant in Variant::ALL {
        let cfg = TrackerConfig {
            variant,
            ..TrackerConfig::default()
        };
        let (mean, auc, failures, fps) = run(&motion, &cfg);
        println!(
            "{:9} mean IoU {mean:.3} auc {auc:.3} failures {failures} fps {fps:.1}",
            variant.name()
        );
    }

    for (vx, vy, noise, frames, seed) in [
        (5.0, 2.0, 0.05, 60usize, 11u64),
        (7.0, 3.0, 0.08, 80, 11),
        (8.0, 4.0, 0.10, 80, 23),
        (9.0, 5.0, 0.12, 80, 31),
    ] {
        println!("== border clutter: v ({vx},{vy}) noise {noise} frames {frames} seed {seed}");
        let clutter = SynthSpec {
            frames,
            motion: Motion::Linear { vx, vy },
            clutter: Clutter::Border,
            noise,
            seed,
            ..SynthSpec::default()
        };
        for variant in Variant::ALL {
            let cfg = TrackerConfig {
                variant,
                ..TrackerConfig::default()
            };
            let (mean, auc, failures, fps) = run(&clutter, &cfg);
            println!(
                "{:9} mean IoU {mean:.3} auc {auc:.3} failures {failures} fps {fps:.1}",
                variant.name()
            );
        }
    }

    println!("== multi-base quick check (20 frames, linear)");
    let short = SynthSpec {
        frames: 20,
        ..SynthSpec::default()
    };
    let cfg = TrackerConfig {
        variant: Variant::Rcg,
        mode: SolverMode::Multi,
        capacity: 10,
        ..TrackerConfig::default()
    };
    let (mean, auc, failures, fps) = run(&short, &cfg);
    println!("RCG/multi  mean IoU {mean:.3} auc {auc:.3} failures {failures} fps {fps:.1}");
}
