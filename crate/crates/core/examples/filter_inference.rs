//! Filter-based inference on a two-minute drive through a roadside map:
//! the network corrects the previous filtered pose and a CTRV EKF smooths
//! the corrections. Writes traces and an SVG plot to `out/filter`.
//!
//! cargo run --release --example filter_inference

use std::path::Path;

use attnloc::experiment::{run_experiment, EvalFrames, ExperimentConfig, FrameKind, Method};
use attnloc::inference::EkfConfig;
use attnloc::training::TrainConfig;

fn main() -> attnloc::Result<()> {
    let cfg = ExperimentConfig {
        name: "filter-drive".into(),
        train: TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            sigma_pos: 1.5,
            sigma_rot: 5f64.to_radians(),
            mix_ratio: 0.5,
            ..TrainConfig::default()
        },
        // loose heading variance: the filter takes its heading from the track
        ekf: EkfConfig {
            measurement_cov: [
                [0.04, 0.0, 0.0],
                [0.0, 0.04, 0.0],
                [0.0, 0.0, 10f64.to_radians().powi(2)],
            ],
            ..EkfConfig::default()
        },
        train_scenes: 1000,
        map_train_scenes: 1000,
        eval: EvalFrames {
            kind: FrameKind::Drive,
            scenes: 0,
        },
        methods: vec![Method::Zero, Method::EkfGps, Method::Gps, Method::Filter],
        svg: true,
        ..ExperimentConfig::default()
    };
    let out = Path::new("out/filter");
    let report = run_experiment(&cfg, out, |s| eprintln!("epoch {} loss {:.4}", s.epoch, s.mean_loss))?;
    for r in &report.results {
        println!(
            "{:>8}: rmse x {:.3} m  y {:.3} m  phi {:.3} deg  (max {:.3} / {:.3} m)",
            r.method, r.rmse.x, r.rmse.y, r.rmse.phi, r.max_error.x, r.max_error.y
        );
    }
    println!("traces written to {}", out.display());
    Ok(())
}
