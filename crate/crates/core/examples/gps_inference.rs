//! GPS-based inference: corrects noisy GPS poses of held-out synthetic
//! scenes with a trained network and compares against the uncorrected pose
//! and ICP.
//!
//! cargo run --release --example gps_inference -- [checkpoint.json]
//! Without a checkpoint a network is trained first (a few minutes).

use attnloc::experiment::{evaluate, load_model, simulate, train_model, ExperimentConfig, Method};
use attnloc::training::TrainConfig;

fn main() -> attnloc::Result<()> {
    let cfg = ExperimentConfig {
        train: TrainConfig {
            epochs: 25,
            learning_rate: 1e-3,
            sigma_pos: 1.5,
            sigma_rot: 5f64.to_radians(),
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let data = simulate(&cfg)?;
    let model = match std::env::args().nth(1) {
        Some(path) => load_model(path.as_ref())?,
        None => train_model(&cfg, &data, |s| eprintln!("epoch {} loss {:.4}", s.epoch, s.mean_loss))?.0,
    };
    println!(
        "{} held-out scenes, GPS noise +-{} m / +-{} deg (uniform)",
        data.eval.len(),
        cfg.gps_noise.sigma_xy,
        cfg.gps_noise.sigma_phi_deg
    );
    for method in [Method::Zero, Method::Icp, Method::Gps] {
        let (r, _) = evaluate(&cfg, method, Some(&model), &data)?;
        let ms = r
            .latency
            .map_or(String::new(), |l| format!("  {:.2} ms/frame", l.mean_ms));
        println!(
            "{:>5}: rmse x {:.3} m  y {:.3} m  phi {:.3} deg{ms}",
            r.method, r.rmse.x, r.rmse.y, r.rmse.phi
        );
    }
    Ok(())
}
