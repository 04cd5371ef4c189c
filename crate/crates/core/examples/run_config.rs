//! Runs an experiment described by a JSON config, e.g. one of `configs/*.json`.
//!
//! cargo run --release --example run_config -- configs/gps_noise_1m_4deg.json out/gps_noise_1m_4deg

use std::path::PathBuf;

use attnloc::experiment::{run_experiment, ExperimentConfig};

fn main() -> attnloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/gps_noise_1m_4deg.json".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/experiment".into()));
    let cfg = ExperimentConfig::load(&config)?;
    let report = run_experiment(&cfg, &out, |s| eprintln!("epoch {} loss {:.4}", s.epoch, s.mean_loss))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
