//! Draws synthetic scenes from the roadside mixture, degrades them, and
//! writes them as JSON Lines.
//!
//! cargo run --release --example simulate_scenes -- [n] [out.jsonl]

use attnloc::dataset_io::{save_scenes, Scene};
use attnloc::geometry::Pose;
use attnloc::simulator::{generate_scene, SimConfig, SpatialModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> attnloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let out = args.next().unwrap_or_else(|| "scenes.jsonl".into());

    for (name, spatial) in [
        ("gaussian", SpatialModel::default_gaussian()),
        ("mixture", SpatialModel::default_mixture()),
    ] {
        let cfg = SimConfig {
            spatial,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scenes: Vec<_> = (0..n)
            .map(|_| generate_scene(&cfg, &mut rng))
            .collect::<Result<_, _>>()?;
        let nu: f64 = scenes.iter().map(|s| s.landmarks.len() as f64).sum::<f64>() / n as f64;
        let mu: f64 = scenes.iter().map(|s| s.measurements.len() as f64).sum::<f64>() / n as f64;
        let pts = scenes.iter().flat_map(|s| s.landmarks.iter());
        let (sx, sy, c) = pts.fold((0.0, 0.0, 0.0), |(a, b, c), p| (a + p.x, b + p.y, c + 1.0));
        println!(
            "{name:>8}: mean landmarks {nu:.2}, mean measurements {mu:.2}, landmark centroid ({:.2}, {:.2})",
            sx / c,
            sy / c
        );
        if name == "mixture" {
            let rows: Vec<Scene> = scenes
                .into_iter()
                .enumerate()
                .map(|(i, s)| Scene {
                    t: i as f64,
                    gt_pose: Pose::default(),
                    gps_pose: Pose::default(),
                    measurements: s.measurements,
                    landmarks: Some(s.landmarks),
                })
                .collect();
            save_scenes(std::path::Path::new(&out), &rows)?;
            println!("wrote {} scenes to {out}", rows.len());
        }
    }
    Ok(())
}
