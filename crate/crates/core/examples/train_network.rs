//! Trains the desk-scale network on synthetic mixture scenes and writes a
//! checkpoint plus the per-epoch loss.
//!
//! cargo run --release --example train_network -- [epochs] [scenes] [out_dir]

use std::path::PathBuf;

use attnloc::dataset_io::save_checkpoint;
use attnloc::net::{NetConfig, Network};
use attnloc::simulator::{generate_scene, SimConfig};
use attnloc::training::{train_from, SceneSource, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> attnloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(25);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/train".into()));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sim = SimConfig::default();
    let scenes: Vec<_> = (0..n)
        .map(|_| generate_scene(&sim, &mut rng))
        .collect::<Result<_, _>>()?;

    let net = Network::new(NetConfig::desk())?;
    let params = net.init_params(0)?;
    println!("{} parameters, {} scenes", params.count(), scenes.len());
    let cfg = TrainConfig {
        epochs,
        learning_rate: 1e-3,
        sigma_pos: 1.5,
        sigma_rot: 5f64.to_radians(),
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let outcome = train_from(&net, params, &cfg, &SceneSource::synthetic(scenes), |s| {
        println!(
            "epoch {:>3}  loss {:>8.4}  l_tran {:.4} m^2  l_rot {:.6} rad^2  s_tran {:.2}  s_rot {:.2}  ({:.0} s)",
            s.epoch,
            s.mean_loss,
            s.mean_tran,
            s.mean_rot,
            s.s_tran,
            s.s_rot,
            start.elapsed().as_secs_f64()
        )
    })?;
    let path = out.join("checkpoint.json");
    save_checkpoint(&path, &outcome.params, net.config())?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
