//! Prints the local association weights of an untrained and a briefly
//! trained network for one scene: which landmark each measurement attends to.

use attnloc::geometry::{perturb_points, PointSet, PoseOffset};
use attnloc::net::{NetConfig, Network};
use attnloc::simulator::{generate_scene, SimConfig, SpatialModel};
use attnloc::training::{train_from, SceneSource, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(net: &Network, params: &attnloc::net::ModelParams, m: &PointSet, l: &PointSet) {
    let trace = net.forward_traced(params, m, l).unwrap();
    println!("predicted offset {:?}", trace.offset.as_array());
    let heads = trace.local_weights.len();
    for (i, group) in trace.neighbors.iter().enumerate() {
        let mean: Vec<f64> = (0..group.indices.len())
            .map(|j| trace.local_weights.iter().map(|w| w.get(i, j)).sum::<f64>() / heads as f64)
            .collect();
        let best = (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        println!(
            "  measurement {i:>2} -> landmark {:>2} (weight {:.2}, nearest is {:>2})",
            group.indices[best], mean[best], group.indices[0]
        );
    }
}

fn main() {
    let net = Network::new(NetConfig::desk()).unwrap();
    let sim = SimConfig {
        nu_min: 10,
        nu_max: 10,
        ..SimConfig::ideal(SpatialModel::default_gaussian())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scene = generate_scene(&sim, &mut rng).unwrap();
    let landmarks = perturb_points(&scene.landmarks, &PoseOffset::new(0.6, -0.4, 2f64.to_radians()));

    let params = net.init_params(0).unwrap();
    println!("untrained:");
    show(&net, &params, &scene.measurements, &landmarks);

    let pool: Vec<_> = (0..300)
        .map(|_| generate_scene(&SimConfig::default(), &mut rng).unwrap())
        .collect();
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        sigma_pos: 1.5,
        sigma_rot: 5f64.to_radians(),
        ..TrainConfig::default()
    };
    let trained = train_from(&net, params, &cfg, &SceneSource::synthetic(pool), |s| {
        eprintln!("epoch {} loss {:.4}", s.epoch, s.mean_loss)
    })
    .unwrap();
    println!("after {} epochs:", cfg.epochs);
    show(&net, &trained.params, &scene.measurements, &landmarks);
}
