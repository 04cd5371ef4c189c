//! Central finite differences against reverse-mode gradients for the full
//! network on a small scene.

use attnloc::autodiff::{Tape, Tensor};
use attnloc::geometry::{PointSet, PoseOffset};
use attnloc::net::{NetConfig, Network};
use attnloc::training::multitask_loss_on_tape;

fn loss(net: &Network, params: &attnloc::net::ModelParams, m: &PointSet, l: &PointSet, label: &PoseOffset) -> f64 {
    let mut tape = Tape::new();
    let b = net.bind(&mut tape, params, false);
    let out = net.forward_on_tape(&mut tape, &b, m, l).unwrap();
    let (total, _, _) = multitask_loss_on_tape(&mut tape, out, label, b.s_tran, b.s_rot).unwrap();
    tape.value(total).item()
}

fn main() {
    let cfg = NetConfig {
        d_model: 16,
        heads: 2,
        k: 4,
        embed_hidden: 16,
        block_hidden: 32,
        head_hidden: vec![16],
        ..NetConfig::desk()
    };
    let net = Network::new(cfg).unwrap();
    let params = net.init_params(3).unwrap();
    let m = PointSet::from_xy(&[[12.0, 1.5], [25.0, -2.0], [31.0, 2.2]]);
    let l = PointSet::from_xy(&[[12.3, 1.1], [24.6, -1.7], [30.5, 2.0], [44.0, -3.0], [8.0, 0.5]]);
    let label = PoseOffset::new(0.3, -0.2, 0.02);

    let mut tape = Tape::new();
    let b = net.bind(&mut tape, &params, true);
    let out = net.forward_on_tape(&mut tape, &b, &m, &l).unwrap();
    let (total, _, _) = multitask_loss_on_tape(&mut tape, out, &label, b.s_tran, b.s_rot).unwrap();
    let grads = tape.backward(total).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, name) in params.names().iter().enumerate() {
        let analytic = grads.get(b.vars[i]);
        let mut fd = Tensor::zeros(analytic.rows(), analytic.cols());
        for j in 0..analytic.len() {
            let mut p = params.clone();
            p.arrays_mut()[i].data_mut()[j] += h;
            let up = loss(&net, &p, &m, &l, &label);
            p.arrays_mut()[i].data_mut()[j] -= 2.0 * h;
            let down = loss(&net, &p, &m, &l, &label);
            fd.data_mut()[j] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(fd.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic
            .data()
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(fd.data().iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale > 1e-12 { diff / scale } else { diff };
        worst = worst.max(rel);
        println!("{name:<28} {:>6} values  rel err {rel:.2e}", analytic.len());
    }
    println!("worst relative error {worst:.2e}");
}
