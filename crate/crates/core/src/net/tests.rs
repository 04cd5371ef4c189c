use super::*;
use crate::geometry::Point2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn small_cfg() -> NetConfig {
    NetConfig {
        d_model: 16,
        heads: 2,
        k: 4,
        embed_hidden: 8,
        block_hidden: 12,
        head_hidden: vec![8, 6],
        ..NetConfig::desk()
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, range: f64) -> PointSet {
    (0..n)
        .map(|_| Point2::new(rng.gen_range(-range..range), rng.gen_range(-range..range)))
        .collect()
}

#[test]
fn attention_over_single_key_returns_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let q = tape.constant(random(&mut rng, 3, 4));
    let k = tape.constant(random(&mut rng, 1, 4));
    let v = tape.constant(random(&mut rng, 1, 4));
    let (out, _) = scaled_dot_attention(&mut tape, q, k, v, Keys::Dense).unwrap();
    for r in 0..3 {
        assert_eq!(tape.value(out).row(r), tape.value(v).row(0));
    }
}

#[test]
fn identical_keys_average_values() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::from_rows(&[&[0.3, -1.2]]).unwrap());
    let k = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]).unwrap());
    let v = tape.constant(Tensor::from_rows(&[&[4.0, 0.0], &[0.0, -2.0]]).unwrap());
    let (out, _) = scaled_dot_attention(&mut tape, q, k, v, Keys::Dense).unwrap();
    assert_eq!(tape.value(out).data(), &[2.0, -1.0]);
}

#[test]
fn attention_weights_scale_by_inverse_sqrt_width() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::from_rows(&[&[1.0, 0.0]]).unwrap());
    let k = tape.constant(Tensor::identity(2));
    let (out, w) = scaled_dot_attention(&mut tape, q, k, k, Keys::Dense).unwrap();
    // softmax([1/sqrt(2), 0]) by hand
    let e = (1.0 / 2f64.sqrt()).exp();
    let expected = [e / (e + 1.0), 1.0 / (e + 1.0)];
    assert!((expected[0] - 0.6698).abs() < 1e-4 && (expected[1] - 0.3302).abs() < 1e-4);
    for (a, b) in tape.value(w).data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(tape.value(out).data(), tape.value(w).data());
}

#[test]
fn attention_rejects_width_mismatch() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::zeros(1, 3));
    let k = tape.constant(Tensor::zeros(2, 2));
    assert!(scaled_dot_attention(&mut tape, q, k, k, Keys::Dense).is_err());
}

fn random_block(tape: &mut Tape, rng: &mut ChaCha8Rng, d: usize, heads: usize, hidden: usize) -> BlockVars {
    let dh = d / heads;
    let mut proj = |tape: &mut Tape| (0..heads).map(|_| tape.leaf(random(rng, d, dh))).collect::<Vec<_>>();
    let query = proj(tape);
    let key = proj(tape);
    let value = proj(tape);
    BlockVars {
        query,
        key,
        value,
        output: tape.leaf(random(rng, d, d)),
        norm1: (tape.leaf(random(rng, 1, d)), tape.leaf(random(rng, 1, d))),
        ff: RowFfVars {
            layers: vec![
                (tape.leaf(random(rng, d, hidden)), tape.leaf(random(rng, 1, hidden))),
                (tape.leaf(random(rng, hidden, d)), tape.leaf(random(rng, 1, d))),
            ],
        },
        norm2: (tape.leaf(random(rng, 1, d)), tape.leaf(random(rng, 1, d))),
    }
}

#[test]
fn single_identity_head_reduces_to_plain_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let x = tape.constant(random(&mut rng, 3, 4));
    let y = tape.constant(random(&mut rng, 5, 4));
    let eye = tape.constant(Tensor::identity(4));
    let mut block = random_block(&mut tape, &mut rng, 4, 1, 3);
    block.query = vec![eye];
    block.key = vec![eye];
    block.value = vec![eye];
    block.output = eye;
    let mh = multi_head(&mut tape, x, y, &block, Keys::Dense, None).unwrap();
    let (plain, _) = scaled_dot_attention(&mut tape, x, y, y, Keys::Dense).unwrap();
    assert!(tape.value(mh).max_abs_diff(tape.value(plain)) < 1e-15);
}

#[test]
fn multi_head_shape_and_key_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for nk in 1..6 {
        let mut tape = Tape::new();
        let block = random_block(&mut tape, &mut rng, 8, 2, 5);
        let xs = random(&mut rng, 3, 8);
        let ys = random(&mut rng, nk, 8);
        let mut perm: Vec<usize> = (0..nk).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<f64> = perm.iter().flat_map(|&i| ys.row(i).to_vec()).collect();
        let x = tape.constant(xs);
        let y = tape.constant(ys);
        let y2 = tape.constant(Tensor::new(nk, 8, shuffled).unwrap());
        let a = multi_head(&mut tape, x, y, &block, Keys::Dense, None).unwrap();
        let b = multi_head(&mut tape, x, y2, &block, Keys::Dense, None).unwrap();
        assert_eq!(tape.value(a).shape(), (3, 8));
        assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-9);
    }
}

#[test]
fn mha_block_preserves_shape_and_degenerates_with_zero_ff() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tape = Tape::new();
    let mut block = random_block(&mut tape, &mut rng, 8, 4, 6);
    block.ff.layers[0].0 = tape.constant(Tensor::zeros(8, 6));
    block.ff.layers[1].0 = tape.constant(Tensor::zeros(6, 8));
    let x = tape.constant(random(&mut rng, 4, 8));
    let y = tape.constant(random(&mut rng, 7, 8));
    let out = mha_block(&mut tape, x, y, &block, Keys::Dense, None).unwrap();
    assert_eq!(tape.value(out).shape(), (4, 8));

    let mh = multi_head(&mut tape, x, y, &block, Keys::Dense, None).unwrap();
    let r = tape.add(x, mh).unwrap();
    let s = tape.layer_norm(r, block.norm1.0, block.norm1.1).unwrap();
    let bias_only = tape.add_row(s, block.ff.layers[1].1).unwrap();
    let expected = tape.layer_norm(bias_only, block.norm2.0, block.norm2.1).unwrap();
    assert!(tape.value(out).max_abs_diff(tape.value(expected)) < 1e-14);
}

#[test]
fn mha_block_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let block = random_block(&mut tape, &mut rng, 6, 2, 5);
    let x = tape.leaf(random(&mut rng, 3, 6));
    let y = tape.leaf(random(&mut rng, 4, 6));
    let n_leaves = tape.len();
    let weights = random(&mut rng, 3, 6);

    let eval = |tape: &mut Tape| -> f64 {
        let out = mha_block(tape, x, y, &block, Keys::Dense, None).unwrap();
        tape.value(out)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let leaves: Vec<Tensor> = (0..n_leaves).map(|i| tape.value(Var(i)).clone()).collect();
    let rebuild = |vals: &[Tensor]| {
        let mut t = Tape::new();
        for v in vals {
            t.leaf(v.clone());
        }
        t
    };

    let out = mha_block(&mut tape, x, y, &block, Keys::Dense, None).unwrap();
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w).unwrap();
    let loss = tape.sum(p);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..n_leaves {
        let analytic = grads.get(Var(i));
        let mut diff2 = 0.0;
        let mut norm_a: f64 = 0.0;
        let mut norm_n: f64 = 0.0;
        for e in 0..leaves[i].len() {
            let mut plus = leaves.clone();
            plus[i].data_mut()[e] += h;
            let mut minus = leaves.clone();
            minus[i].data_mut()[e] -= h;
            let num = (eval(&mut rebuild(&plus)) - eval(&mut rebuild(&minus))) / (2.0 * h);
            let a = analytic.data()[e];
            diff2 += (a - num).powi(2);
            norm_a += a * a;
            norm_n += num * num;
        }
        worst = worst.max(diff2.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-12));
    }
    assert!(worst < 1e-4, "rel err {worst}");
}

#[test]
fn local_attention_single_measurement_shape() {
    let net = Network::new(small_cfg()).unwrap();
    let params = net.init_params(1).unwrap();
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, &params, false);
    let m = PointSet::from_xy(&[[5.0, 1.0]]);
    let l = PointSet::from_xy(&[[5.5, 1.0], [9.0, -3.0]]);
    let (out, _) = net.local_attention(&mut tape, &bound, &m, &l, None).unwrap();
    assert_eq!(tape.value(out).shape(), (1, 16));
}

#[test]
fn local_attention_rows_are_equivariant_and_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::new(small_cfg()).unwrap();
    let params = net.init_params(2).unwrap();
    let m = random_set(&mut rng, 5, 30.0);
    let mut l = random_set(&mut rng, 12, 30.0);
    let rows = |m: &PointSet, l: &PointSet| {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, &params, false);
        let (out, groups) = net.local_attention(&mut tape, &bound, m, l, None).unwrap();
        (tape.value(out).clone(), groups)
    };
    let (base, groups) = rows(&m, &l);

    let perm = [3, 0, 4, 1, 2];
    let permuted: PointSet = perm.iter().map(|&i| m[i]).collect();
    let (shuffled, _) = rows(&permuted, &l);
    for (r, &i) in perm.iter().enumerate() {
        assert_eq!(shuffled.row(r), base.row(i));
    }

    let far = (0..l.len()).find(|j| !groups[0].indices.contains(j)).unwrap();
    l.0[far] = Point2::new(l[far].x + 0.5, l[far].y - 0.25);
    let (moved, groups2) = rows(&m, &l);
    assert_eq!(groups2[0].indices, groups[0].indices);
    assert_eq!(moved.row(0), base.row(0));
}

#[test]
fn forward_is_permutation_invariant_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Network::new(small_cfg()).unwrap();
    let params = net.init_params(3).unwrap();
    for _ in 0..20 {
        let nu = rng.gen_range(1..10);
        let mu = rng.gen_range(1..15);
        let m = random_set(&mut rng, nu, 40.0);
        let l = random_set(&mut rng, mu, 40.0);
        let base = net.forward(&params, &m, &l).unwrap();
        assert_eq!(base, net.forward(&params, &m, &l).unwrap());

        let mut ms = m.0.clone();
        let mut ls = l.0.clone();
        ms.shuffle(&mut rng);
        ls.shuffle(&mut rng);
        let out = net.forward(&params, &PointSet(ms), &PointSet(ls)).unwrap();
        for (a, b) in out.as_array().iter().zip(base.as_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn forward_rejects_empty_inputs() {
    let net = Network::new(small_cfg()).unwrap();
    let params = net.init_params(0).unwrap();
    let p = PointSet::from_xy(&[[1.0, 2.0]]);
    assert!(net.forward(&params, &PointSet::default(), &p).is_err());
    assert!(net.forward(&params, &p, &PointSet::default()).is_err());
}

#[test]
fn forward_is_finite_across_seeds() {
    let net = Network::new(small_cfg()).unwrap();
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = net.init_params(seed).unwrap();
        let (nu, mu) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let m = random_set(&mut rng, nu, 100.0);
        let l = random_set(&mut rng, mu, 100.0);
        let out = net.forward(&params, &m, &l).unwrap();
        assert!(out.is_finite(), "seed {seed}");
    }
}

#[test]
fn attention_maps_are_row_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = Network::new(small_cfg()).unwrap();
    let params = net.init_params(4).unwrap();
    let m = random_set(&mut rng, 6, 30.0);
    let l = random_set(&mut rng, 9, 30.0);
    let trace = net.forward_traced(&params, &m, &l).unwrap();
    assert_eq!(trace.local_weights.len(), 2);
    assert_eq!(trace.global_weights.len(), 2);
    assert_eq!(trace.local_weights[0].shape(), (6, 4));
    assert_eq!(trace.global_weights[0].shape(), (6, 6));
    for w in trace.local_weights.iter().chain(&trace.global_weights) {
        for r in 0..w.rows() {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(trace.offset, net.forward(&params, &m, &l).unwrap());
}
