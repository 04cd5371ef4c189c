//! Offset labels, the uncertainty-weighted multi-task loss, Adam, and the
//! training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{perturb_points, utm_to_vehicle, wrap, PointSet, Pose, PoseOffset};
use crate::net::{ModelParams, Network};
use crate::simulator::SyntheticScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Bound of the uniform translation offset, meters.
    pub sigma_pos: f64,
    /// Bound of the uniform heading offset, radians.
    pub sigma_rot: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of each epoch drawn from map-backed scenes.
    pub mix_ratio: f64,
    /// Samples per epoch; `None` uses the size of both pools together.
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 1.0,
            sigma_rot: 4f64.to_radians(),
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-4,
            mix_ratio: 0.0,
            samples_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_pos >= 0.0 && self.sigma_rot >= 0.0)
            || !self.sigma_pos.is_finite()
            || !self.sigma_rot.is_finite()
        {
            return Err(Error::Config(
                "sigma_pos and sigma_rot must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config(format!(
                "mix_ratio must lie in [0, 1], got {}",
                self.mix_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One network input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub measurements: PointSet,
    pub landmarks: PointSet,
    pub label: PoseOffset,
}

/// A scene before an offset is applied: landmarks in the world frame plus the
/// true pose that maps them into the measurement frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    pub gt_pose: Pose,
    pub measurements: PointSet,
    pub landmarks: PointSet,
}

impl From<SyntheticScene> for SourceScene {
    fn from(s: SyntheticScene) -> Self {
        Self {
            gt_pose: Pose::default(),
            measurements: s.measurements,
            landmarks: s.landmarks,
        }
    }
}

/// Synthetic and map-backed scene pools.
#[derive(Debug, Clone, Default)]
pub struct SceneSource {
    pub synthetic: Vec<SourceScene>,
    pub map_backed: Vec<SourceScene>,
}

impl SceneSource {
    pub fn synthetic(scenes: impl IntoIterator<Item = SyntheticScene>) -> Self {
        Self {
            synthetic: scenes.into_iter().map(SourceScene::from).collect(),
            map_backed: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.synthetic.len() + self.map_backed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `dx, dy ~ U(-sigma_pos, sigma_pos)`, `dphi ~ U(-sigma_rot, sigma_rot)`.
pub fn sample_offset<R: Rng + ?Sized>(sigma_pos: f64, sigma_rot: f64, rng: &mut R) -> Result<PoseOffset> {
    if !(sigma_pos >= 0.0 && sigma_rot >= 0.0) {
        return Err(Error::Config("offset bounds must be non-negative".into()));
    }
    let mut u = |s: f64| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
    let dx = u(sigma_pos);
    let dy = u(sigma_pos);
    let dphi = u(sigma_rot);
    Ok(PoseOffset { dx, dy, dphi })
}

/// Moves the FoV landmarks into the vehicle frame of `gt_pose`, perturbs them
/// by a freshly drawn offset, and labels the sample with that offset.
pub fn make_training_sample<R: Rng + ?Sized>(
    landmarks: &PointSet,
    gt_pose: &Pose,
    measurements: &PointSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainSample> {
    if landmarks.is_empty() {
        return Err(Error::Empty("landmarks"));
    }
    if measurements.is_empty() {
        return Err(Error::Empty("measurements"));
    }
    let label = sample_offset(cfg.sigma_pos, cfg.sigma_rot, rng)?;
    Ok(TrainSample {
        measurements: measurements.clone(),
        landmarks: perturb_points(&utm_to_vehicle(landmarks, gt_pose), &label),
        label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub tran: f64,
    pub rot: f64,
}

/// Scalar form of the loss; the heading residual is wrapped.
pub fn multitask_loss(pred: &PoseOffset, label: &PoseOffset, s_tran: f64, s_rot: f64) -> LossParts {
    let tran = (pred.dx - label.dx).powi(2) + (pred.dy - label.dy).powi(2);
    let rot = wrap(pred.dphi - label.dphi).powi(2);
    LossParts {
        total: tran * (-s_tran).exp() + s_tran + rot * (-s_rot).exp() + s_rot,
        tran,
        rot,
    }
}

/// Tape form of [`multitask_loss`] on a raw `1 x 3` prediction. Returns
/// `(L_multi, L_tran, L_rot)`.
pub fn multitask_loss_on_tape(
    tape: &mut Tape,
    pred: Var,
    label: &PoseOffset,
    s_tran: Var,
    s_rot: Var,
) -> Result<(Var, Var, Var)> {
    let target = tape.constant(Tensor::from_vec_unchecked(1, 3, label.as_array().to_vec()));
    let diff = tape.sub(pred, target)?;
    let dt = tape.slice_cols(diff, 0, 2)?;
    let dr = tape.slice_cols(diff, 2, 1)?;
    // wrap is piecewise a shift by a multiple of 2 pi, so its derivative is 1
    let raw = tape.value(dr).item();
    let dr = tape.shift(dr, wrap(raw) - raw);
    let sq_t = tape.mul(dt, dt)?;
    let l_tran = tape.sum(sq_t);
    let l_rot = tape.mul(dr, dr)?;
    let weighted = |tape: &mut Tape, l: Var, s: Var| -> Result<Var> {
        let neg = tape.scale(s, -1.0);
        let w = tape.exp(neg);
        let lw = tape.mul(l, w)?;
        tape.add(lw, s)
    };
    let a = weighted(tape, l_tran, s_tran)?;
    let b = weighted(tape, l_rot, s_rot)?;
    let total = tape.add(a, b)?;
    Ok((total, l_tran, l_rot))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.is_empty() && state.step == 0 {
        *state = AdamState::new(params);
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Loss and gradients of one sample with respect to every parameter array.
pub fn sample_gradients(net: &Network, params: &ModelParams, sample: &TrainSample) -> Result<(LossParts, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, params, true);
    let pred = net.forward_on_tape(&mut tape, &bound, &sample.measurements, &sample.landmarks)?;
    let (total, l_tran, l_rot) = multitask_loss_on_tape(&mut tape, pred, &sample.label, bound.s_tran, bound.s_rot)?;
    let parts = LossParts {
        total: tape.value(total).item(),
        tran: tape.value(l_tran).item(),
        rot: tape.value(l_rot).item(),
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let mut grads = tape.backward(total)?;
    Ok((parts, bound.vars.iter().map(|&v| grads.take(v)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_tran: f64,
    pub mean_rot: f64,
    pub s_tran: f64,
    pub s_rot: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean `L_multi` per epoch.
    pub loss_history: Vec<f64>,
    pub epochs: Vec<EpochStats>,
}

/// Chooses the scenes of one epoch: `round(mix_ratio * n)` from the map-backed
/// pool, the rest synthetic, each pool cycled in a fresh random order.
fn epoch_plan<'a, R: Rng + ?Sized>(
    cfg: &TrainConfig,
    source: &'a SceneSource,
    rng: &mut R,
) -> Result<Vec<&'a SourceScene>> {
    let n = cfg.samples_per_epoch.unwrap_or(source.len());
    let n_map = (cfg.mix_ratio * n as f64).round() as usize;
    let n_syn = n - n_map;
    let mut draw = |pool: &'a [SourceScene], count: usize, name: &'static str| -> Result<Vec<&'a SourceScene>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if pool.is_empty() {
            return Err(Error::Empty(name));
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(rng);
            out.extend(order.into_iter().take(count - out.len()).map(|i| &pool[i]));
        }
        Ok(out)
    };
    let mut plan = draw(&source.map_backed, n_map, "map-backed scene pool")?;
    plan.extend(draw(&source.synthetic, n_syn, "synthetic scene pool")?);
    plan.shuffle(rng);
    Ok(plan)
}

/// Trains from the network's seeded initialisation.
pub fn train(net: &Network, cfg: &TrainConfig, source: &SceneSource) -> Result<TrainOutcome> {
    let params = net.init_params(net.config().seed)?;
    train_from(net, params, cfg, source, |_| {})
}

/// Trains starting from `params`; `on_epoch` observes per-epoch statistics.
/// Offsets are redrawn every epoch. Gradients are summed over a batch in
/// sample order, so results do not depend on anything but the inputs.
pub fn train_from(
    net: &Network,
    mut params: ModelParams,
    cfg: &TrainConfig,
    source: &SceneSource,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Empty("scene source"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(params.arrays());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let plan = epoch_plan(cfg, source, &mut rng)?;
        if plan.is_empty() {
            return Err(Error::Empty("epoch"));
        }
        let samples = plan
            .iter()
            .map(|s| make_training_sample(&s.landmarks, &s.gt_pose, &s.measurements, cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (mut sum_total, mut sum_tran, mut sum_rot) = (0.0, 0.0, 0.0);
        for batch in samples.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for sample in batch {
                let (parts, grads) = sample_gradients(net, &params, sample)?;
                sum_total += parts.total;
                sum_tran += parts.tran;
                sum_rot += parts.rot;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads
                .iter_mut()
                .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            adam_step(params.arrays_mut(), &grads, &mut adam, cfg.learning_rate)?;
        }
        let n = samples.len() as f64;
        let s = EpochStats {
            epoch,
            mean_loss: sum_total / n,
            mean_tran: sum_tran / n,
            mean_rot: sum_rot / n,
            s_tran: params.s_tran(net.layout()),
            s_rot: params.s_rot(net.layout()),
        };
        on_epoch(&s);
        history.push(s.mean_loss);
        stats.push(s);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
        epochs: stats,
    })
}
