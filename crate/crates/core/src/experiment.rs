//! Configured end-to-end runs: simulate, train, infer, evaluate.
//!
//! Every random draw derives from the single experiment seed, so a run is a
//! pure function of its configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{ekf_gps_baseline, IcpPredictor};
use crate::dataset_io::{load_checkpoint, load_scenes, save_checkpoint, save_scenes, Scene};
use crate::error::{Error, Result};
use crate::eval::{error_trace, save_trace, traces_to_svg, EvalReport, LatencyStats, TraceRow};
use crate::geometry::{vehicle_to_utm, Point2, Pose};
use crate::inference::{
    filter_inference_step, gps_inference, EkfConfig, FilterSession, OffsetPredictor, TrainedModel, ZeroPredictor,
};
use crate::io_util::write_atomic;
use crate::map::{load_map, save_map, LandmarkMap, DEFAULT_FOV_RADIUS};
use crate::net::{ModelParams, NetConfig, Network};
use crate::simulator::{
    generate_drive, generate_road_map, generate_scene, observe_map, DriveSegment, RoadMapConfig, SimConfig,
};
use crate::training::{train_from, EpochStats, SceneSource, SourceScene, TrainConfig};

/// Uniform GPS error half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpsNoise {
    pub sigma_xy: f64,
    pub sigma_phi_deg: f64,
}

impl Default for GpsNoise {
    fn default() -> Self {
        Self {
            sigma_xy: 1.0,
            sigma_phi_deg: 4.0,
        }
    }
}

impl GpsNoise {
    pub fn apply<R: Rng + ?Sized>(&self, truth: &Pose, rng: &mut R) -> Pose {
        let mut u = |s: f64| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
        let dx = u(self.sigma_xy);
        let dy = u(self.sigma_xy);
        let dphi = u(self.sigma_phi_deg.to_radians());
        Pose::new(truth.x + dx, truth.y + dy, truth.phi + dphi)
    }

    /// Covariance of the uniform error, or `None` when a component is noise free.
    pub fn covariance(&self) -> Option<[[f64; 3]; 3]> {
        if !(self.sigma_xy > 0.0 && self.sigma_phi_deg > 0.0) {
            return None;
        }
        let xy = self.sigma_xy.powi(2) / 3.0;
        let phi = self.sigma_phi_deg.to_radians().powi(2) / 3.0;
        Some([[xy, 0.0, 0.0], [0.0, xy, 0.0], [0.0, 0.0, phi]])
    }
}

/// A drive through a roadside landmark map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveConfig {
    pub start: Pose,
    pub segments: Vec<DriveSegment>,
    pub dt: f64,
    pub road: RoadMapConfig,
    /// Half-widths of the pose jitter around the road for map-backed training scenes.
    pub train_lateral_jitter: f64,
    pub train_heading_jitter_deg: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        let seg = |omega: f64, duration: f64| DriveSegment {
            v: 5.0,
            omega,
            duration,
        };
        Self {
            start: Pose::new(500_000.0, 5_300_000.0, 0.3),
            segments: vec![
                seg(0.0, 30.0),
                seg(0.06, 15.0),
                seg(0.0, 30.0),
                seg(-0.08, 15.0),
                seg(0.0, 30.0),
            ],
            dt: 0.1,
            road: RoadMapConfig::default(),
            train_lateral_jitter: 1.0,
            train_heading_jitter_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// Independent held-out synthetic scenes, each at a random world pose.
    Synthetic,
    /// Consecutive frames of the configured drive.
    Drive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalFrames {
    pub kind: FrameKind,
    /// Number of synthetic scenes; ignored for drives.
    pub scenes: usize,
}

impl Default for EvalFrames {
    fn default() -> Self {
        Self {
            kind: FrameKind::Synthetic,
            scenes: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Raw GPS pose, no correction.
    Zero,
    /// Network correction of the GPS pose.
    Gps,
    /// Network correction of the previous estimate, smoothed by the EKF.
    Filter,
    /// ICP correction of the GPS pose.
    Icp,
    /// EKF over raw GPS poses.
    EkfGps,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Zero => "zero",
            Method::Gps => "gps",
            Method::Filter => "filter",
            Method::Icp => "icp",
            Method::EkfGps => "ekf_gps",
        }
    }

    pub fn needs_network(self) -> bool {
        matches!(self, Method::Gps | Method::Filter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub sim: SimConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub ekf: EkfConfig,
    pub gps_noise: GpsNoise,
    pub fov_radius: f64,
    /// Size of the synthetic training pool.
    pub train_scenes: usize,
    /// Size of the map-backed training pool drawn along the drive.
    pub map_train_scenes: usize,
    pub drive: DriveConfig,
    pub eval: EvalFrames,
    pub methods: Vec<Method>,
    /// Load this checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
    /// Load scenes and map written by a previous `simulate` run from this directory.
    pub data_dir: Option<PathBuf>,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            sim: SimConfig::default(),
            net: NetConfig::desk(),
            train: TrainConfig::default(),
            ekf: EkfConfig::default(),
            gps_noise: GpsNoise::default(),
            fov_radius: DEFAULT_FOV_RADIUS,
            train_scenes: 2000,
            map_train_scenes: 0,
            drive: DriveConfig::default(),
            eval: EvalFrames::default(),
            methods: vec![Method::Zero, Method::Gps],
            checkpoint: None,
            data_dir: None,
            svg: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.ekf.validate()?;
        if !(self.fov_radius > 0.0) {
            return Err(Error::Config("fov_radius must be positive".into()));
        }
        if !(self.gps_noise.sigma_xy >= 0.0 && self.gps_noise.sigma_phi_deg >= 0.0) {
            return Err(Error::Config("gps noise must be non-negative".into()));
        }
        if self.eval.kind == FrameKind::Synthetic
            && self
                .methods
                .iter()
                .any(|m| matches!(m, Method::Filter | Method::EkfGps))
        {
            return Err(Error::Config(
                "filter methods need drive frames (eval.kind = \"drive\")".into(),
            ));
        }
        if self.eval.kind == FrameKind::Synthetic && self.eval.scenes == 0 {
            return Err(Error::Config("eval.scenes must be positive".into()));
        }
        if !(self.drive.dt > 0.0) {
            return Err(Error::Config("drive.dt must be positive".into()));
        }
        Ok(())
    }

    /// Independent random stream for one pipeline stage.
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn net_config(&self) -> NetConfig {
        NetConfig {
            seed: self.seed,
            ..self.net.clone()
        }
    }

    fn needs_map(&self) -> bool {
        self.eval.kind == FrameKind::Drive || self.map_train_scenes > 0
    }
}

const STREAM_TRAIN: u64 = 1;
const STREAM_MAP_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_ROAD: u64 = 4;

/// Scenes for training and evaluation, plus the map for map-backed scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub train: Vec<Scene>,
    pub eval: Vec<Scene>,
    pub map: Option<LandmarkMap>,
}

pub const TRAIN_SCENES_FILE: &str = "train_scenes.jsonl";
pub const EVAL_SCENES_FILE: &str = "eval_scenes.jsonl";
pub const MAP_FILE: &str = "map.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";

impl Datasets {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_scenes(&dir.join(TRAIN_SCENES_FILE), &self.train)?;
        save_scenes(&dir.join(EVAL_SCENES_FILE), &self.eval)?;
        if let Some(map) = &self.map {
            save_map(&dir.join(MAP_FILE), map)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let map_path = dir.join(MAP_FILE);
        Ok(Self {
            train: load_scenes(&dir.join(TRAIN_SCENES_FILE))?,
            eval: load_scenes(&dir.join(EVAL_SCENES_FILE))?,
            map: if map_path.exists() {
                Some(load_map(&map_path)?)
            } else {
                None
            },
        })
    }
}

fn drive_path(cfg: &ExperimentConfig) -> Result<Vec<Pose>> {
    generate_drive(cfg.drive.start, &cfg.drive.segments, cfg.drive.dt)
}

/// Generates every scene the configuration asks for.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Datasets> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_TRAIN);
    let mut train = Vec::with_capacity(cfg.train_scenes + cfg.map_train_scenes);
    for i in 0..cfg.train_scenes {
        let s = generate_scene(&cfg.sim, &mut rng)?;
        train.push(Scene {
            t: i as f64,
            gt_pose: Pose::default(),
            gps_pose: Pose::default(),
            measurements: s.measurements,
            landmarks: Some(s.landmarks),
        });
    }

    let (path, map) = if cfg.needs_map() {
        let path = drive_path(cfg)?;
        let map = generate_road_map(&path, &cfg.drive.road, &mut cfg.rng(STREAM_ROAD))?;
        (path, Some(map))
    } else {
        (Vec::new(), None)
    };

    if let Some(map) = &map {
        let mut rng = cfg.rng(STREAM_MAP_TRAIN);
        let (lat, head) = (
            cfg.drive.train_lateral_jitter,
            cfg.drive.train_heading_jitter_deg.to_radians(),
        );
        let mut made = 0;
        while made < cfg.map_train_scenes {
            let base = path[rng.gen_range(0..path.len())];
            let off = if lat > 0.0 { rng.gen_range(-lat..=lat) } else { 0.0 };
            let dphi = if head > 0.0 { rng.gen_range(-head..=head) } else { 0.0 };
            let normal = Point2::new(-base.phi.sin(), base.phi.cos());
            let gt = Pose::new(base.x + off * normal.x, base.y + off * normal.y, base.phi + dphi);
            match observe_map(map, &gt, cfg.fov_radius, &cfg.sim, &mut rng) {
                Ok((measurements, _)) => {
                    train.push(Scene {
                        t: made as f64,
                        gt_pose: gt,
                        gps_pose: gt,
                        measurements,
                        landmarks: None,
                    });
                    made += 1;
                }
                Err(Error::EmptyFov) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    let mut rng = cfg.rng(STREAM_EVAL);
    let eval = match cfg.eval.kind {
        FrameKind::Synthetic => (0..cfg.eval.scenes)
            .map(|i| {
                let s = generate_scene(&cfg.sim, &mut rng)?;
                let gt = Pose::new(
                    500_000.0 + rng.gen_range(-1000.0..1000.0),
                    5_300_000.0 + rng.gen_range(-1000.0..1000.0),
                    rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                );
                Ok(Scene {
                    t: i as f64,
                    gt_pose: gt,
                    gps_pose: cfg.gps_noise.apply(&gt, &mut rng),
                    measurements: s.measurements,
                    landmarks: Some(s.landmarks),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        FrameKind::Drive => {
            let map = map.as_ref().expect("drive frames build a map");
            path.iter()
                .enumerate()
                .map(|(i, gt)| {
                    let (measurements, _) = observe_map(map, gt, cfg.fov_radius, &cfg.sim, &mut rng)?;
                    Ok(Scene {
                        t: i as f64 * cfg.drive.dt,
                        gt_pose: *gt,
                        gps_pose: cfg.gps_noise.apply(gt, &mut rng),
                        measurements,
                        landmarks: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(Datasets { train, eval, map })
}

/// Training pools from saved scenes: scenes carrying landmarks are
/// synthetic, the rest are map-backed.
pub fn scene_source(data: &Datasets, fov_radius: f64) -> Result<SceneSource> {
    let mut source = SceneSource::default();
    for s in &data.train {
        match &s.landmarks {
            Some(l) => source.synthetic.push(SourceScene {
                gt_pose: s.gt_pose,
                measurements: s.measurements.clone(),
                landmarks: vehicle_to_utm(l, &s.gt_pose),
            }),
            None => {
                let map = data
                    .map
                    .as_ref()
                    .ok_or_else(|| Error::Config("map-backed scenes need a map".into()))?;
                let landmarks = map.query_fov(&s.gt_pose, fov_radius);
                if landmarks.is_empty() {
                    return Err(Error::EmptyFov);
                }
                source.map_backed.push(SourceScene {
                    gt_pose: s.gt_pose,
                    measurements: s.measurements.clone(),
                    landmarks,
                });
            }
        }
    }
    Ok(source)
}

/// Trains the configured network; `on_epoch` observes progress.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &Datasets,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(TrainedModel, Vec<EpochStats>)> {
    let net = Network::new(cfg.net_config())?;
    let params = net.init_params(cfg.seed)?;
    let source = scene_source(data, cfg.fov_radius)?;
    let outcome = train_from(&net, params, &cfg.train_config(), &source, on_epoch)?;
    Ok((
        TrainedModel {
            net,
            params: outcome.params,
        },
        outcome.epochs,
    ))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let (params, cfg): (ModelParams, NetConfig) = load_checkpoint(path)?;
    Ok(TrainedModel {
        net: Network::new(cfg)?,
        params,
    })
}

/// Map used to correct one frame: the shared map, or one built from the
/// scene's own landmarks.
fn frame_map<'a>(
    scene: &Scene,
    shared: Option<&'a LandmarkMap>,
    own: &'a mut Option<LandmarkMap>,
) -> Result<&'a LandmarkMap> {
    match (&scene.landmarks, shared) {
        (Some(l), _) => {
            *own = Some(LandmarkMap::from_points(&vehicle_to_utm(l, &scene.gt_pose))?);
            Ok(own.as_ref().expect("just set"))
        }
        (None, Some(m)) => Ok(m),
        (None, None) => Err(Error::Config("scene has neither landmarks nor a map".into())),
    }
}

/// Estimated poses of `method` for every evaluation frame, with per-frame latency in ms.
pub fn infer(
    cfg: &ExperimentConfig,
    method: Method,
    model: Option<&TrainedModel>,
    data: &Datasets,
) -> Result<(Vec<Pose>, Vec<f64>)> {
    if data.eval.is_empty() {
        return Err(Error::Empty("evaluation scenes"));
    }
    let icp = IcpPredictor::default();
    let predictor: &dyn OffsetPredictor = match method {
        Method::Gps | Method::Filter => {
            model.ok_or_else(|| Error::Config(format!("method `{}` needs a trained network", method.name())))?
        }
        Method::Icp => &icp,
        Method::Zero | Method::EkfGps => &ZeroPredictor,
    };
    let mut poses = Vec::with_capacity(data.eval.len());
    let mut latency = Vec::with_capacity(data.eval.len());
    match method {
        Method::Zero => poses.extend(data.eval.iter().map(|s| s.gps_pose)),
        Method::Gps | Method::Icp => {
            for s in &data.eval {
                let mut own = None;
                let map = frame_map(s, data.map.as_ref(), &mut own)?;
                let start = Instant::now();
                poses.push(gps_inference(
                    predictor,
                    map,
                    &s.measurements,
                    &s.gps_pose,
                    cfg.fov_radius,
                )?);
                latency.push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
        Method::EkfGps => {
            let gps: Vec<Pose> = data.eval.iter().map(|s| s.gps_pose).collect();
            // The baseline filter trusts GPS exactly as much as the injected noise warrants.
            let mut ekf = cfg.ekf.clone();
            if let Some(r) = cfg.gps_noise.covariance() {
                ekf.measurement_cov = r;
            }
            poses = ekf_gps_baseline(&gps, cfg.drive.dt, &ekf)?;
        }
        Method::Filter => {
            let map = data
                .map
                .as_ref()
                .ok_or_else(|| Error::Config("filter inference needs a map".into()))?;
            let first = &data.eval[0];
            let mut session = FilterSession::new(&first.gps_pose, cfg.ekf.clone(), cfg.fov_radius)?;
            poses.push(session.estimate());
            for pair in data.eval.windows(2) {
                let start = Instant::now();
                poses.push(filter_inference_step(
                    &mut session,
                    predictor,
                    map,
                    &pair[1].measurements,
                    pair[1].t - pair[0].t,
                )?);
                latency.push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
    }
    Ok((poses, latency))
}

/// Error trace and report of `method` over the evaluation frames.
pub fn evaluate(
    cfg: &ExperimentConfig,
    method: Method,
    model: Option<&TrainedModel>,
    data: &Datasets,
) -> Result<(EvalReport, Vec<TraceRow>)> {
    let (poses, latency) = infer(cfg, method, model, data)?;
    let times: Vec<f64> = data.eval.iter().map(|s| s.t).collect();
    let gts: Vec<Pose> = data.eval.iter().map(|s| s.gt_pose).collect();
    let trace = error_trace(&times, &poses, &gts)?;
    let report = EvalReport::from_trace(method.name(), &trace, LatencyStats::from_samples(&latency))?;
    Ok((report, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub parameter_count: Option<usize>,
    pub results: Vec<EvalReport>,
}

impl ExperimentReport {
    pub fn result(&self, method: Method) -> Option<&EvalReport> {
        self.results.iter().find(|r| r.method == method.name())
    }
}

/// Writes `report.json`, one `trace_<method>.csv` per method, `timing.json`,
/// and `traces.svg` when enabled.
pub fn write_reports(
    out: &Path,
    report: &ExperimentReport,
    traces: &[(Method, Vec<TraceRow>)],
    svg: bool,
) -> Result<()> {
    write_atomic(
        &out.join(REPORT_FILE),
        format!("{}\n", serde_json::to_string_pretty(report)?).as_bytes(),
    )?;
    for (m, t) in traces {
        save_trace(&out.join(format!("trace_{}.csv", m.name())), t)?;
    }
    let timing: Vec<(String, Option<LatencyStats>)> =
        report.results.iter().map(|r| (r.method.clone(), r.latency)).collect();
    write_atomic(
        &out.join("timing.json"),
        serde_json::to_string_pretty(&timing)?.as_bytes(),
    )?;
    if svg {
        let series: Vec<(&str, &[TraceRow])> = traces.iter().map(|(m, t)| (m.name(), t.as_slice())).collect();
        write_atomic(&out.join("traces.svg"), traces_to_svg(&series).as_bytes())?;
    }
    Ok(())
}

pub fn save_loss_history(path: &Path, epochs: &[EpochStats]) -> Result<()> {
    let mut csv = String::from("epoch,loss,l_tran,l_rot,s_tran,s_rot\n");
    for e in epochs {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.mean_loss, e.mean_tran, e.mean_rot, e.s_tran, e.s_rot
        ));
    }
    write_atomic(path, csv.as_bytes())
}

/// Data from `data_dir` when configured, otherwise freshly simulated.
pub fn datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    match &cfg.data_dir {
        Some(dir) => Datasets::load(dir),
        None => simulate(cfg),
    }
}

/// Runs every stage and writes all artifacts under `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<ExperimentReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let data = datasets(cfg).map_err(|e| e.in_stage("simulate"))?;
    data.save(out).map_err(|e| e.in_stage("simulate"))?;

    let model = if cfg.methods.iter().any(|m| m.needs_network()) {
        let model = match &cfg.checkpoint {
            Some(path) => load_model(path).map_err(|e| e.in_stage("train"))?,
            None => {
                let (model, epochs) = train_model(cfg, &data, &mut on_epoch).map_err(|e| e.in_stage("train"))?;
                save_loss_history(&out.join("loss.csv"), &epochs).map_err(|e| e.in_stage("train"))?;
                model
            }
        };
        save_checkpoint(&out.join(CHECKPOINT_FILE), &model.params, model.net.config())
            .map_err(|e| e.in_stage("train"))?;
        Some(model)
    } else {
        None
    };

    let mut results = Vec::new();
    let mut traces = Vec::new();
    for &method in &cfg.methods {
        let (report, trace) = evaluate(cfg, method, model.as_ref(), &data).map_err(|e| e.in_stage("infer"))?;
        results.push(report);
        traces.push((method, trace));
    }
    let report = ExperimentReport {
        name: cfg.name.clone(),
        seed: cfg.seed,
        parameter_count: model.as_ref().map(|m| m.params.count()),
        results,
    };
    write_reports(out, &report, &traces, cfg.svg).map_err(|e| e.in_stage("eval"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            net: NetConfig {
                d_model: 8,
                heads: 2,
                k: 4,
                embed_hidden: 8,
                block_hidden: 8,
                head_hidden: vec![8],
                ..NetConfig::desk()
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 4,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            train_scenes: 8,
            eval: EvalFrames {
                kind: FrameKind::Synthetic,
                scenes: 5,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn gps_noise_levels_and_mix_ratios_are_accepted() {
        for (xy, phi) in [(2.0, 10.0), (1.0, 4.0), (0.5, 2.0)] {
            let cfg = ExperimentConfig {
                gps_noise: GpsNoise {
                    sigma_xy: xy,
                    sigma_phi_deg: phi,
                },
                ..tiny()
            };
            cfg.validate().unwrap();
        }
        for mix in [0.0, 0.05, 0.5] {
            let mut cfg = tiny();
            cfg.train.mix_ratio = mix;
            cfg.validate().unwrap();
        }
        let text = r#"{"gps_noise": {"sigma_xy": 2.0, "sigma_phi_deg": 10.0}, "train": {"mix_ratio": 0.05}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.train.mix_ratio, 0.05);
        assert_eq!(cfg.gps_noise.sigma_xy, 2.0);
    }

    #[test]
    fn filter_on_synthetic_frames_is_a_config_error() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Filter],
            ..tiny()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_runs_write_identical_artifacts() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Zero, Method::Gps, Method::Icp],
            svg: true,
            ..tiny()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&cfg, a.path(), |_| {}).unwrap();
        run_experiment(&cfg, b.path(), |_| {}).unwrap();
        for f in [
            REPORT_FILE,
            CHECKPOINT_FILE,
            "trace_gps.csv",
            TRAIN_SCENES_FILE,
            EVAL_SCENES_FILE,
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert!(a.path().join("traces.svg").exists());
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let cfg = ExperimentConfig {
            checkpoint: Some(PathBuf::from("/nonexistent/ckpt.json")),
            ..tiny()
        };
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, dir.path(), |_| {}).unwrap_err();
        assert!(err.to_string().starts_with("train:"), "{err}");
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn saved_datasets_reload_exactly() {
        let cfg = ExperimentConfig {
            map_train_scenes: 5,
            train: TrainConfig {
                mix_ratio: 0.5,
                ..tiny().train
            },
            ..tiny()
        };
        let data = simulate(&cfg).unwrap();
        assert!(data.map.is_some());
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        assert_eq!(Datasets::load(dir.path()).unwrap(), data);
        let src = scene_source(&data, cfg.fov_radius).unwrap();
        assert_eq!((src.synthetic.len(), src.map_backed.len()), (8, 5));
    }
}
