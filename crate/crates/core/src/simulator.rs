//! Synthetic training data: landmark/measurement scenes drawn from a
//! spatial Gaussian (or two-component mixture), degraded by Poisson clutter,
//! Poisson missed detections and uniform position noise. Also generates
//! CTRV drives and roadside landmark maps for map-backed scenes.

use nalgebra::{Matrix2, Vector2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{utm_to_vehicle, Point2, PointSet, Pose, PoseOffset};
use crate::map::{Landmark, LandmarkMap};

/// Spatial law of the landmarks around the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialModel {
    Gaussian {
        mean: [f64; 2],
        cov: [[f64; 2]; 2],
    },
    /// Density proportional to `N1 + lambda2 * N2`.
    Mixture {
        mean1: [f64; 2],
        cov1: [[f64; 2]; 2],
        mean2: [f64; 2],
        cov2: [[f64; 2]; 2],
        lambda2: f64,
    },
}

impl SpatialModel {
    /// `mu = [20, 0]`, `Sigma = diag(100, 15)`.
    pub fn default_gaussian() -> Self {
        SpatialModel::Gaussian {
            mean: [20.0, 0.0],
            cov: [[100.0, 0.0], [0.0, 15.0]],
        }
    }

    /// Two roadside lobes at `y = -2` and `y = 2`, `Sigma = diag(120, 1)`, `lambda2 = 0.6`.
    pub fn default_mixture() -> Self {
        SpatialModel::Mixture {
            mean1: [20.0, -2.0],
            cov1: [[120.0, 0.0], [0.0, 1.0]],
            mean2: [20.0, 2.0],
            cov2: [[120.0, 0.0], [0.0, 1.0]],
            lambda2: 0.6,
        }
    }

    /// Probability of drawing from the second component.
    pub fn second_component_weight(&self) -> f64 {
        match self {
            SpatialModel::Gaussian { .. } => 0.0,
            SpatialModel::Mixture { lambda2, .. } => lambda2 / (1.0 + lambda2),
        }
    }
}

/// Axis-aligned box in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub spatial: SpatialModel,
    pub nu_min: usize,
    pub nu_max: usize,
    pub lambda_clutter: f64,
    pub lambda_miss: f64,
    /// Half-width of the uniform per-coordinate measurement noise, meters.
    pub sigma_noise: f64,
    pub clutter_region: Region,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            spatial: SpatialModel::default_mixture(),
            nu_min: 8,
            nu_max: 24,
            lambda_clutter: 1.0,
            lambda_miss: 1.0,
            sigma_noise: 0.1,
            clutter_region: Region {
                min: [-10.0, -20.0],
                max: [60.0, 20.0],
            },
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Ideal sensor: no clutter, no misses, no noise.
    pub fn ideal(spatial: SpatialModel) -> Self {
        Self {
            spatial,
            lambda_clutter: 0.0,
            lambda_miss: 0.0,
            sigma_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu_min == 0 || self.nu_min > self.nu_max {
            return Err(Error::Config(format!(
                "need 1 <= nu_min <= nu_max, got {}..{}",
                self.nu_min, self.nu_max
            )));
        }
        let rate_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !rate_ok(self.lambda_clutter) || !rate_ok(self.lambda_miss) || !rate_ok(self.sigma_noise) {
            return Err(Error::Config("rates and noise must be finite and non-negative".into()));
        }
        let r = &self.clutter_region;
        if !(r.min[0] <= r.max[0] && r.min[1] <= r.max[1]) {
            return Err(Error::Config("clutter region min must not exceed max".into()));
        }
        if let SpatialModel::Mixture { lambda2, .. } = self.spatial {
            if !rate_ok(lambda2) {
                return Err(Error::Config("lambda2 must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Gaussian sampler through the Cholesky factor of the covariance.
#[derive(Debug, Clone, Copy)]
struct Gaussian2 {
    mean: Vector2<f64>,
    chol: Matrix2<f64>,
}

impl Gaussian2 {
    fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let m = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
        if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * m.norm().max(1.0) {
            return Err(Error::Config("covariance must be symmetric".into()));
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Config("covariance must be positive definite".into()))?;
        Ok(Self {
            mean: Vector2::new(mean[0], mean[1]),
            chol: chol.l(),
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let z = Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let p = self.mean + self.chol * z;
        Point2::new(p.x, p.y)
    }
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as usize
}

/// Draws `nu ~ U{nu_min..=nu_max}` landmark positions from the spatial model.
pub fn sample_landmarks<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<PointSet> {
    cfg.validate()?;
    let nu = rng.gen_range(cfg.nu_min..=cfg.nu_max);
    match cfg.spatial {
        SpatialModel::Gaussian { mean, cov } => {
            let g = Gaussian2::new(mean, cov)?;
            Ok((0..nu).map(|_| g.sample(rng)).collect())
        }
        SpatialModel::Mixture {
            mean1,
            cov1,
            mean2,
            cov2,
            ..
        } => {
            let (g1, g2) = (Gaussian2::new(mean1, cov1)?, Gaussian2::new(mean2, cov2)?);
            let w2 = cfg.spatial.second_component_weight();
            Ok((0..nu)
                .map(|_| {
                    if rng.gen::<f64>() < w2 {
                        g2.sample(rng)
                    } else {
                        g1.sample(rng)
                    }
                })
                .collect())
        }
    }
}

/// Turns ideal landmarks into measurements: Poisson misses (never removing the
/// last point), uniform noise on the survivors, then Poisson clutter uniform
/// over the clutter region.
pub fn degrade<R: Rng + ?Sized>(landmarks: &PointSet, cfg: &SimConfig, rng: &mut R) -> Result<PointSet> {
    cfg.validate()?;
    if landmarks.is_empty() {
        return Err(Error::Empty("landmarks"));
    }
    let n = landmarks.len();
    let n_miss = poisson(cfg.lambda_miss, rng).min(n - 1);
    let mut keep = vec![true; n];
    for i in sample(rng, n, n_miss) {
        keep[i] = false;
    }
    let mut out: Vec<Point2> = landmarks
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    if cfg.sigma_noise > 0.0 {
        let s = cfg.sigma_noise;
        for p in &mut out {
            p.x += rng.gen_range(-s..=s);
            p.y += rng.gen_range(-s..=s);
        }
    }
    let n_clutter = poisson(cfg.lambda_clutter, rng);
    let r = cfg.clutter_region;
    for _ in 0..n_clutter {
        out.push(Point2::new(
            rng.gen_range(r.min[0]..=r.max[0]),
            rng.gen_range(r.min[1]..=r.max[1]),
        ));
    }
    Ok(PointSet(out))
}

/// One synthetic sample in the vehicle frame. The label is left at zero;
/// offsets are applied when training samples are built.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub measurements: PointSet,
    pub landmarks: PointSet,
    pub label: PoseOffset,
}

/// Samples landmarks, duplicates them and degrades the copy into measurements.
pub fn generate_scene<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SyntheticScene> {
    let landmarks = sample_landmarks(cfg, rng)?;
    let measurements = degrade(&landmarks, cfg, rng)?;
    Ok(SyntheticScene {
        measurements,
        landmarks,
        label: PoseOffset::ZERO,
    })
}

/// Closed-form constant turn rate and velocity step; straight line when `|omega| < 1e-6`.
pub fn ctrv_step(pose: &Pose, v: f64, omega: f64, dt: f64) -> Pose {
    let phi = pose.phi;
    if omega.abs() < 1e-6 {
        let (s, c) = phi.sin_cos();
        Pose::new(pose.x + v * dt * c, pose.y + v * dt * s, phi + omega * dt)
    } else {
        let r = v / omega;
        let phi2 = phi + omega * dt;
        Pose::new(
            pose.x + r * (phi2.sin() - phi.sin()),
            pose.y + r * (phi.cos() - phi2.cos()),
            phi2,
        )
    }
}

/// `steps + 1` poses starting at `start`.
pub fn generate_trajectory(start: Pose, v: f64, omega: f64, dt: f64, steps: usize) -> Result<Vec<Pose>> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let mut poses = Vec::with_capacity(steps + 1);
    poses.push(start);
    for _ in 0..steps {
        let last = *poses.last().expect("non-empty");
        poses.push(ctrv_step(&last, v, omega, dt));
    }
    Ok(poses)
}

/// A drive made of constant-(v, omega) segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSegment {
    pub v: f64,
    pub omega: f64,
    pub duration: f64,
}

pub fn generate_drive(start: Pose, segments: &[DriveSegment], dt: f64) -> Result<Vec<Pose>> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let mut poses = vec![start];
    for seg in segments {
        let steps = (seg.duration / dt).round() as usize;
        let last = *poses.last().expect("non-empty");
        poses.extend(
            generate_trajectory(last, seg.v, seg.omega, dt, steps)?
                .into_iter()
                .skip(1),
        );
    }
    Ok(poses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadMapConfig {
    /// Mean spacing of landmarks along each road side, meters.
    pub spacing: f64,
    /// Lateral distance of each side from the centerline, meters.
    pub lateral: f64,
    /// Std-dev of lateral jitter, meters.
    pub lateral_jitter: f64,
}

impl Default for RoadMapConfig {
    fn default() -> Self {
        Self {
            spacing: 6.0,
            lateral: 5.0,
            lateral_jitter: 1.5,
        }
    }
}

/// Landmarks scattered along both sides of `path`, UTM coordinates, ids in placement order.
pub fn generate_road_map<R: Rng + ?Sized>(path: &[Pose], cfg: &RoadMapConfig, rng: &mut R) -> Result<LandmarkMap> {
    if path.len() < 2 {
        return Err(Error::Empty("road path"));
    }
    if !(cfg.spacing > 0.0) {
        return Err(Error::Config("spacing must be positive".into()));
    }
    let mut landmarks = Vec::new();
    let mut travelled = 0.0;
    let mut next = [rng.gen_range(0.0..cfg.spacing), rng.gen_range(0.0..cfg.spacing)];
    for w in path.windows(2) {
        let seg = w[1].position() - w[0].position();
        let len = seg.norm();
        for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            while next[side] <= travelled + len {
                let t = if len > 0.0 { (next[side] - travelled) / len } else { 0.0 };
                let base = Point2::new(w[0].x + t * seg.x, w[0].y + t * seg.y);
                let normal = Point2::new(-w[0].phi.sin(), w[0].phi.cos());
                let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.lateral_jitter;
                let lat = sign * (cfg.lateral + jitter.abs());
                let along: f64 = rng.gen_range(-0.5..0.5);
                let (c, s) = (w[0].phi.cos(), w[0].phi.sin());
                landmarks.push(Landmark {
                    id: landmarks.len() as u64,
                    position: Point2::new(base.x + lat * normal.x + along * c, base.y + lat * normal.y + along * s),
                });
                next[side] += cfg.spacing * rng.gen_range(0.5..1.5);
            }
        }
        travelled += len;
    }
    LandmarkMap::new(landmarks)
}

/// Measurements for a vehicle at `truth`: visible map landmarks in the vehicle
/// frame, degraded like synthetic scenes. Returns `(measurements, true vehicle-frame landmarks)`.
pub fn observe_map<R: Rng + ?Sized>(
    map: &LandmarkMap,
    truth: &Pose,
    fov_radius: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(PointSet, PointSet)> {
    let visible = utm_to_vehicle(&map.query_fov(truth, fov_radius), truth);
    if visible.is_empty() {
        return Err(Error::EmptyFov);
    }
    let measurements = degrade(&visible, cfg, rng)?;
    Ok((measurements, visible))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn fixed_cardinality() {
        let cfg = SimConfig {
            nu_min: 5,
            nu_max: 5,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_landmarks(&cfg, &mut rng).unwrap().len(), 5);
        }
    }

    #[test]
    fn degenerate_covariance_collapses_to_mean() {
        let cfg = SimConfig {
            spatial: SpatialModel::Gaussian {
                mean: [20.0, 0.0],
                cov: [[1e-12, 0.0], [0.0, 1e-12]],
            },
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in sample_landmarks(&cfg, &mut rng).unwrap().iter() {
            assert!((p.x - 20.0).abs() < 1e-4 && p.y.abs() < 1e-4);
        }
    }

    #[test]
    fn non_positive_definite_covariance_is_rejected() {
        let cfg = SimConfig {
            spatial: SpatialModel::Gaussian {
                mean: [0.0, 0.0],
                cov: [[1.0, 2.0], [2.0, 1.0]],
            },
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_landmarks(&cfg, &mut rng).is_err());
    }

    #[test]
    fn mixture_weight_normalises_lambda() {
        assert!((SpatialModel::default_mixture().second_component_weight() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn ideal_sensor_copies_landmarks() {
        let cfg = SimConfig::ideal(SpatialModel::default_gaussian());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = generate_scene(&cfg, &mut rng).unwrap();
            assert_eq!(s.measurements, s.landmarks);
        }
    }

    #[test]
    fn huge_miss_rate_keeps_one_measurement() {
        let cfg = SimConfig {
            lambda_miss: 1e6,
            lambda_clutter: 0.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = PointSet::from_xy(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        for _ in 0..20 {
            assert_eq!(degrade(&l, &cfg, &mut rng).unwrap().len(), 1);
        }
        assert!(degrade(&PointSet::default(), &cfg, &mut rng).is_err());
    }

    #[test]
    fn clutter_stays_in_region_and_noise_is_bounded() {
        let cfg = SimConfig {
            lambda_miss: 0.0,
            lambda_clutter: 5.0,
            sigma_noise: 0.3,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = PointSet::from_xy(&[[10.0, 1.0], [25.0, -3.0], [40.0, 2.0]]);
        for _ in 0..200 {
            let m = degrade(&l, &cfg, &mut rng).unwrap();
            for (a, b) in m.iter().zip(&l) {
                assert!((a.x - b.x).abs() <= 0.3 && (a.y - b.y).abs() <= 0.3);
            }
            assert!(m.iter().skip(3).all(|p| cfg.clutter_region.contains(p)));
        }
    }

    #[test]
    fn scene_generation_is_seeded() {
        let cfg = SimConfig::default();
        let a = generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!((cfg.nu_min..=cfg.nu_max).contains(&a.landmarks.len()));
    }

    #[test]
    fn clutter_count_matches_rate() {
        let cfg = SimConfig {
            lambda_miss: 0.0,
            lambda_clutter: 2.0,
            sigma_noise: 0.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = PointSet::from_xy(&[[10.0, 0.0]]);
        let n = 10_000;
        let added: usize = (0..n).map(|_| degrade(&l, &cfg, &mut rng).unwrap().len() - 1).sum();
        let mean = added as f64 / n as f64;
        assert!((mean - 2.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn mean_scene_size_tracks_rates() {
        // nu >= 8 and lambda_miss = 1 keep the miss cap practically inactive
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let diffs: Vec<f64> = (0..n)
            .map(|_| {
                let s = generate_scene(&cfg, &mut rng).unwrap();
                s.measurements.len() as f64 - s.landmarks.len() as f64
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = cfg.lambda_clutter - cfg.lambda_miss;
        assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn trajectory_examples() {
        let start = Pose::new(3.0, -1.0, 0.4);
        let still = generate_trajectory(start, 0.0, 0.0, 0.5, 5).unwrap();
        assert!(still.iter().all(|p| *p == start));

        let straight = generate_trajectory(Pose::default(), 1.0, 0.0, 1.0, 10).unwrap();
        for (i, p) in straight.iter().enumerate() {
            assert!((p.x - i as f64).abs() < 1e-12 && p.y.abs() < 1e-12);
        }

        let arc = generate_trajectory(Pose::default(), 1.0, FRAC_PI_2, 1.0, 1).unwrap();
        let r = 2.0 / std::f64::consts::PI;
        assert!((arc[1].x - r).abs() < 1e-12 && (arc[1].y - r).abs() < 1e-12);
        assert!((arc[1].phi - FRAC_PI_2).abs() < 1e-12);

        assert!(generate_trajectory(start, 1.0, 0.0, 0.0, 3).is_err());
    }

    #[test]
    fn road_map_lines_the_path() {
        let path = generate_trajectory(Pose::new(1000.0, 2000.0, 0.3), 5.0, 0.01, 0.5, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = generate_road_map(&path, &RoadMapConfig::default(), &mut rng).unwrap();
        assert!(map.len() > 50);
        for p in &path {
            let (m, l) = observe_map(
                &map,
                p,
                60.0,
                &SimConfig::ideal(SpatialModel::default_gaussian()),
                &mut rng,
            )
            .unwrap();
            assert_eq!(m, l);
            assert!(l.len() >= 5);
        }
    }
}
