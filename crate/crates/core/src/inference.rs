//! Pose correction at inference time: single-shot from a GPS pose, or
//! sequential through a CTRV extended Kalman filter.

use nalgebra::{Matrix3, Matrix5, Matrix5x3, SMatrix, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{correct_pose, utm_to_vehicle, wrap, PointSet, Pose, PoseOffset};
use crate::map::LandmarkMap;
use crate::net::{ModelParams, Network};

/// Anything that regresses the landmark-frame offset from a measurement set
/// and a set of landmarks in the (possibly wrong) vehicle frame.
pub trait OffsetPredictor {
    fn predict(&self, measurements: &PointSet, landmarks: &PointSet) -> Result<PoseOffset>;
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: Network,
    pub params: ModelParams,
}

impl OffsetPredictor for TrainedModel {
    fn predict(&self, measurements: &PointSet, landmarks: &PointSet) -> Result<PoseOffset> {
        self.net.forward(&self.params, measurements, landmarks)
    }
}

/// Predicts no correction.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl OffsetPredictor for ZeroPredictor {
    fn predict(&self, _: &PointSet, _: &PointSet) -> Result<PoseOffset> {
        Ok(PoseOffset::ZERO)
    }
}

/// Single-shot correction of `p_gps` from the map landmarks around it.
pub fn gps_inference(
    predictor: &dyn OffsetPredictor,
    map: &LandmarkMap,
    measurements: &PointSet,
    p_gps: &Pose,
    fov_radius: f64,
) -> Result<Pose> {
    correct_from(predictor, map, measurements, p_gps, fov_radius)
}

fn correct_from(
    predictor: &dyn OffsetPredictor,
    map: &LandmarkMap,
    measurements: &PointSet,
    reference: &Pose,
    fov_radius: f64,
) -> Result<Pose> {
    if measurements.is_empty() {
        return Err(Error::Empty("measurements"));
    }
    let fov = map.query_fov(reference, fov_radius);
    if fov.is_empty() {
        return Err(Error::EmptyFov);
    }
    let d = predictor.predict(measurements, &utm_to_vehicle(&fov, reference))?;
    Ok(correct_pose(reference, &d.to_pose_error(reference)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    /// Longitudinal acceleration noise, m/s^2.
    pub sigma_accel: f64,
    /// Yaw acceleration noise, rad/s^2.
    pub sigma_yaw_accel: f64,
    /// Pose measurement covariance over `[x, y, phi]`.
    pub measurement_cov: [[f64; 3]; 3],
    /// Initial variance of `v` and `omega`.
    pub init_rate_var: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        let a = 2f64.to_radians().powi(2);
        Self {
            sigma_accel: 0.5,
            sigma_yaw_accel: 0.1,
            measurement_cov: [[0.25, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, a]],
            init_rate_var: 100.0,
        }
    }
}

impl EkfConfig {
    pub fn r(&self) -> Matrix3<f64> {
        let m = &self.measurement_cov;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_accel >= 0.0 && self.sigma_yaw_accel >= 0.0 && self.init_rate_var > 0.0) {
            return Err(Error::Config("filter noise levels must be non-negative".into()));
        }
        let r = self.r();
        if (r - r.transpose()).abs().max() > 1e-12 || r.cholesky().is_none() {
            return Err(Error::Config(
                "measurement covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// State `[x, y, phi, v, omega]` with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub mean: Vector5<f64>,
    pub cov: Matrix5<f64>,
}

impl EkfState {
    /// Pose from `z` with covariance `R`; rates zero with `init_rate_var`.
    pub fn from_pose(z: &Pose, cfg: &EkfConfig) -> Self {
        let mut cov = Matrix5::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&cfg.r());
        cov[(3, 3)] = cfg.init_rate_var;
        cov[(4, 4)] = cfg.init_rate_var;
        Self {
            mean: Vector5::new(z.x, z.y, z.phi, 0.0, 0.0),
            cov,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn max_asymmetry(&self) -> f64 {
        (self.cov - self.cov.transpose()).abs().max()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cov.cholesky().is_some()
    }
}

const OMEGA_EPS: f64 = 1e-6;

/// CTRV transition of the mean and its Jacobian.
pub fn ctrv_transition(x: &Vector5<f64>, dt: f64) -> (Vector5<f64>, Matrix5<f64>) {
    let (px, py, phi, v, w) = (x[0], x[1], x[2], x[3], x[4]);
    let phi2 = phi + w * dt;
    let (s, c) = phi.sin_cos();
    let (s2, c2) = phi2.sin_cos();
    let mut f = Matrix5::identity();
    let (nx, ny);
    if w.abs() < OMEGA_EPS {
        nx = px + v * dt * c;
        ny = py + v * dt * s;
        f[(0, 2)] = -v * dt * s;
        f[(0, 3)] = dt * c;
        f[(0, 4)] = -0.5 * v * dt * dt * s;
        f[(1, 2)] = v * dt * c;
        f[(1, 3)] = dt * s;
        f[(1, 4)] = 0.5 * v * dt * dt * c;
    } else {
        let r = v / w;
        nx = px + r * (s2 - s);
        ny = py + r * (c - c2);
        f[(0, 2)] = r * (c2 - c);
        f[(0, 3)] = (s2 - s) / w;
        f[(0, 4)] = v * dt * c2 / w - r / w * (s2 - s);
        f[(1, 2)] = r * (s2 - s);
        f[(1, 3)] = (c - c2) / w;
        f[(1, 4)] = v * dt * s2 / w - r / w * (c - c2);
    }
    f[(2, 4)] = dt;
    (Vector5::new(nx, ny, wrap(phi2), v, w), f)
}

/// Process noise from white longitudinal and yaw acceleration held constant over `dt`.
pub fn process_noise(phi: f64, cfg: &EkfConfig, dt: f64) -> Matrix5<f64> {
    let h = 0.5 * dt * dt;
    let g = SMatrix::<f64, 5, 2>::new(h * phi.cos(), 0.0, h * phi.sin(), 0.0, 0.0, h, dt, 0.0, 0.0, dt);
    let q = nalgebra::Matrix2::new(cfg.sigma_accel.powi(2), 0.0, 0.0, cfg.sigma_yaw_accel.powi(2));
    g * q * g.transpose()
}

fn symmetrize(p: &Matrix5<f64>) -> Matrix5<f64> {
    (p + p.transpose()) * 0.5
}

pub fn ekf_predict(s: &EkfState, cfg: &EkfConfig, dt: f64) -> Result<EkfState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let (mean, f) = ctrv_transition(&s.mean, dt);
    let cov = symmetrize(&(f * s.cov * f.transpose() + process_noise(s.mean[2], cfg, dt)));
    Ok(EkfState { mean, cov })
}

/// Joseph-form update with a direct pose measurement; the heading innovation is wrapped.
pub fn ekf_update(s: &EkfState, z: &Pose, cfg: &EkfConfig) -> Result<EkfState> {
    if !z.is_finite() {
        return Err(Error::NonFinite("pose measurement"));
    }
    let mut h = SMatrix::<f64, 3, 5>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    let r = cfg.r();
    let innov = Vector3::new(z.x - s.mean[0], z.y - s.mean[1], wrap(z.phi - s.mean[2]));
    let sc = h * s.cov * h.transpose() + r;
    let chol = sc
        .cholesky()
        .ok_or(Error::Numerical("innovation covariance is not positive definite"))?;
    // K = P H^T S^-1, via S K^T = H P
    let k: Matrix5x3<f64> = chol.solve(&(h * s.cov)).transpose();
    let mut mean = s.mean + k * innov;
    mean[2] = wrap(mean[2]);
    let a = Matrix5::identity() - k * h;
    let cov = symmetrize(&(a * s.cov * a.transpose() + k * r * k.transpose()));
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("filter state"));
    }
    Ok(EkfState { mean, cov })
}

/// Sequential filter-based localisation: every step corrects the previous
/// estimate with the predictor and feeds the result to the filter.
#[derive(Debug, Clone)]
pub struct FilterSession {
    state: EkfState,
    cfg: EkfConfig,
    fov_radius: f64,
    last_measurement: Option<Pose>,
}

impl FilterSession {
    /// Initialised from a single GPS pose.
    pub fn new(p_gps: &Pose, cfg: EkfConfig, fov_radius: f64) -> Result<Self> {
        cfg.validate()?;
        if !(fov_radius > 0.0) {
            return Err(Error::Config("fov_radius must be positive".into()));
        }
        Ok(Self {
            state: EkfState::from_pose(p_gps, &cfg),
            cfg,
            fov_radius,
            last_measurement: None,
        })
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    pub fn estimate(&self) -> Pose {
        self.state.pose()
    }

    /// Corrected pose fed to the filter on the last step, before smoothing.
    pub fn last_measurement(&self) -> Option<Pose> {
        self.last_measurement
    }
}

/// One filter step; returns the filtered pose, which becomes the next reference.
pub fn filter_inference_step(
    session: &mut FilterSession,
    predictor: &dyn OffsetPredictor,
    map: &LandmarkMap,
    measurements: &PointSet,
    dt: f64,
) -> Result<Pose> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let reference = session.estimate();
    let z = correct_from(predictor, map, measurements, &reference, session.fov_radius)?;
    let predicted = ekf_predict(&session.state, &session.cfg, dt)?;
    session.state = ekf_update(&predicted, &z, &session.cfg)?;
    session.last_measurement = Some(z);
    Ok(session.estimate())
}
