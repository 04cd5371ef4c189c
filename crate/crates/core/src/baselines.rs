//! Classical comparators: point-to-point ICP and an EKF fed raw GPS poses.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::{perturb_points, wrap, Point2, PointSet, Pose, PoseOffset};
use crate::inference::{ekf_predict, ekf_update, EkfConfig, EkfState, OffsetPredictor};

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Rigid transform taking the landmarks onto the measurements under [`perturb_points`].
    pub transform: PoseOffset,
    /// RMS residual after each iteration.
    pub residuals: Vec<f64>,
}

impl IcpResult {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

fn centroid(points: &[Point2]) -> Vector2<f64> {
    let n = points.len() as f64;
    points
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + Vector2::new(p.x, p.y))
        / n
}

/// Least-squares rotation and translation with `R src_i + t ~ dst_i`
/// (Umeyama without scale, reflection excluded).
pub fn rigid_fit(src: &[Point2], dst: &[Point2]) -> Result<PoseOffset> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::Degenerate("rigid fit needs at least two pairs"));
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut h = Matrix2::zeros();
    let mut spread = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = Vector2::new(s.x, s.y) - cs;
        let b = Vector2::new(d.x, d.y) - cd;
        h += a * b.transpose();
        spread += a.norm_squared();
    }
    let scale = src
        .iter()
        .chain(dst)
        .fold(1.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    if spread <= (1e-12 * scale).powi(2) * src.len() as f64 {
        return Err(Error::Degenerate("all points coincide"));
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut v = vt.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        v.set_column(1, &(-v.column(1)));
    }
    let r = v * u.transpose();
    let t = cd - r * cs;
    Ok(PoseOffset::new(t.x, t.y, r[(1, 0)].atan2(r[(0, 0)])))
}

/// Nearest measurement for every landmark; ties go to the lower index.
fn correspondences(moved: &[Point2], measurements: &[Point2]) -> Vec<Point2> {
    moved
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0usize);
            for (j, m) in measurements.iter().enumerate() {
                let d = (m.x - p.x).powi(2) + (m.y - p.y).powi(2);
                if d < best.0 {
                    best = (d, j);
                }
            }
            measurements[best.1]
        })
        .collect()
}

fn rms(a: &[Point2], b: &[Point2]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2))
        .sum();
    (s / a.len() as f64).sqrt()
}

/// Point-to-point ICP registering `landmarks` onto `measurements`, starting
/// from `init`. Stops once an iteration changes the transform by less than
/// `tol` (meters plus radians) or after `max_iter` iterations.
pub fn icp(
    measurements: &PointSet,
    landmarks: &PointSet,
    init: &PoseOffset,
    max_iter: usize,
    tol: f64,
) -> Result<IcpResult> {
    if measurements.len() < 2 || landmarks.len() < 2 {
        return Err(Error::Degenerate("icp needs at least two points per set"));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be positive".into()));
    }
    let src = landmarks.points();
    let mut transform = *init;
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let moved = perturb_points(landmarks, &transform);
        let matched = correspondences(moved.points(), measurements.points());
        let next = rigid_fit(src, &matched)?;
        let fitted = perturb_points(landmarks, &next);
        residuals.push(rms(fitted.points(), &matched));
        let change = (next.dx - transform.dx).hypot(next.dy - transform.dy) + wrap(next.dphi - transform.dphi).abs();
        transform = next;
        if change < tol {
            break;
        }
    }
    Ok(IcpResult { transform, residuals })
}

/// ICP used as an offset regressor: the returned offset is the inverse of the
/// registration of landmarks onto measurements.
#[derive(Debug, Clone, Copy)]
pub struct IcpPredictor {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcpPredictor {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
        }
    }
}

impl OffsetPredictor for IcpPredictor {
    fn predict(&self, measurements: &PointSet, landmarks: &PointSet) -> Result<PoseOffset> {
        Ok(
            icp(measurements, landmarks, &PoseOffset::ZERO, self.max_iter, self.tol)?
                .transform
                .inverse(),
        )
    }
}

/// Filters a sequence of raw GPS poses sampled every `dt` seconds.
pub fn ekf_gps_baseline(gps: &[Pose], dt: f64, cfg: &EkfConfig) -> Result<Vec<Pose>> {
    cfg.validate()?;
    let Some(first) = gps.first() else {
        return Err(Error::Empty("gps trajectory"));
    };
    let mut state = EkfState::from_pose(first, cfg);
    let mut out = Vec::with_capacity(gps.len());
    out.push(state.pose());
    for z in &gps[1..] {
        state = ekf_update(&ekf_predict(&state, cfg, dt)?, z, cfg)?;
        out.push(state.pose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{degrade, generate_scene, generate_trajectory, SimConfig, SpatialModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> PointSet {
        let cfg = SimConfig {
            nu_min: 15,
            nu_max: 15,
            ..SimConfig::ideal(SpatialModel::default_gaussian())
        };
        generate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .landmarks
    }

    #[test]
    fn identical_sets_converge_immediately() {
        let m = scene(0);
        let r = icp(&m, &m, &PoseOffset::ZERO, 20, 1e-9).unwrap();
        assert_eq!(r.iterations(), 1);
        assert!(r.final_residual() < 1e-12);
        assert!(r.transform.dx.abs() < 1e-12 && r.transform.dphi.abs() < 1e-12);
    }

    #[test]
    fn recovers_a_known_rigid_offset() {
        let m = PointSet::from_xy(&[[10.0, 0.0], [20.0, 6.0], [35.0, -4.0], [15.0, -9.0], [28.0, 10.0]]);
        let d = PoseOffset::new(0.5, 0.3, 3f64.to_radians());
        let l = perturb_points(&m, &d);
        let r = icp(&m, &l, &PoseOffset::ZERO, 50, 1e-10).unwrap();
        let want = d.inverse();
        assert!((r.transform.dx - want.dx).abs() < 1e-3 && (r.transform.dy - want.dy).abs() < 1e-3);
        assert!((r.transform.dphi - want.dphi).abs().to_degrees() < 0.01);
        assert!(r.iterations() <= 5);
    }

    #[test]
    fn residuals_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..50 {
            let m = scene(seed);
            let d = PoseOffset::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-0.2..0.2),
            );
            let l = perturb_points(&m, &d);
            let r = icp(&m, &l, &PoseOffset::ZERO, 100, 1e-12).unwrap();
            for w in r.residuals.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", r.residuals);
            }
        }
    }

    #[test]
    fn clutter_raises_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clean = SimConfig {
            lambda_miss: 0.0,
            lambda_clutter: 0.0,
            sigma_noise: 0.1,
            ..SimConfig::default()
        };
        let cluttered = SimConfig {
            lambda_clutter: 3.0,
            ..clean.clone()
        };
        let (mut a, mut b) = (0.0, 0.0);
        for seed in 0..30 {
            let l = scene(100 + seed);
            a += icp(&degrade(&l, &clean, &mut rng).unwrap(), &l, &PoseOffset::ZERO, 50, 1e-9)
                .unwrap()
                .final_residual();
            b += icp(
                &degrade(&l, &cluttered, &mut rng).unwrap(),
                &l,
                &PoseOffset::ZERO,
                50,
                1e-9,
            )
            .unwrap()
            .final_residual();
        }
        assert!(b > a, "{b} vs {a}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let same = PointSet::from_xy(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(
            icp(&same, &same, &PoseOffset::ZERO, 10, 1e-9),
            Err(Error::Degenerate(_))
        ));
        let one = PointSet::from_xy(&[[1.0, 1.0]]);
        assert!(icp(&one, &same, &PoseOffset::ZERO, 10, 1e-9).is_err());
    }

    #[test]
    fn icp_predictor_inverts_the_registration() {
        let m = scene(7);
        let d = PoseOffset::new(0.2, -0.3, 0.02);
        let got = IcpPredictor::default().predict(&m, &perturb_points(&m, &d)).unwrap();
        assert!((got.dx - d.dx).abs() < 1e-6 && (got.dy - d.dy).abs() < 1e-6 && (got.dphi - d.dphi).abs() < 1e-8);
    }

    #[test]
    fn gps_filter_examples() {
        let cfg = EkfConfig::default();
        let p = Pose::new(1.0, 2.0, 0.3);
        assert_eq!(ekf_gps_baseline(&[p], 0.1, &cfg).unwrap(), vec![p]);
        assert!(ekf_gps_baseline(&[], 0.1, &cfg).is_err());

        let truth = generate_trajectory(Pose::new(0.0, 0.0, 0.2), 8.0, 0.0, 0.1, 200).unwrap();
        let out = ekf_gps_baseline(&truth, 0.1, &cfg).unwrap();
        let last = out.last().unwrap();
        let end = truth.last().unwrap();
        assert!((last.x - end.x).abs() < 0.05 && (last.y - end.y).abs() < 0.05);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<Pose> = truth
            .iter()
            .map(|p| Pose::new(p.x + rng.gen_range(-1.0..1.0), p.y + rng.gen_range(-1.0..1.0), p.phi))
            .collect();
        let smooth = ekf_gps_baseline(&noisy, 0.1, &cfg).unwrap();
        let err = |a: &[Pose]| {
            a.iter()
                .zip(&truth)
                .map(|(p, t)| (p.x - t.x).powi(2) + (p.y - t.y).powi(2))
                .sum::<f64>()
        };
        assert!(err(&smooth) < err(&noisy));
    }
}
