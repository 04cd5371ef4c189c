//! Planar pose algebra, angle handling and frame transforms.
//!
//! Headings are radians, counterclockwise positive, wrapped to `(-pi, pi]`.

use std::f64::consts::{PI, TAU};
use std::ops::{Index, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("wrap_angle"));
    }
    Ok(wrap(theta))
}

/// Infallible wrap for values already known to be finite.
pub(crate) fn wrap(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn rotated(&self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Sub for Point2 {
    type Output = Point2;

    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2::new(x, y)
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Vehicle pose in a global (UTM) or local frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose {
    /// Builds a pose with the heading wrapped into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self { x, y, phi: wrap(phi) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.phi.is_finite()
    }
}

impl From<[f64; 3]> for Pose {
    fn from([x, y, phi]: [f64; 3]) -> Self {
        Pose { x, y, phi }
    }
}

impl From<Pose> for [f64; 3] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.phi]
    }
}

/// Small rigid offset `[dx, dy, dphi]`, the network's regression target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PoseOffset {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
}

impl PoseOffset {
    pub const ZERO: PoseOffset = PoseOffset {
        dx: 0.0,
        dy: 0.0,
        dphi: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dphi: f64) -> Self {
        Self {
            dx,
            dy,
            dphi: wrap(dphi),
        }
    }

    /// Offset that undoes this one under [`perturb_points`].
    pub fn inverse(&self) -> PoseOffset {
        let t = Point2::new(self.dx, self.dy).rotated(-self.dphi);
        PoseOffset::new(-t.x, -t.y, -self.dphi)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dphi]
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dphi.is_finite()
    }

    /// Converts a landmark-frame offset, as regressed by the network from
    /// landmarks transformed with `reference`, into the componentwise pose
    /// error `reference - truth` consumed by [`correct_pose`].
    pub fn to_pose_error(&self, reference: &Pose) -> PoseOffset {
        let t = Point2::new(self.dx, self.dy).rotated(reference.phi);
        PoseOffset::new(-t.x, -t.y, -self.dphi)
    }

    /// The landmark-frame offset induced by transforming landmarks with
    /// `estimate` instead of `truth`: `utm_to_vehicle(L, estimate)` equals
    /// `perturb_points(utm_to_vehicle(L, truth), offset)`.
    pub fn between(truth: &Pose, estimate: &Pose) -> PoseOffset {
        let t = Point2::new(truth.x - estimate.x, truth.y - estimate.y).rotated(-estimate.phi);
        PoseOffset::new(t.x, t.y, truth.phi - estimate.phi)
    }
}

impl From<[f64; 3]> for PoseOffset {
    fn from([dx, dy, dphi]: [f64; 3]) -> Self {
        PoseOffset { dx, dy, dphi }
    }
}

impl From<PoseOffset> for [f64; 3] {
    fn from(d: PoseOffset) -> Self {
        d.as_array()
    }
}

/// An unordered collection of planar points stored in a fixed order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointSet(pub Vec<Point2>);

impl PointSet {
    pub fn new(points: Vec<Point2>) -> Self {
        Self(points)
    }

    pub fn from_xy(xy: &[[f64; 2]]) -> Self {
        Self(xy.iter().map(|&p| p.into()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point2> {
        self.0.iter()
    }

    pub fn points(&self) -> &[Point2] {
        &self.0
    }

    pub fn push(&mut self, p: Point2) {
        self.0.push(p);
    }

    pub fn map(&self, f: impl Fn(&Point2) -> Point2) -> PointSet {
        PointSet(self.0.iter().map(f).collect())
    }
}

impl Index<usize> for PointSet {
    type Output = Point2;

    fn index(&self, i: usize) -> &Point2 {
        &self.0[i]
    }
}

impl FromIterator<Point2> for PointSet {
    fn from_iter<I: IntoIterator<Item = Point2>>(iter: I) -> Self {
        PointSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a PointSet {
    type Item = &'a Point2;
    type IntoIter = std::slice::Iter<'a, Point2>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// `p_gps - d`, componentwise, heading wrapped. Not an SE(2) composition.
pub fn correct_pose(p_gps: &Pose, d: &PoseOffset) -> Pose {
    Pose::new(p_gps.x - d.dx, p_gps.y - d.dy, p_gps.phi - d.dphi)
}

/// Maps global points into the frame of `pose`: `R(-phi) (p - t)`.
pub fn utm_to_vehicle(points: &PointSet, pose: &Pose) -> PointSet {
    let origin = pose.position();
    points.map(|p| (*p - origin).rotated(-pose.phi))
}

/// Inverse of [`utm_to_vehicle`]: `R(phi) p + t`.
pub fn vehicle_to_utm(points: &PointSet, pose: &Pose) -> PointSet {
    points.map(|p| {
        let r = p.rotated(pose.phi);
        Point2::new(r.x + pose.x, r.y + pose.y)
    })
}

/// Rotates about the vehicle origin, then translates: `R(dphi) p + [dx, dy]`.
pub fn perturb_points(points: &PointSet, d: &PoseOffset) -> PointSet {
    points.map(|p| {
        let r = p.rotated(d.dphi);
        Point2::new(r.x + d.dx, r.y + d.dy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn assert_sets_close(a: &PointSet, b: &PointSet, tol: f64) {
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(b) {
            assert_abs_diff_eq!(p.x, q.x, epsilon = tol);
            assert_abs_diff_eq!(p.y, q.y, epsilon = tol);
        }
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_angle(1.5 * PI).unwrap(), -FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-3.0 * PI).unwrap(), PI, epsilon = 1e-15);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert_abs_diff_eq!(wrap_angle(-PI).unwrap(), PI, epsilon = 1e-15);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn correct_pose_examples() {
        let p = Pose::new(10.0, 5.0, 0.1);
        assert_eq!(correct_pose(&p, &PoseOffset::ZERO), p);

        let p = correct_pose(&Pose::new(0.0, 0.0, 0.0), &PoseOffset::new(1.0, -2.0, 0.5));
        assert_eq!((p.x, p.y), (-1.0, 2.0));
        assert_abs_diff_eq!(p.phi, -0.5, epsilon = 1e-15);

        let p = correct_pose(&Pose::new(0.0, 0.0, 3.0), &PoseOffset::new(0.0, 0.0, -0.5));
        assert_abs_diff_eq!(p.phi, 3.5 - TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(p.phi, -2.7831853, epsilon = 1e-7);
    }

    #[test]
    fn frame_transform_examples() {
        let pts = PointSet::from_xy(&[[2.0, 1.0], [-3.0, 4.5]]);
        assert_eq!(utm_to_vehicle(&pts, &Pose::default()), pts);
        assert_eq!(vehicle_to_utm(&pts, &Pose::default()), pts);

        let v = utm_to_vehicle(&PointSet::from_xy(&[[2.0, 1.0]]), &Pose::new(1.0, 1.0, 0.0));
        assert_eq!(v[0], Point2::new(1.0, 0.0));

        let v = utm_to_vehicle(&PointSet::from_xy(&[[0.0, 1.0]]), &Pose::new(0.0, 0.0, FRAC_PI_2));
        assert_abs_diff_eq!(v[0].x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[0].y, 0.0, epsilon = 1e-15);

        let u = vehicle_to_utm(&PointSet::from_xy(&[[1.0, 0.0]]), &Pose::new(0.0, 0.0, FRAC_PI_2));
        assert_abs_diff_eq!(u[0].x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[0].y, 1.0, epsilon = 1e-15);

        let pose = Pose::new(512_345.6, 5_361_234.5, 2.3);
        let back = vehicle_to_utm(&utm_to_vehicle(&pts, &pose), &pose);
        assert_sets_close(&back, &pts, 1e-9);
    }

    #[test]
    fn perturb_examples() {
        let pts = PointSet::from_xy(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(perturb_points(&pts, &PoseOffset::ZERO), pts);
        let moved = perturb_points(&PointSet::from_xy(&[[0.0, 0.0]]), &PoseOffset::new(1.0, 0.0, 0.0));
        assert_eq!(moved[0], Point2::new(1.0, 0.0));
        let flipped = perturb_points(&PointSet::from_xy(&[[1.0, 0.0]]), &PoseOffset::new(0.0, 0.0, PI));
        assert_abs_diff_eq!(flipped[0].x, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(flipped[0].y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn between_matches_transform_with_estimate() {
        let landmarks = PointSet::from_xy(&[[100.0, 20.0], [130.0, -5.0], [90.0, 40.0]]);
        let truth = Pose::new(95.0, 10.0, 0.7);
        let estimate = Pose::new(95.8, 9.4, 0.75);
        let offset = PoseOffset::between(&truth, &estimate);
        let via_estimate = utm_to_vehicle(&landmarks, &estimate);
        let via_offset = perturb_points(&utm_to_vehicle(&landmarks, &truth), &offset);
        assert_sets_close(&via_estimate, &via_offset, 1e-12);

        let corrected = correct_pose(&estimate, &offset.to_pose_error(&estimate));
        assert_abs_diff_eq!(corrected.x, truth.x, epsilon = 1e-12);
        assert_abs_diff_eq!(corrected.y, truth.y, epsilon = 1e-12);
        assert_abs_diff_eq!(corrected.phi, truth.phi, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_congruent(theta in -1e4f64..1e4) {
            let w = wrap_angle(theta).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((theta - w) / TAU).round();
            prop_assert!((theta - w - k * TAU).abs() < 1e-9);
        }

        #[test]
        fn utm_vehicle_round_trip(
            x in -8e6f64..8e6, y in -8e6f64..8e6, phi in -PI..PI,
            px in -1e3f64..1e3, py in -1e3f64..1e3,
        ) {
            // vehicle-frame points are FoV-sized; the global pose carries the magnitude
            let pose = Pose::new(x, y, phi);
            let local = PointSet::from_xy(&[[px, py]]);
            let fwd = utm_to_vehicle(&vehicle_to_utm(&local, &pose), &pose);
            prop_assert!((fwd[0].x - px).abs() < 1e-9 && (fwd[0].y - py).abs() < 1e-9);
            let global = PointSet::from_xy(&[[x + px, y + py]]);
            let back = vehicle_to_utm(&utm_to_vehicle(&global, &pose), &pose);
            prop_assert!((back[0].x - global[0].x).abs() < 1e-9 && (back[0].y - global[0].y).abs() < 1e-9);
        }

        #[test]
        fn utm_vehicle_round_trip_within_representation_limit(
            x in -1e7f64..1e7, y in -1e7f64..1e7, phi in -PI..PI,
            px in -1e3f64..1e3, py in -1e3f64..1e3,
        ) {
            // one rounding of a 1e7 m coordinate is up to 9.3e-10 m per axis,
            // rotated into the vehicle frame that is at most sqrt(2) times larger
            let pose = Pose::new(x, y, phi);
            let local = PointSet::from_xy(&[[px, py]]);
            let fwd = utm_to_vehicle(&vehicle_to_utm(&local, &pose), &pose);
            prop_assert!((fwd[0].x - px).abs() < 1.4e-9 && (fwd[0].y - py).abs() < 1.4e-9);
        }

        #[test]
        fn perturb_inverse_round_trip(
            dx in -5f64..5.0, dy in -5f64..5.0, dphi in -PI..PI,
            px in -100f64..100.0, py in -100f64..100.0,
        ) {
            let d = PoseOffset::new(dx, dy, dphi);
            let pts = PointSet::from_xy(&[[px, py]]);
            let back = perturb_points(&perturb_points(&pts, &d), &d.inverse());
            prop_assert!((back[0].x - px).abs() < 1e-9 && (back[0].y - py).abs() < 1e-9);
        }

        #[test]
        fn zero_correction_is_exact(x in -1e6f64..1e6, y in -1e6f64..1e6, phi in -PI..PI) {
            let p = Pose::new(x, y, phi);
            prop_assert_eq!(correct_pose(&p, &PoseOffset::ZERO), p);
        }
    }
}
