use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// The `k` landmarks nearest to one measurement, in vehicle-frame offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGroup {
    pub indices: Vec<usize>,
    /// `landmark - measurement` per neighbor.
    pub offsets: Vec<[f64; 2]>,
    pub distances: Vec<f64>,
}

/// Nearest `k` landmarks per measurement, ascending by distance with ties
/// broken by lower landmark index. When fewer than `k` landmarks exist the
/// sorted list repeats cyclically.
pub fn knn_group(measurements: &PointSet, landmarks: &PointSet, k: usize) -> Result<Vec<NeighborGroup>> {
    if measurements.is_empty() {
        return Err(Error::Empty("measurements"));
    }
    if landmarks.is_empty() {
        return Err(Error::Empty("landmarks"));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let take = k.min(landmarks.len());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(landmarks.len());
    let groups = measurements
        .iter()
        .map(|m| {
            order.clear();
            order.extend(landmarks.iter().enumerate().map(|(j, l)| {
                let (dx, dy) = (l.x - m.x, l.y - m.y);
                (dx * dx + dy * dy, j)
            }));
            if take < order.len() {
                order.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                order.truncate(take);
            }
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let indices: Vec<usize> = order.iter().cycle().take(k).map(|&(_, j)| j).collect();
            let offsets: Vec<[f64; 2]> = indices
                .iter()
                .map(|&j| [landmarks[j].x - m.x, landmarks[j].y - m.y])
                .collect();
            let distances = offsets.iter().map(|[dx, dy]| dx.hypot(*dy)).collect();
            NeighborGroup {
                indices,
                offsets,
                distances,
            }
        })
        .collect();
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use proptest::prelude::*;

    #[test]
    fn hand_sorted_example() {
        let m = PointSet::from_xy(&[[0.0, 0.0]]);
        let l = PointSet::from_xy(&[[1.0, 0.0], [0.0, 2.0], [5.0, 5.0]]);
        let g = &knn_group(&m, &l, 2).unwrap()[0];
        assert_eq!(g.indices, vec![0, 1]);
        assert_eq!(g.distances, vec![1.0, 2.0]);
        assert_eq!(g.offsets, vec![[1.0, 0.0], [0.0, 2.0]]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let m = PointSet::from_xy(&[[0.0, 0.0]]);
        let l = PointSet::from_xy(&[[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(knn_group(&m, &l, 1).unwrap()[0].indices, vec![0]);
        let l = PointSet::from_xy(&[[-1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(knn_group(&m, &l, 1).unwrap()[0].indices, vec![0]);
    }

    #[test]
    fn short_landmark_list_repeats_cyclically() {
        let m = PointSet::from_xy(&[[0.0, 0.0]]);
        let l = PointSet::from_xy(&[[0.0, 3.0], [1.0, 0.0]]);
        assert_eq!(knn_group(&m, &l, 4).unwrap()[0].indices, vec![1, 0, 1, 0]);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let p = PointSet::from_xy(&[[0.0, 0.0]]);
        assert!(knn_group(&PointSet::default(), &p, 2).is_err());
        assert!(knn_group(&p, &PointSet::default(), 2).is_err());
    }

    #[test]
    fn features_invariant_under_joint_translation() {
        let m = PointSet::from_xy(&[[1.0, 2.0], [4.0, -1.0]]);
        let l = PointSet::from_xy(&[[1.5, 2.5], [3.0, 0.0], [10.0, 1.0], [0.0, 0.0]]);
        let shift = |s: &PointSet| s.map(|p| Point2::new(p.x + 123.25, p.y - 77.5));
        let a = knn_group(&m, &l, 3).unwrap();
        let b = knn_group(&shift(&m), &shift(&l), 3).unwrap();
        for (ga, gb) in a.iter().zip(&b) {
            assert_eq!(ga.indices, gb.indices);
            for (oa, ob) in ga.offsets.iter().zip(&gb.offsets) {
                assert!((oa[0] - ob[0]).abs() < 1e-12 && (oa[1] - ob[1]).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force_sort(
            ms in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..6),
            ls in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..20),
            k in 1usize..10,
        ) {
            let m: PointSet = ms.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let l: PointSet = ls.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let groups = knn_group(&m, &l, k).unwrap();
            for (mi, g) in m.iter().zip(&groups) {
                let mut all: Vec<(f64, usize)> = l.iter().enumerate()
                    .map(|(j, p)| ((p.x - mi.x).powi(2) + (p.y - mi.y).powi(2), j)).collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let expected: Vec<usize> = all.iter().cycle().take(k).map(|p| p.1).collect();
                prop_assert_eq!(&g.indices, &expected);
                for (d, o) in g.distances.iter().zip(&g.offsets) {
                    prop_assert!(*d >= 0.0);
                    prop_assert!((d - (o[0] * o[0] + o[1] * o[1]).sqrt()).abs() < 1e-12);
                }
            }
        }
    }
}
