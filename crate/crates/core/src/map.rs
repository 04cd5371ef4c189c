//! Landmark map persistence and field-of-view queries.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Point2, PointSet, Pose};
use crate::io_util::{format_meters, write_atomic};

pub const GRID_CELL: f64 = 50.0;
pub const DEFAULT_FOV_RADIUS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Point2,
}

/// Immutable landmark map in UTM coordinates with a uniform-grid index.
#[derive(Debug, Clone, Default)]
pub struct LandmarkMap {
    /// Sorted by ascending id.
    landmarks: Vec<Landmark>,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl PartialEq for LandmarkMap {
    fn eq(&self, other: &Self) -> bool {
        self.landmarks == other.landmarks
    }
}

fn cell_of(p: &Point2) -> (i64, i64) {
    ((p.x / GRID_CELL).floor() as i64, (p.y / GRID_CELL).floor() as i64)
}

fn within(p: &Point2, center: &Point2, radius: f64) -> bool {
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    dx * dx + dy * dy <= radius * radius
}

impl LandmarkMap {
    /// Builds the map and its index; ids must be unique.
    pub fn new(mut landmarks: Vec<Landmark>) -> Result<Self> {
        if let Some(bad) = landmarks.iter().find(|l| !l.position.is_finite()) {
            return Err(Error::Config(format!("landmark {} has a non-finite position", bad.id)));
        }
        landmarks.sort_by_key(|l| l.id);
        if let Some(w) = landmarks.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id));
        }
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, l) in landmarks.iter().enumerate() {
            cells.entry(cell_of(&l.position)).or_default().push(i);
        }
        Ok(Self { landmarks, cells })
    }

    /// Assigns ids `0..n` in input order.
    pub fn from_points(points: &PointSet) -> Result<Self> {
        Self::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| Landmark {
                    id: i as u64,
                    position: *p,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn points(&self) -> PointSet {
        self.landmarks.iter().map(|l| l.position).collect()
    }

    /// Landmarks within `radius` (closed disk) of the pose position, ascending by id.
    pub fn query_fov(&self, pose: &Pose, radius: f64) -> PointSet {
        self.query_fov_ids(pose, radius)
            .into_iter()
            .map(|i| self.landmarks[i].position)
            .collect()
    }

    /// Storage indices of the landmarks returned by [`LandmarkMap::query_fov`].
    pub fn query_fov_ids(&self, pose: &Pose, radius: f64) -> Vec<usize> {
        if !(radius > 0.0) {
            return Vec::new();
        }
        let center = pose.position();
        let lo = cell_of(&Point2::new(center.x - radius, center.y - radius));
        let hi = cell_of(&Point2::new(center.x + radius, center.y + radius));
        let mut hits = Vec::new();
        let span = (hi.0 - lo.0 + 1).saturating_mul(hi.1 - lo.1 + 1);
        if span as usize > self.cells.len() {
            for (&(cx, cy), idx) in &self.cells {
                if cx >= lo.0 && cx <= hi.0 && cy >= lo.1 && cy <= hi.1 {
                    hits.extend(
                        idx.iter()
                            .copied()
                            .filter(|&i| within(&self.landmarks[i].position, &center, radius)),
                    );
                }
            }
        } else {
            for cx in lo.0..=hi.0 {
                for cy in lo.1..=hi.1 {
                    if let Some(idx) = self.cells.get(&(cx, cy)) {
                        hits.extend(
                            idx.iter()
                                .copied()
                                .filter(|&i| within(&self.landmarks[i].position, &center, radius)),
                        );
                    }
                }
            }
        }
        hits.sort_unstable();
        hits
    }
}

/// Reads a `id,easting,northing` CSV map. An empty file is an empty map.
pub fn load_map(path: &Path) -> Result<LandmarkMap> {
    let text = std::fs::read_to_string(path)?;
    parse_map(&text, path)
}

pub fn parse_map(text: &str, path: &Path) -> Result<LandmarkMap> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    if text.trim().is_empty() {
        return Ok(LandmarkMap::default());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
    if header != ["id", "easting", "northing"] {
        return Err(parse_err(
            1,
            format!("expected header `id,easting,northing`, found `{}`", header.join(",")),
        ));
    }
    let mut landmarks = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let id = record[0]
            .parse::<u64>()
            .map_err(|e| parse_err(line, format!("bad id `{}`: {e}", &record[0])))?;
        let coord = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("bad coordinate `{s}`")))
        };
        landmarks.push(Landmark {
            id,
            position: Point2::new(coord(&record[1])?, coord(&record[2])?),
        });
    }
    LandmarkMap::new(landmarks)
}

pub fn map_to_csv(map: &LandmarkMap) -> String {
    let mut out = String::from("id,easting,northing\n");
    for l in map.landmarks() {
        out.push_str(&format!(
            "{},{},{}\n",
            l.id,
            format_meters(l.position.x),
            format_meters(l.position.y)
        ));
    }
    out
}

pub fn save_map(path: &Path, map: &LandmarkMap) -> Result<()> {
    write_atomic(path, map_to_csv(map).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(map: &LandmarkMap, pose: &Pose, radius: f64) -> Vec<usize> {
        (0..map.len())
            .filter(|&i| within(&map.landmarks()[i].position, &pose.position(), radius))
            .collect()
    }

    fn random_map(seed: u64, n: usize, extent: f64) -> LandmarkMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: PointSet = (0..n)
            .map(|_| {
                Point2::new(
                    500_000.0 + rng.gen_range(0.0..extent),
                    5_300_000.0 + rng.gen_range(0.0..extent),
                )
            })
            .collect();
        LandmarkMap::from_points(&pts).unwrap()
    }

    #[test]
    fn empty_file_is_empty_map() {
        let map = parse_map("", Path::new("m.csv")).unwrap();
        assert!(map.is_empty());
        let map = parse_map("id,easting,northing\n", Path::new("m.csv")).unwrap();
        assert!(map.is_empty());
    }

    #[test]
    fn three_line_csv_is_queryable() {
        let text = "id,easting,northing\n7,100.000,200.000\n3,110.500,200.000\n9,400.000,400.000\n";
        let map = parse_map(text, Path::new("m.csv")).unwrap();
        assert_eq!(map.len(), 3);
        let ids = map.query_fov_ids(&Pose::new(105.0, 200.0, 0.0), 10.0);
        let got: Vec<u64> = ids.iter().map(|&i| map.landmarks()[i].id).collect();
        assert_eq!(got, vec![3, 7]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "id,easting,northing\n4,1.0,2.0\n4,3.0,4.0\n";
        let err = parse_map(text, Path::new("m.csv")).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(4)));
        assert!(err.to_string().contains('4'));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "id,easting,northing\n1,1.0,2.0\n2,abc,4.0\n";
        match parse_map(text, Path::new("m.csv")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        assert!(parse_map("a,b,c\n1,2,3\n", Path::new("m.csv")).is_err());
    }

    #[test]
    fn fov_boundary_and_empty_cases() {
        let map = LandmarkMap::from_points(&PointSet::from_xy(&[[3.0, 4.0], [30.0, 0.0]])).unwrap();
        assert!(map.query_fov(&Pose::default(), 4.9).is_empty());
        assert_eq!(map.query_fov(&Pose::default(), 5.0), PointSet::from_xy(&[[3.0, 4.0]]));
    }

    #[test]
    fn grid_matches_brute_force_on_random_map() {
        let map = random_map(1, 1000, 1000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let pose = Pose::new(
                500_000.0 + rng.gen_range(-100.0..1100.0),
                5_300_000.0 + rng.gen_range(-100.0..1100.0),
                0.0,
            );
            let r = rng.gen_range(1.0..300.0);
            assert_eq!(map.query_fov_ids(&pose, r), brute_force(&map, &pose, r));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let map = random_map(3, 50, 500.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        save_map(&path, &map).unwrap();
        let loaded = load_map(&path).unwrap();
        assert_eq!(loaded, map);
        assert_eq!(map_to_csv(&loaded), map_to_csv(&map));
    }

    proptest! {
        #[test]
        fn query_equals_linear_scan(seed in 0u64..1000, x in -50.0f64..600.0, y in -50.0f64..600.0, r in 0.1f64..400.0) {
            let map = random_map(seed, 200, 500.0);
            let pose = Pose::new(500_000.0 + x, 5_300_000.0 + y, 0.0);
            prop_assert_eq!(map.query_fov_ids(&pose, r), brute_force(&map, &pose, r));
        }
    }
}
