//! Builds a roadside landmark map, saves it as CSV, reloads it and queries
//! the field of view along the drive.

use attnloc::geometry::Pose;
use attnloc::map::{load_map, save_map, DEFAULT_FOV_RADIUS};
use attnloc::simulator::{generate_drive, generate_road_map, DriveSegment, RoadMapConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> attnloc::Result<()> {
    let segments = [
        DriveSegment {
            v: 5.0,
            omega: 0.0,
            duration: 40.0,
        },
        DriveSegment {
            v: 5.0,
            omega: 0.05,
            duration: 30.0,
        },
        DriveSegment {
            v: 5.0,
            omega: 0.0,
            duration: 40.0,
        },
    ];
    let path = generate_drive(Pose::new(512_000.0, 5_361_000.0, 0.0), &segments, 0.1)?;
    let map = generate_road_map(&path, &RoadMapConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))?;

    let dir = std::env::temp_dir().join("attnloc-map-example");
    let file = dir.join("map.csv");
    save_map(&file, &map)?;
    let loaded = load_map(&file)?;
    assert_eq!(loaded, map);
    println!("{} landmarks written to {}", map.len(), file.display());

    for pose in path.iter().step_by(200) {
        let ids = loaded.query_fov_ids(pose, DEFAULT_FOV_RADIUS);
        let first: Vec<u64> = ids.iter().take(5).map(|&i| loaded.landmarks()[i].id).collect();
        println!(
            "pose ({:.1}, {:.1}, {:5.1} deg): {:>3} landmarks in view, first ids {:?}",
            pose.x,
            pose.y,
            pose.phi.to_degrees(),
            ids.len(),
            first
        );
    }
    Ok(())
}
