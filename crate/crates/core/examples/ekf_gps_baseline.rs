//! CTRV extended Kalman filter fed raw GPS poses on a simulated drive.

use attnloc::baselines::ekf_gps_baseline;
use attnloc::eval::rmse;
use attnloc::experiment::{DriveConfig, GpsNoise};
use attnloc::inference::EkfConfig;
use attnloc::simulator::generate_drive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> attnloc::Result<()> {
    let drive = DriveConfig::default();
    let truth = generate_drive(drive.start, &drive.segments, drive.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for noise in [
        GpsNoise {
            sigma_xy: 2.0,
            sigma_phi_deg: 10.0,
        },
        GpsNoise {
            sigma_xy: 1.0,
            sigma_phi_deg: 4.0,
        },
        GpsNoise {
            sigma_xy: 0.5,
            sigma_phi_deg: 2.0,
        },
    ] {
        let gps: Vec<_> = truth.iter().map(|p| noise.apply(p, &mut rng)).collect();
        let filtered = ekf_gps_baseline(&gps, drive.dt, &EkfConfig::default())?;
        let (raw, smooth) = (rmse(&gps, &truth)?, rmse(&filtered, &truth)?);
        println!(
            "gps +-{} m / +-{} deg: raw rmse ({:.3}, {:.3}, {:.2} deg) -> filtered ({:.3}, {:.3}, {:.2} deg)",
            noise.sigma_xy, noise.sigma_phi_deg, raw.x, raw.y, raw.phi, smooth.x, smooth.y, smooth.phi
        );
    }
    Ok(())
}
