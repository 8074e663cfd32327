#![allow(dead_code)]

use gridloc::localizer::{LocalizerConfig, SensorConfig};
use gridloc::motion_model::MotionNoise;
use gridloc::simulator::{PathCommand, SensorTruth, SimConfig};
use gridloc::{Occupancy, OccupancyGrid};

/// 12 m x 9 m office: two rows of rooms joined by doors, with furniture that
/// breaks the symmetry.
pub fn office_map() -> OccupancyGrid {
    let mut m = OccupancyGrid::new(120, 90, 0.1, (0.0, 0.0), Occupancy::Free).unwrap();
    let walls = [
        (0.0, 0.0, 12.0, 0.2),
        (0.0, 8.8, 12.0, 9.0),
        (0.0, 0.0, 0.2, 9.0),
        (11.8, 0.0, 12.0, 9.0),
        (0.0, 4.4, 2.0, 4.6),
        (3.0, 4.4, 7.0, 4.6),
        (8.0, 4.4, 12.0, 4.6),
        (5.9, 4.6, 6.1, 7.2),
        (5.9, 8.2, 6.1, 8.8),
        (9.5, 1.0, 10.5, 1.6),
        (1.0, 6.5, 1.6, 7.8),
        (4.6, 3.0, 5.0, 3.4),
        (3.5, 6.6, 5.0, 7.1),
        (8.0, 7.6, 9.0, 8.8),
        (10.8, 5.4, 11.8, 5.8),
        (2.2, 0.2, 2.6, 1.0),
    ];
    for (x0, y0, x1, y1) in walls {
        m.fill_rect(x0, y0, x1, y1, Occupancy::Occupied);
    }
    m
}

/// Closed loop through both room rows, starting and ending at the start
/// pose of [`office_sim`].
pub fn office_loop() -> Vec<PathCommand> {
    [
        (8.5, 2.5),
        (7.5, 3.6),
        (7.5, 5.6),
        (10.0, 7.0),
        (7.5, 6.0),
        (7.0, 7.7),
        (5.0, 7.7),
        (2.5, 7.9),
        (2.5, 5.8),
        (2.5, 3.6),
        (1.5, 2.0),
    ]
    .into_iter()
    .map(|(x, y)| PathCommand::Goto { x, y })
    .collect()
}

pub fn office_sim(loops: usize, seed: u64) -> SimConfig {
    SimConfig {
        start: [1.5, 2.0, 0.0],
        path: office_loop().into_iter().cycle().take(loops * office_loop().len()).collect(),
        noise: MotionNoise { trans_variance_per_meter: 0.002, rot_variance_per_meter: 0.002, ..MotionNoise::default() },
        beam_count: 24,
        sensor: SensorTruth { sigma: 0.05, c_r: 0.002, c_d: 0.98, max_range: 5.0, n: 50 },
        seed,
        ..SimConfig::default()
    }
}

pub fn office_localizer(cell_size: f64, theta_bins: usize) -> LocalizerConfig {
    LocalizerConfig {
        cell_size,
        theta_bins,
        sensor: SensorConfig { n: 50, max_range: 5.0, sigma: Some(0.2), c_r: 0.01, c_d: 0.9 },
        motion: MotionNoise {
            trans_variance_per_meter: 0.01,
            rot_variance_per_meter: 0.01,
            rot_variance_per_radian: 0.02,
            ..MotionNoise::default()
        },
        beam_stride: 2,
        ..LocalizerConfig::default()
    }
}
