use std::collections::HashMap;

use gridloc::belief::{BeliefGrid, Boundary, StateGrid};
use gridloc::motion_model::{decompose, motion_kernel, MotionNoise, OdometryReading, RelativeMotion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn truncated(rng: &mut ChaCha8Rng, sigma: f64, cutoff: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= cutoff * sigma {
            return v;
        }
    }
}

/// Adds `w` to the eight grid states around a continuous grid position,
/// weighted by linear interpolation.
fn splat(acc: &mut HashMap<(i64, i64, i64), f64>, gx: f64, gy: f64, gt: f64, w: f64) {
    let (x0, y0, t0) = (gx.floor(), gy.floor(), gt.floor());
    let (fx, fy, ft) = (gx - x0, gy - y0, gt - t0);
    for (dt, wt) in [(0, 1.0 - ft), (1, ft)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                *acc.entry((x0 as i64 + dx, y0 as i64 + dy, t0 as i64 + dt)).or_insert(0.0) += w * wx * wy * wt;
            }
        }
    }
}

/// Distribution over grid states after one odometry reading from a state at
/// the grid center, by sampling the continuous rotate-translate-rotate
/// process and projecting each sample onto the grid.
fn monte_carlo(grid: &StateGrid, t0: usize, motion: &RelativeMotion, noise: &MotionNoise, samples: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let steps = decompose(motion, noise);
    let mut acc = HashMap::new();
    let (cx, cy) = (grid.nx / 2, grid.ny / 2);
    let step_theta = grid.theta_step();
    for _ in 0..samples {
        let (mut x, mut y, mut th) = (0.0, 0.0, t0 as f64 * step_theta);
        for s in &steps {
            let er = truncated(&mut rng, noise.rot_sigma(s), noise.cutoff);
            let et = truncated(&mut rng, noise.trans_sigma(s), noise.cutoff);
            let dir = th + s.rot + er;
            x += (s.trans + et) * dir.cos();
            y += (s.trans + et) * dir.sin();
            th += s.rot + er + s.post_rot;
        }
        splat(&mut acc, cx as f64 + x / grid.cell_size, cy as f64 + y / grid.cell_size, th / step_theta, 1.0);
    }
    let mut out = vec![0.0; grid.state_count()];
    for ((ix, iy, t), w) in acc {
        let t = t.rem_euclid(grid.theta_bins as i64) as usize;
        assert!(ix >= 0 && iy >= 0 && (ix as usize) < grid.nx && (iy as usize) < grid.ny, "grid too small");
        out[grid.index(ix as usize, iy as usize, t)] += w / samples as f64;
    }
    out
}

fn point_belief(grid: &StateGrid, t0: usize) -> BeliefGrid {
    let free = vec![true; grid.layer_len()];
    let mut values = vec![0.0; grid.state_count()];
    values[grid.index(grid.nx / 2, grid.ny / 2, t0)] = 1.0;
    let mut b = BeliefGrid::from_values(grid.clone(), free, values).unwrap();
    b.set_epsilon(0.0);
    b
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[test]
fn predicted_banana_matches_monte_carlo() {
    let grid = StateGrid::new(61, 61, 0.05, (0.0, 0.0), 72).unwrap();
    let noise = MotionNoise {
        trans_variance_per_meter: 0.01,
        rot_variance_per_meter: 0.08,
        rot_variance_per_radian: 0.01,
        ..MotionNoise::default()
    };
    for &(trans, rot, t0) in &[(0.8, 0.0, 0usize), (0.7, 0.6, 9), (-0.5, 0.2, 40)] {
        let motion = OdometryReading::new(trans, rot).to_motion();
        let mut b = point_belief(&grid, t0);
        b.predict(&motion, &noise).unwrap();
        let mc = monte_carlo(&grid, t0, &motion, &noise, 400_000);
        let tv = total_variation(&b.values(), &mc);
        assert!(tv < 0.05, "trans {trans} rot {rot}: tv {tv}");
    }
}

/// State-by-state scatter of every source through its own kernel on a torus.
fn scatter_oracle(grid: &StateGrid, values: &[f64], motion: &RelativeMotion, noise: &MotionNoise) -> Vec<f64> {
    let mut cur = values.to_vec();
    for step in decompose(motion, noise) {
        let mut next = vec![0.0; cur.len()];
        for t in 0..grid.theta_bins {
            let k = motion_kernel(noise, &step, grid.layer_theta(t), grid.cell_size, grid.theta_bins).unwrap();
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    let v = cur[grid.index(ix, iy, t)];
                    if v == 0.0 {
                        continue;
                    }
                    for e in &k.entries {
                        let tx = (ix as i64 + e.dix as i64).rem_euclid(grid.nx as i64) as usize;
                        let ty = (iy as i64 + e.diy as i64).rem_euclid(grid.ny as i64) as usize;
                        let tt = (t as i64 + e.dt as i64).rem_euclid(grid.theta_bins as i64) as usize;
                        next[grid.index(tx, ty, tt)] += v * e.weight;
                    }
                }
            }
        }
        cur = next;
    }
    let total: f64 = cur.iter().sum();
    cur.iter().map(|v| v / total).collect()
}

#[test]
fn grid_convolution_matches_exhaustive_scatter() {
    let grid = StateGrid::new(20, 20, 0.1, (0.0, 0.0), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values: Vec<f64> = (0..grid.state_count()).map(|_| rng.random::<f64>()).collect();
    let noise = MotionNoise { trans_variance_per_meter: 0.02, rot_variance_per_meter: 0.05, ..MotionNoise::default() };
    for reading in [OdometryReading::new(0.35, 0.0), OdometryReading::new(0.2, 1.0), OdometryReading::new(1.3, -2.0)] {
        let motion = reading.to_motion();
        let mut b = BeliefGrid::from_values(grid.clone(), vec![true; grid.layer_len()], values.clone()).unwrap();
        b.set_epsilon(0.0);
        b.set_boundary(Boundary::Wrap);
        let oracle = scatter_oracle(&grid, &b.values(), &motion, &noise);
        b.predict(&motion, &noise).unwrap();
        let got = b.values();
        let diff = got.iter().zip(&oracle).map(|(a, o)| (a - o).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{reading:?}: {diff}");
    }
}

#[test]
fn noiseless_whole_cell_motion_is_a_pure_shift() {
    let grid = StateGrid::new(12, 6, 0.5, (0.0, 0.0), 4).unwrap();
    let mut b = point_belief(&grid, 0);
    b.predict(&OdometryReading::new(1.0, 0.0).to_motion(), &MotionNoise::noiseless()).unwrap();
    let (idx, _, p) = b.max_posterior();
    assert_eq!(grid.coords(idx), (8, 3, 0));
    assert!((p - 1.0).abs() < 1e-12);
}

#[test]
fn heading_drift_widens_with_distance() {
    let grid = StateGrid::new(61, 61, 0.05, (0.0, 0.0), 72).unwrap();
    let noise = MotionNoise { rot_variance_per_meter: 0.05, ..MotionNoise::default() };
    let spread = |d: f64| {
        let mut b = point_belief(&grid, 0);
        b.predict(&OdometryReading::new(d, 0.0).to_motion(), &noise).unwrap();
        let v = b.values();
        let mut second = 0.0;
        for (i, &p) in v.iter().enumerate() {
            let (_, iy, _) = grid.coords(i);
            let dy = iy as f64 - 30.0;
            second += p * dy * dy;
        }
        second
    };
    assert!(spread(1.2) > spread(0.6));
}
