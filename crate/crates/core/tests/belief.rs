use gridloc::belief::{BeliefGrid, DenseLikelihood, StateGrid};
use gridloc::motion_model::{decompose, motion_kernel, MotionNoise, OdometryReading, RelativeMotion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn free_mask(grid: &StateGrid, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..grid.layer_len()).map(|_| rng.random::<f64>() > 0.15).collect()
}

/// Plain grid Bayes filter: every state weighted by its own likelihood,
/// motion by per-state scatter through the kernel, off-grid and occupied
/// targets dropped.
struct PlainBayes {
    grid: StateGrid,
    free: Vec<bool>,
    p: Vec<f64>,
}

impl PlainBayes {
    fn normalize(&mut self) {
        let s: f64 = self.p.iter().sum();
        self.p.iter_mut().for_each(|v| *v /= s);
    }

    fn perceive(&mut self, lik: &[f64]) {
        self.p.iter_mut().zip(lik).for_each(|(v, l)| *v *= l);
        self.normalize();
    }

    fn predict(&mut self, motion: &RelativeMotion, noise: &MotionNoise) {
        let g = &self.grid;
        for step in decompose(motion, noise) {
            let mut next = vec![0.0; self.p.len()];
            for t in 0..g.theta_bins {
                let k = motion_kernel(noise, &step, g.layer_theta(t), g.cell_size, g.theta_bins).unwrap();
                for iy in 0..g.ny {
                    for ix in 0..g.nx {
                        let v = self.p[g.index(ix, iy, t)];
                        if v == 0.0 {
                            continue;
                        }
                        for e in &k.entries {
                            let tx = ix as i64 + e.dix as i64;
                            let ty = iy as i64 + e.diy as i64;
                            if tx < 0 || ty < 0 || tx >= g.nx as i64 || ty >= g.ny as i64 {
                                continue;
                            }
                            let (tx, ty) = (tx as usize, ty as usize);
                            if !self.free[ty * g.nx + tx] {
                                continue;
                            }
                            let tt = (t as i64 + e.dt as i64).rem_euclid(g.theta_bins as i64) as usize;
                            next[g.index(tx, ty, tt)] += v * e.weight;
                        }
                    }
                }
            }
            self.p = next;
        }
        self.normalize();
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_epsilon_equals_plain_bayes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = StateGrid::new(18, 14, 0.2, (0.0, 0.0), 12).unwrap();
    let free = free_mask(&grid, &mut rng);
    let noise = MotionNoise { trans_variance_per_meter: 0.02, rot_variance_per_meter: 0.03, ..MotionNoise::default() };
    let mut b = BeliefGrid::uniform(grid.clone(), free.clone()).unwrap();
    b.set_epsilon(0.0);
    let mut oracle = PlainBayes { grid: grid.clone(), free, p: b.values() };
    for round in 0..6 {
        let lik: Vec<f64> = (0..grid.state_count()).map(|_| rng.random_range(0.01..1.0)).collect();
        b.apply_perception(&DenseLikelihood::new(&grid, lik.clone()).unwrap(), 0.3).unwrap();
        oracle.perceive(&lik);
        let reading = OdometryReading::new(rng.random_range(-0.5..0.8), rng.random_range(-1.0..1.0));
        b.predict(&reading.to_motion(), &noise).unwrap();
        oracle.predict(&reading.to_motion(), &noise);
        let diff = max_abs_diff(&b.values(), &oracle.p);
        assert!(diff < 1e-12, "round {round}: {diff}");
    }
}

#[test]
fn passive_layer_is_reactivated_with_its_pending_motion() {
    let grid = StateGrid::new(10, 10, 0.5, (0.0, 0.0), 4).unwrap();
    let free = vec![true; grid.layer_len()];
    let mut values = vec![0.0; grid.state_count()];
    values[grid.index(2, 2, 0)] = 1.0;
    values[grid.index(2, 2, 1)] = 1e-9;
    let mut b = BeliefGrid::from_values(grid.clone(), free.clone(), values.clone()).unwrap();
    b.set_epsilon(1e-6);
    assert!(b.partitions()[0].active);
    assert!(!b.partitions()[1].active);

    let motion = OdometryReading::new(1.0, 0.0).to_motion();
    let noise = MotionNoise::noiseless();
    b.predict(&motion, &noise).unwrap();
    assert!(!b.partitions()[1].pending.is_identity());

    // layer 0 becomes implausible; everything else matches the average
    let mut lik = vec![1.0; grid.state_count()];
    lik[..grid.layer_len()].fill(1e-12);
    let report = b.apply_perception(&DenseLikelihood::new(&grid, lik.clone()).unwrap(), 1.0).unwrap();
    assert!(report.reactivated >= 1);
    assert!(b.partitions()[1].active);

    let mut full = BeliefGrid::from_values(grid.clone(), free, values).unwrap();
    full.set_epsilon(0.0);
    full.predict(&motion, &noise).unwrap();
    full.apply_perception(&DenseLikelihood::new(&grid, lik).unwrap(), 1.0).unwrap();
    let diff = max_abs_diff(&b.values(), &full.values());
    assert!(diff < 1e-12, "{diff}");
    let (idx, _, _) = b.max_posterior();
    assert_eq!(grid.coords(idx), (2, 4, 1));
}

#[test]
fn trial_entropy_predicts_the_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = StateGrid::new(12, 12, 0.25, (0.0, 0.0), 8).unwrap();
    let free = free_mask(&grid, &mut rng);
    for eps_fraction in [0.0, 0.5, 2.0] {
        let values: Vec<f64> = (0..grid.state_count()).map(|_| rng.random::<f64>().powi(6)).collect();
        let mut b = BeliefGrid::from_values(grid.clone(), free.clone(), values).unwrap();
        b.set_epsilon(eps_fraction / b.free_states() as f64);
        let lik = DenseLikelihood::new(&grid, (0..grid.state_count()).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        let trial = b.trial_entropy(&lik, 0.4).unwrap();
        b.apply_perception(&lik, 0.4).unwrap();
        let brute: f64 = -b.values().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
        assert!((trial - brute).abs() < 1e-9, "eps {eps_fraction}: {trial} vs {brute}");
        assert!((b.entropy() - brute).abs() < 1e-9);
    }
}

#[test]
fn underflow_leaves_belief_unchanged() {
    let grid = StateGrid::new(4, 4, 0.5, (0.0, 0.0), 2).unwrap();
    let mut b = BeliefGrid::uniform(grid.clone(), vec![true; 16]).unwrap();
    let before = b.values();
    let zero = DenseLikelihood::new(&grid, vec![0.0; grid.state_count()]).unwrap();
    assert!(b.apply_perception(&zero, 0.0).is_err());
    assert_eq!(b.values(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_stays_one_and_values_non_negative(
        seed in any::<u64>(),
        eps_fraction in prop_oneof![Just(0.0), 0.01f64..5.0],
        rounds in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = StateGrid::new(10, 9, 0.2, (0.0, 0.0), 6).unwrap();
        let free = free_mask(&grid, &mut rng);
        prop_assume!(free.iter().any(|&f| f));
        let values: Vec<f64> = (0..grid.state_count()).map(|_| rng.random::<f64>().powi(4)).collect();
        let mut b = BeliefGrid::from_values(grid.clone(), free, values).unwrap();
        b.set_epsilon(eps_fraction / b.free_states() as f64);
        let noise = MotionNoise { trans_variance_per_meter: 0.05, rot_variance_per_meter: 0.05, ..MotionNoise::default() };
        for _ in 0..rounds {
            let lik: Vec<f64> = (0..grid.state_count()).map(|_| rng.random_range(0.001..1.0)).collect();
            let p_avg = rng.random_range(0.05..1.0);
            b.apply_perception(&DenseLikelihood::new(&grid, lik).unwrap(), p_avg).unwrap();
            let reading = OdometryReading::new(rng.random_range(-0.6..0.6), rng.random_range(-2.0..2.0));
            if b.predict(&reading.to_motion(), &noise).is_err() {
                break;
            }
            let v = b.values();
            prop_assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((b.total_mass() - 1.0).abs() < 1e-9);
        }
    }
}
