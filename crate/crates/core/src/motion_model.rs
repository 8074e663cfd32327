//! Odometry-driven action model.
//!
//! Each atomic step rotates, translates along the new heading and then
//! optionally rotates again. Translation and heading errors are independent
//! zero-mean Gaussians cut off at `cutoff` standard deviations; their
//! variances grow linearly with the distance travelled (and, optionally, the
//! angle turned), so splitting a motion into pieces conserves total variance.
//! Sequential composition of such steps produces the familiar banana-shaped
//! spread.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world_map::wrap_to_pi;

const MAX_QUADRATURE_NODES: usize = 41;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("invalid motion noise: {0}")]
    InvalidNoise(String),
    #[error("motion kernel has no support; check grid resolution against the noise model")]
    EmptyKernel,
}

/// One odometry reading: rotate by `delta_rot`, then travel `delta_trans`
/// (negative for reversing) along the new heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryReading {
    pub delta_trans: f64,
    pub delta_rot: f64,
}

impl OdometryReading {
    pub fn new(delta_trans: f64, delta_rot: f64) -> Self {
        OdometryReading { delta_trans, delta_rot }
    }

    pub fn to_motion(self) -> RelativeMotion {
        let (s, c) = self.delta_rot.sin_cos();
        RelativeMotion {
            dx: self.delta_trans * c,
            dy: self.delta_trans * s,
            dtheta: self.delta_rot,
            path: self.delta_trans.abs(),
            turn: self.delta_rot.abs(),
        }
    }
}

/// Rigid motion in the start frame, plus the travelled path length and
/// accumulated absolute turning that drive the noise model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeMotion {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub path: f64,
    pub turn: f64,
}

impl RelativeMotion {
    pub fn identity() -> Self {
        RelativeMotion::default()
    }

    pub fn is_identity(&self) -> bool {
        *self == RelativeMotion::identity()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RelativeMotion) -> RelativeMotion {
        let (s, c) = self.dtheta.sin_cos();
        RelativeMotion {
            dx: self.dx + c * next.dx - s * next.dy,
            dy: self.dy + s * next.dx + c * next.dy,
            dtheta: wrap_to_pi(self.dtheta + next.dtheta),
            path: self.path + next.path,
            turn: self.turn + next.turn,
        }
    }
}

/// Rotate by `rot`, translate by `trans`, then rotate by `post_rot`. Noise
/// variances are driven by `length` (meters) and `turning` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomicStep {
    pub rot: f64,
    pub trans: f64,
    pub post_rot: f64,
    pub length: f64,
    pub turning: f64,
}

impl AtomicStep {
    pub fn is_identity(&self) -> bool {
        self.rot == 0.0 && self.trans == 0.0 && self.post_rot == 0.0 && self.length == 0.0 && self.turning == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionNoise {
    /// Translation error variance per meter travelled (m^2 / m).
    pub trans_variance_per_meter: f64,
    /// Heading error variance per meter travelled (rad^2 / m).
    pub rot_variance_per_meter: f64,
    /// Heading error variance per radian turned (rad^2 / rad).
    pub rot_variance_per_radian: f64,
    /// Gaussian tails are cut off at this many standard deviations.
    pub cutoff: f64,
    /// Largest translation of a single atomic step.
    pub max_step_trans: f64,
    /// Largest rotation of a single atomic step.
    pub max_step_rot: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        MotionNoise {
            trans_variance_per_meter: 0.01,
            rot_variance_per_meter: 0.005,
            rot_variance_per_radian: 0.0,
            cutoff: 3.0,
            max_step_trans: 1.0,
            max_step_rot: FRAC_PI_2,
        }
    }
}

impl MotionNoise {
    pub fn noiseless() -> Self {
        MotionNoise {
            trans_variance_per_meter: 0.0,
            rot_variance_per_meter: 0.0,
            rot_variance_per_radian: 0.0,
            ..MotionNoise::default()
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let coeffs = [self.trans_variance_per_meter, self.rot_variance_per_meter, self.rot_variance_per_radian];
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(MotionError::InvalidNoise("variance coefficients must be finite and >= 0".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(MotionError::InvalidNoise(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        if !(self.max_step_trans > 0.0 && self.max_step_rot > 0.0) {
            return Err(MotionError::InvalidNoise("step limits must be positive".into()));
        }
        Ok(())
    }

    pub fn trans_sigma(&self, step: &AtomicStep) -> f64 {
        (self.trans_variance_per_meter * step.length).sqrt()
    }

    pub fn rot_sigma(&self, step: &AtomicStep) -> f64 {
        (self.rot_variance_per_meter * step.length + self.rot_variance_per_radian * step.turning).sqrt()
    }
}

/// Splits a relative motion into rotate-translate-rotate atomic steps whose
/// translation and rotation stay within the noise model's step limits.
pub fn decompose(motion: &RelativeMotion, noise: &MotionNoise) -> Vec<AtomicStep> {
    if motion.is_identity() {
        return Vec::new();
    }
    let dist = motion.dx.hypot(motion.dy);
    let (rot1, trans, rot2) = if dist > 1e-12 {
        let heading = motion.dy.atan2(motion.dx);
        if heading.abs() <= FRAC_PI_2 {
            (heading, dist, wrap_to_pi(motion.dtheta - heading))
        } else {
            let back = wrap_to_pi(heading - PI);
            (back, -dist, wrap_to_pi(motion.dtheta - back))
        }
    } else {
        (wrap_to_pi(motion.dtheta), 0.0, 0.0)
    };

    let rotation = rot1.abs() + rot2.abs();
    let turn_scale = if rotation > 0.0 { motion.turn / rotation } else { 0.0 };
    let path_scale = if trans != 0.0 { motion.path / trans.abs() } else { 0.0 };
    let pieces = |x: f64, limit: f64| ((x.abs() / limit).ceil() as usize).max(1);

    let mut steps = Vec::new();
    let k1 = pieces(rot1, noise.max_step_rot);
    for _ in 0..k1 - 1 {
        steps.push((rot1 / k1 as f64, 0.0, 0.0));
    }
    let mut carry = rot1 / k1 as f64;
    if trans != 0.0 {
        let kt = pieces(trans, noise.max_step_trans);
        for _ in 0..kt {
            steps.push((carry, trans / kt as f64, 0.0));
            carry = 0.0;
        }
    } else {
        steps.push((carry, 0.0, 0.0));
    }
    if rot2 != 0.0 {
        let k2 = pieces(rot2, noise.max_step_rot);
        steps.last_mut().expect("at least one step").2 = rot2 / k2 as f64;
        for _ in 1..k2 {
            steps.push((rot2 / k2 as f64, 0.0, 0.0));
        }
    }
    let mut out: Vec<AtomicStep> = steps
        .into_iter()
        .map(|(rot, trans, post_rot)| AtomicStep {
            rot,
            trans,
            post_rot,
            length: trans.abs() * path_scale,
            turning: (rot.abs() + post_rot.abs()) * turn_scale,
        })
        .collect();
    // travelled distance with no net displacement still accrues noise
    if trans == 0.0 && motion.path > 0.0 {
        out[0].length = motion.path;
    }
    if rotation == 0.0 && motion.turn > 0.0 {
        out[0].turning = motion.turn;
    }
    out
}

/// One kernel offset: target layer shift and cell shift with its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEntry {
    pub dt: i32,
    pub dix: i32,
    pub diy: i32,
    pub weight: f64,
}

/// Discrete transition kernel for a source state at a fixed heading.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionKernel {
    pub entries: Vec<KernelEntry>,
}

impl MotionKernel {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }
}

/// Midpoint quadrature of a zero-mean Gaussian truncated at `cutoff` sigma.
fn quadrature(sigma: f64, cutoff: f64, resolution: f64) -> Vec<(f64, f64)> {
    if sigma <= 0.0 {
        return vec![(0.0, 1.0)];
    }
    let half = cutoff * sigma;
    let mut m = ((2.0 * half / resolution).ceil() as usize).clamp(1, MAX_QUADRATURE_NODES);
    if m % 2 == 0 {
        m += 1;
    }
    let width = 2.0 * half / m as f64;
    let cdf = |x: f64| 0.5 * libm::erfc(-x / (sigma * SQRT_2));
    let mut nodes: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let a = -half + i as f64 * width;
            (a + 0.5 * width, cdf(a + width) - cdf(a))
        })
        .collect();
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    nodes.iter_mut().for_each(|n| n.1 /= total);
    nodes
}

/// Kernel of one atomic step for a source state with heading `heading` on a
/// grid with square cells of `cell_size` and `theta_bins` orientation layers.
///
/// Each quadrature node of the (translation, heading) noise lands at a
/// continuous offset that is split linearly over its eight surrounding grid
/// offsets, which preserves the offset mean.
pub fn motion_kernel(
    noise: &MotionNoise,
    step: &AtomicStep,
    heading: f64,
    cell_size: f64,
    theta_bins: usize,
) -> Result<MotionKernel, MotionError> {
    noise.validate()?;
    let theta_step = std::f64::consts::TAU / theta_bins as f64;
    let sigma_t = noise.trans_sigma(step);
    let sigma_r = noise.rot_sigma(step);
    let trans_nodes = quadrature(sigma_t, noise.cutoff, 0.25 * cell_size);
    let rot_res = (0.25 * theta_step).min(if step.trans != 0.0 { 0.25 * cell_size / step.trans.abs() } else { f64::INFINITY });
    let rot_nodes = quadrature(sigma_r, noise.cutoff, rot_res);

    let mut acc: BTreeMap<(i32, i32, i32), f64> = BTreeMap::new();
    for &(er, wr) in &rot_nodes {
        let dir = heading + step.rot + er;
        let (s, c) = dir.sin_cos();
        let gt = (step.rot + er + step.post_rot) / theta_step;
        for &(et, wt) in &trans_nodes {
            let d = step.trans + et;
            splat(&mut acc, d * c / cell_size, d * s / cell_size, gt, wr * wt);
        }
    }
    let total: f64 = acc.values().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(MotionError::EmptyKernel);
    }
    let entries = acc
        .into_iter()
        .map(|((dt, diy, dix), w)| KernelEntry { dt, dix, diy, weight: w / total })
        .collect();
    Ok(MotionKernel { entries })
}

fn splat(acc: &mut BTreeMap<(i32, i32, i32), f64>, gx: f64, gy: f64, gt: f64, w: f64) {
    let (x0, y0, t0) = (gx.floor(), gy.floor(), gt.floor());
    let (fx, fy, ft) = (gx - x0, gy - y0, gt - t0);
    for (dt, wt) in [(0, 1.0 - ft), (1, ft)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let v = w * wt * wy * wx;
                if v > 0.0 {
                    let key = (t0 as i32 + dt, y0 as i32 + dy, x0 as i32 + dx);
                    *acc.entry(key).or_insert(0.0) += v;
                }
            }
        }
    }
}

/// Kernels of one atomic step for every source layer, with target layers
/// reduced modulo the layer count and entries grouped by target layer.
#[derive(Debug, Clone)]
pub struct StepOperator {
    /// `by_source[t]` lists `(target layer, offsets)` in ascending target order.
    pub by_source: Vec<Vec<(usize, Vec<(i32, i32, f64)>)>>,
}

impl StepOperator {
    pub fn new(noise: &MotionNoise, step: &AtomicStep, cell_size: f64, theta_bins: usize) -> Result<Self, MotionError> {
        let theta_step = std::f64::consts::TAU / theta_bins as f64;
        let mut by_source = Vec::with_capacity(theta_bins);
        for t in 0..theta_bins {
            let kernel = motion_kernel(noise, step, t as f64 * theta_step, cell_size, theta_bins)?;
            let mut grouped: BTreeMap<usize, BTreeMap<(i32, i32), f64>> = BTreeMap::new();
            for e in kernel.entries {
                let target = (t as i64 + e.dt as i64).rem_euclid(theta_bins as i64) as usize;
                *grouped.entry(target).or_default().entry((e.diy, e.dix)).or_insert(0.0) += e.weight;
            }
            by_source.push(
                grouped
                    .into_iter()
                    .map(|(target, m)| (target, m.into_iter().map(|((diy, dix), w)| (dix, diy, w)).collect()))
                    .collect(),
            );
        }
        Ok(StepOperator { by_source })
    }

    /// For each target layer, the `(source, entry index)` pairs feeding it,
    /// sources ascending.
    pub fn incoming(&self) -> Vec<Vec<(usize, usize)>> {
        let mut inc = vec![Vec::new(); self.by_source.len()];
        for (src, groups) in self.by_source.iter().enumerate() {
            for (gi, (target, _)) in groups.iter().enumerate() {
                inc[*target].push((src, gi));
            }
        }
        inc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel_mean(k: &MotionKernel) -> (f64, f64, f64) {
        k.entries.iter().fold((0.0, 0.0, 0.0), |acc, e| {
            (acc.0 + e.weight * e.dix as f64, acc.1 + e.weight * e.diy as f64, acc.2 + e.weight * e.dt as f64)
        })
    }

    #[test]
    fn zero_motion_decomposes_to_nothing_and_kernel_is_identity() {
        let noise = MotionNoise::default();
        assert!(decompose(&OdometryReading::new(0.0, 0.0).to_motion(), &noise).is_empty());
        let step = AtomicStep { rot: 0.0, trans: 0.0, post_rot: 0.0, length: 0.0, turning: 0.0 };
        let k = motion_kernel(&noise, &step, 0.3, 0.1, 16).unwrap();
        assert_eq!(k.entries, vec![KernelEntry { dt: 0, dix: 0, diy: 0, weight: 1.0 }]);
    }

    #[test]
    fn translation_kernel_is_normalized_ahead_and_symmetric() {
        let noise = MotionNoise { trans_variance_per_meter: 0.004, rot_variance_per_meter: 0.002, ..MotionNoise::default() };
        let step = AtomicStep { rot: 0.0, trans: 1.0, post_rot: 0.0, length: 1.0, turning: 0.0 };
        let k = motion_kernel(&noise, &step, 0.0, 0.1, 36).unwrap();
        assert!((k.total() - 1.0).abs() < 1e-12);
        let (mx, my, _) = kernel_mean(&k);
        assert!(mx > 9.0 && mx < 10.5, "{mx}");
        assert!(my.abs() < 1e-12);
        let find = |dix: i32, diy: i32, dt: i32| {
            k.entries.iter().find(|e| (e.dix, e.diy, e.dt) == (dix, diy, dt)).map_or(0.0, |e| e.weight)
        };
        for e in &k.entries {
            // reflection across the motion axis mirrors y and heading offsets
            let mirror = find(e.dix, -e.diy, -e.dt);
            assert!((e.weight - mirror).abs() < 1e-12, "{e:?} vs {mirror}");
        }
    }

    #[test]
    fn decompose_splits_and_conserves_variance() {
        let noise = MotionNoise { max_step_trans: 0.5, max_step_rot: 0.5, ..MotionNoise::default() };
        let m = RelativeMotion { dx: 1.2, dy: 0.0, dtheta: 1.3, path: 1.5, turn: 1.3 };
        let steps = decompose(&m, &noise);
        assert!(steps.iter().all(|s| s.trans.abs() <= 0.5 + 1e-12 && s.rot.abs() <= 0.5 + 1e-12));
        assert!((steps.iter().map(|s| s.trans).sum::<f64>() - 1.2).abs() < 1e-12);
        assert!((steps.iter().map(|s| s.length).sum::<f64>() - 1.5).abs() < 1e-12);
        assert!((steps.iter().map(|s| s.turning).sum::<f64>() - 1.3).abs() < 1e-12);
        let net = steps.iter().fold(RelativeMotion::identity(), |acc, s| {
            acc.then(&OdometryReading::new(0.0, s.rot).to_motion())
                .then(&OdometryReading::new(s.trans, 0.0).to_motion())
                .then(&OdometryReading::new(0.0, s.post_rot).to_motion())
        });
        assert!((net.dx - m.dx).abs() < 1e-12 && (net.dy - m.dy).abs() < 1e-12);
        assert!((wrap_to_pi(net.dtheta - m.dtheta)).abs() < 1e-12);
    }

    #[test]
    fn backward_motion_keeps_heading() {
        let m = OdometryReading::new(-0.4, 0.0).to_motion();
        let steps = decompose(&m, &MotionNoise::default());
        assert_eq!(steps.len(), 1);
        assert!(steps[0].rot.abs() < 1e-12 && steps[0].post_rot.abs() < 1e-12);
        assert!((steps[0].trans + 0.4).abs() < 1e-12);
    }

    #[test]
    fn composition_is_associative() {
        let a = OdometryReading::new(0.3, 0.2).to_motion();
        let b = OdometryReading::new(-0.1, 0.7).to_motion();
        let c = OdometryReading::new(0.5, -1.1).to_motion();
        let l = a.then(&b).then(&c);
        let r = a.then(&b.then(&c));
        assert!((l.dx - r.dx).abs() < 1e-12 && (l.dy - r.dy).abs() < 1e-12 && (l.dtheta - r.dtheta).abs() < 1e-12);
    }

    #[test]
    fn rotation_marginal_is_independent_of_heading() {
        let noise = MotionNoise { rot_variance_per_meter: 0.05, ..MotionNoise::default() };
        let step = AtomicStep { rot: 0.3, trans: 0.8, post_rot: 0.0, length: 0.8, turning: 0.3 };
        let marginal = |heading: f64| {
            let k = motion_kernel(&noise, &step, heading, 0.2, 16).unwrap();
            let mut m: BTreeMap<i32, f64> = BTreeMap::new();
            for e in k.entries {
                *m.entry(e.dt).or_insert(0.0) += e.weight;
            }
            m
        };
        let a = marginal(0.0);
        let b = marginal(2.0);
        assert_eq!(a.len(), b.len());
        for ((ka, va), (kb, vb)) in a.iter().zip(b.iter()) {
            assert_eq!(ka, kb);
            assert!((va - vb).abs() < 1e-12);
        }
    }
}
