//! Position belief over a regular `(x, y, θ)` grid with selective updates.
//!
//! Each orientation layer is one partition. A layer is active while any of
//! its cells exceeds the threshold `ε`; passive layers are neither moved nor
//! re-weighted cell by cell. Their cells are only scaled by an accumulated
//! factor `β` (kept in log space) and the odometry they missed is composed
//! into a pending motion that is replayed when the layer comes back.

mod grid;
mod snapshot;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{state_count, StateGrid};

use crate::motion_model::{decompose, MotionError, MotionNoise, RelativeMotion, StepOperator};
use crate::sensor_model::gaussian_mass;
use crate::world_map::{wrap_to_pi, Pose};

/// Below this total mass an update is treated as numerical underflow.
pub const UNDERFLOW_MASS: f64 = 1e-300;

/// Default `ε` as a fraction of the uniform prior state probability.
pub const DEFAULT_EPSILON_FRACTION: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum BeliefError {
    #[error("belief has no free states")]
    NoFreeStates,
    #[error("pose ({x}, {y}) lies outside the state grid")]
    OutsideGrid { x: f64, y: f64 },
    #[error("update total mass {total:e} underflowed; measurement incompatible with belief")]
    Underflow { total: f64 },
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid belief values: {0}")]
    InvalidValues(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Per-state likelihood `P(s | l)` of a single measurement.
pub trait LikelihoodSource: Sync {
    fn likelihood(&self, layer: usize, cell: usize) -> f64;

    fn fill_layer(&self, layer: usize, out: &mut [f64]) {
        for (cell, v) in out.iter_mut().enumerate() {
            *v = self.likelihood(layer, cell);
        }
    }
}

/// Likelihood values stored per state in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLikelihood {
    layer_len: usize,
    values: Vec<f64>,
}

impl DenseLikelihood {
    pub fn new(grid: &StateGrid, values: Vec<f64>) -> Result<Self, BeliefError> {
        if values.len() != grid.state_count() {
            return Err(BeliefError::Dimension { expected: grid.state_count(), got: values.len() });
        }
        Ok(DenseLikelihood { layer_len: grid.layer_len(), values })
    }
}

impl LikelihoodSource for DenseLikelihood {
    fn likelihood(&self, layer: usize, cell: usize) -> f64 {
        self.values[layer * self.layer_len + cell]
    }

    fn fill_layer(&self, layer: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.values[layer * self.layer_len..(layer + 1) * self.layer_len]);
    }
}

/// How predicted mass leaving the grid is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Mass pushed off the grid or onto occupied cells is dropped and the
    /// belief renormalized.
    #[default]
    Clip,
    /// The grid is a torus.
    Wrap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionState {
    pub id: usize,
    pub active: bool,
    /// `ln β`; reconstructed cell value is `stored * β`.
    pub log_beta: f64,
    /// Largest stored cell value.
    pub p_max: f64,
    /// Sum of stored cell values.
    pub stored_mass: f64,
    stored_plogp: f64,
    pub pending: RelativeMotion,
}

impl PartitionState {
    fn new(id: usize) -> Self {
        PartitionState {
            id,
            active: true,
            log_beta: 0.0,
            p_max: 0.0,
            stored_mass: 0.0,
            stored_plogp: 0.0,
            pending: RelativeMotion::identity(),
        }
    }

    fn beta(&self) -> f64 {
        self.log_beta.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerceptionReport {
    /// Pre-normalization total, the inverse of the normalizer.
    pub total: f64,
    pub reactivated: usize,
    pub deactivated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictReport {
    /// Fraction of mass dropped at the grid boundary or on occupied cells.
    pub lost_fraction: f64,
    pub reactivated: usize,
    pub deactivated: usize,
}

#[derive(Debug, Clone)]
pub struct BeliefGrid {
    grid: StateGrid,
    free: Vec<bool>,
    free_states: usize,
    values: Vec<f64>,
    partitions: Vec<PartitionState>,
    epsilon: f64,
    boundary: Boundary,
    noise: MotionNoise,
    scratch: Vec<f64>,
}

impl BeliefGrid {
    fn with_values(grid: StateGrid, free: Vec<bool>, values: Vec<f64>) -> Result<Self, BeliefError> {
        if free.len() != grid.layer_len() {
            return Err(BeliefError::Dimension { expected: grid.layer_len(), got: free.len() });
        }
        let free_cells = free.iter().filter(|&&f| f).count();
        if free_cells == 0 {
            return Err(BeliefError::NoFreeStates);
        }
        let free_states = free_cells * grid.theta_bins;
        let partitions = (0..grid.theta_bins).map(PartitionState::new).collect();
        let n = grid.state_count();
        let mut belief = BeliefGrid {
            grid,
            free,
            free_states,
            values,
            partitions,
            epsilon: DEFAULT_EPSILON_FRACTION / free_states as f64,
            boundary: Boundary::Clip,
            noise: MotionNoise::default(),
            scratch: vec![0.0; n],
        };
        belief.normalize()?;
        belief.deactivate_quiet();
        Ok(belief)
    }

    /// Equal mass on every free state.
    pub fn uniform(grid: StateGrid, free: Vec<bool>) -> Result<Self, BeliefError> {
        let layer = grid.layer_len();
        let values = (0..grid.state_count())
            .map(|i| if free.get(i % layer).copied().unwrap_or(false) { 1.0 } else { 0.0 })
            .collect();
        Self::with_values(grid, free, values)
    }

    /// Separable Gaussian around `mean`, integrated over each cell and
    /// orientation bin. A zero sigma collapses that axis onto the nearest bin.
    pub fn gaussian(
        grid: StateGrid,
        free: Vec<bool>,
        mean: &Pose,
        sigma_xy: f64,
        sigma_theta: f64,
    ) -> Result<Self, BeliefError> {
        let (mx, my) = grid.cell_of(mean.x, mean.y).ok_or(BeliefError::OutsideGrid { x: mean.x, y: mean.y })?;
        let axis = |n: usize, origin: f64, mu: f64, nearest: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    if sigma_xy > 0.0 {
                        let a = origin + i as f64 * grid.cell_size;
                        gaussian_mass(a, a + grid.cell_size, mu, sigma_xy)
                    } else if i == nearest {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let wx = axis(grid.nx, grid.origin.0, mean.x, mx);
        let wy = axis(grid.ny, grid.origin.1, mean.y, my);
        let step = grid.theta_step();
        let nearest_t = grid.theta_bin(mean.theta);
        let wt: Vec<f64> = (0..grid.theta_bins)
            .map(|t| {
                if sigma_theta > 0.0 {
                    let d = wrap_to_pi(grid.layer_theta(t) - mean.theta);
                    (-2..=2)
                        .map(|k| {
                            let c = d + k as f64 * std::f64::consts::TAU;
                            gaussian_mass(c - step / 2.0, c + step / 2.0, 0.0, sigma_theta)
                        })
                        .sum()
                } else if t == nearest_t {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let layer = grid.layer_len();
        let mut values = vec![0.0; grid.state_count()];
        for (i, v) in values.iter_mut().enumerate() {
            let (ix, iy, t) = grid.coords(i);
            if free[i % layer] {
                *v = wx[ix] * wy[iy] * wt[t];
            }
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(BeliefError::InvalidValues("gaussian prior has no mass on free states".into()));
        }
        Self::with_values(grid, free, values)
    }

    /// Belief from explicit non-negative values; occupied cells are zeroed
    /// and the result normalized.
    pub fn from_values(grid: StateGrid, free: Vec<bool>, mut values: Vec<f64>) -> Result<Self, BeliefError> {
        if values.len() != grid.state_count() {
            return Err(BeliefError::Dimension { expected: grid.state_count(), got: values.len() });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(BeliefError::InvalidValues("values must be finite and non-negative".into()));
        }
        let layer = grid.layer_len();
        for (i, v) in values.iter_mut().enumerate() {
            if !free.get(i % layer).copied().unwrap_or(false) {
                *v = 0.0;
            }
        }
        Self::with_values(grid, free, values)
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    pub fn free_states(&self) -> usize {
        self.free_states
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sets `ε` and brings the partitions in line with it.
    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.max(0.0);
        self.settle();
        let _ = self.normalize();
        self.deactivate_quiet();
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn set_boundary(&mut self, boundary: Boundary) {
        self.boundary = boundary;
    }

    pub fn partitions(&self) -> &[PartitionState] {
        &self.partitions
    }

    fn layer_range(&self, t: usize) -> std::ops::Range<usize> {
        let l = self.grid.layer_len();
        t * l..(t + 1) * l
    }

    /// Reconstructed probability of one state.
    pub fn value(&self, index: usize) -> f64 {
        let p = &self.partitions[index / self.grid.layer_len()];
        if p.active {
            self.values[index]
        } else {
            self.values[index] * p.beta()
        }
    }

    /// Reconstructed probabilities of all states.
    pub fn values(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.value(i)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        let mut total = 0.0;
        for p in &self.partitions {
            if p.active {
                total += self.values[self.layer_range(p.id)].iter().sum::<f64>();
            } else {
                total += p.stored_mass * p.beta();
            }
        }
        total
    }

    /// Fraction of free states that are updated exactly: cells above `ε` in
    /// active layers.
    pub fn active_fraction(&self) -> f64 {
        let count: usize = self
            .partitions
            .iter()
            .filter(|p| p.active)
            .map(|p| self.values[self.layer_range(p.id)].iter().filter(|&&v| v > self.epsilon).count())
            .sum();
        count as f64 / self.free_states as f64
    }

    /// Probability mass held by cells above `ε` in active layers.
    pub fn active_mass(&self) -> f64 {
        self.partitions
            .iter()
            .filter(|p| p.active)
            .map(|p| self.values[self.layer_range(p.id)].iter().filter(|&&v| v > self.epsilon).sum::<f64>())
            .sum()
    }

    /// Entropy in nats over reconstructed values.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for p in &self.partitions {
            if p.active {
                h -= plogp_sum(&self.values[self.layer_range(p.id)]);
            } else if p.stored_mass > 0.0 {
                let beta = p.beta();
                if beta > 0.0 {
                    h -= beta * (p.stored_plogp + p.log_beta * p.stored_mass);
                }
            }
        }
        h
    }

    /// Cell-center pose and probability of the most likely state; ties go to
    /// the lowest index.
    pub fn max_posterior(&self) -> (usize, Pose, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for p in &self.partitions {
            let r = self.layer_range(p.id);
            let scale = if p.active { 1.0 } else { p.beta() };
            if !p.active && p.p_max * scale <= best.1 {
                continue;
            }
            for (i, &v) in self.values[r.clone()].iter().enumerate() {
                let v = v * scale;
                if v > best.1 {
                    best = (r.start + i, v);
                }
            }
        }
        (best.0, self.grid.state_pose(best.0), best.1)
    }

    /// Expected value of a per-state quantity under the belief. Passive layers
    /// contribute only when `include_passive` is set.
    pub fn expectation<L: LikelihoodSource + ?Sized>(&self, source: &L, include_passive: bool) -> f64 {
        let layer = self.grid.layer_len();
        let parts: Vec<f64> = self
            .values
            .par_chunks(layer)
            .enumerate()
            .map(|(t, v)| {
                let p = &self.partitions[t];
                if !p.active && (!include_passive || p.stored_mass == 0.0) {
                    return 0.0;
                }
                let mut f = vec![0.0; layer];
                source.fill_layer(t, &mut f);
                let s: f64 = v.iter().zip(&f).map(|(a, b)| a * b).sum();
                if p.active {
                    s
                } else {
                    s * p.beta()
                }
            })
            .collect();
        parts.iter().sum()
    }

    /// Bayes update with one measurement.
    ///
    /// Cells above `ε` in active layers are weighted by their own likelihood;
    /// all other cells by `p_avg`, which for passive layers only changes `β`.
    /// With `ε = 0` this is exactly the plain update. On underflow the belief
    /// is left unchanged.
    pub fn apply_perception<L: LikelihoodSource + ?Sized>(
        &mut self,
        likelihood: &L,
        p_avg: f64,
    ) -> Result<PerceptionReport, BeliefError> {
        let layer = self.grid.layer_len();
        let eps = self.epsilon;
        let active: Vec<bool> = self.partitions.iter().map(|p| p.active).collect();
        let mut next = std::mem::take(&mut self.scratch);
        next.par_chunks_mut(layer)
            .zip(self.values.par_chunks(layer))
            .enumerate()
            .for_each(|(t, (out, v))| {
                if !active[t] {
                    return;
                }
                likelihood.fill_layer(t, out);
                for (o, &b) in out.iter_mut().zip(v) {
                    *o = if b > eps { b * *o } else { b * p_avg };
                }
            });
        let mut total = 0.0;
        for p in &self.partitions {
            if p.active {
                for &v in &next[self.layer_range(p.id)] {
                    total += v;
                }
            } else {
                total += p.stored_mass * p.beta() * p_avg;
            }
        }
        if !(total >= UNDERFLOW_MASS) || !total.is_finite() {
            self.scratch = next;
            return Err(BeliefError::Underflow { total });
        }
        let log_scale = p_avg.ln() - total.ln();
        for p in self.partitions.iter_mut() {
            let r = p.id * layer..(p.id + 1) * layer;
            if p.active {
                for v in &mut next[r] {
                    *v /= total;
                }
            } else {
                next[r.clone()].copy_from_slice(&self.values[r]);
                p.log_beta += log_scale;
            }
        }
        self.scratch = std::mem::replace(&mut self.values, next);
        let reactivated = self.settle();
        if reactivated > 0 {
            self.normalize()?;
        }
        let deactivated = self.deactivate_quiet();
        Ok(PerceptionReport { total, reactivated, deactivated })
    }

    /// Entropy of the posterior that [`BeliefGrid::apply_perception`] would
    /// produce, without modifying the belief.
    pub fn trial_entropy<L: LikelihoodSource + ?Sized>(&self, likelihood: &L, p_avg: f64) -> Result<f64, BeliefError> {
        let layer = self.grid.layer_len();
        let eps = self.epsilon;
        let parts: Vec<(f64, f64)> = self
            .values
            .par_chunks(layer)
            .enumerate()
            .map(|(t, v)| {
                let p = &self.partitions[t];
                if p.active {
                    let mut f = vec![0.0; layer];
                    likelihood.fill_layer(t, &mut f);
                    let mut z = 0.0;
                    let mut q = 0.0;
                    for (&b, &l) in v.iter().zip(&f) {
                        let u = if b > eps { b * l } else { b * p_avg };
                        if u > 0.0 {
                            z += u;
                            q += u * u.ln();
                        }
                    }
                    (z, q)
                } else if p.stored_mass > 0.0 && p_avg > 0.0 {
                    let scale = p.beta() * p_avg;
                    if scale > 0.0 {
                        let log_scale = p.log_beta + p_avg.ln();
                        (scale * p.stored_mass, scale * (p.stored_plogp + log_scale * p.stored_mass))
                    } else {
                        (0.0, 0.0)
                    }
                } else {
                    (0.0, 0.0)
                }
            })
            .collect();
        let (z, q) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if !(z >= UNDERFLOW_MASS) || !z.is_finite() {
            return Err(BeliefError::Underflow { total: z });
        }
        Ok(z.ln() - q / z)
    }

    /// Motion update. Active layers are convolved with the motion kernel;
    /// passive layers accumulate the motion for later replay.
    pub fn predict(&mut self, motion: &RelativeMotion, noise: &MotionNoise) -> Result<PredictReport, BeliefError> {
        noise.validate()?;
        self.noise = *noise;
        if motion.is_identity() {
            return Ok(PredictReport::default());
        }
        for p in self.partitions.iter_mut().filter(|p| !p.active) {
            p.pending = p.pending.then(motion);
        }
        let before = self.total_mass();
        for step in decompose(motion, noise) {
            let op = StepOperator::new(noise, &step, self.grid.cell_size, self.grid.theta_bins)?;
            self.convolve_active(&op);
        }
        let reactivated = self.settle();
        let after = self.total_mass();
        let lost_fraction = if before > 0.0 { (1.0 - after / before).max(0.0) } else { 0.0 };
        self.normalize()?;
        let deactivated = self.deactivate_quiet();
        Ok(PredictReport { lost_fraction, reactivated, deactivated })
    }

    /// Applies one step operator to the active layers. Mass arriving in
    /// passive layers is merged into their stored values.
    fn convolve_active(&mut self, op: &StepOperator) {
        let layer = self.grid.layer_len();
        let incoming = op.incoming();
        let active: Vec<bool> = self.partitions.iter().map(|p| p.active).collect();
        let (nx, ny, boundary) = (self.grid.nx, self.grid.ny, self.boundary);
        let free = &self.free;
        let values = &self.values;
        let mut out = std::mem::take(&mut self.scratch);
        out.par_chunks_mut(layer).enumerate().for_each(|(t, out)| {
            out.fill(0.0);
            for &(src, gi) in &incoming[t] {
                if !active[src] {
                    continue;
                }
                let input = &values[src * layer..(src + 1) * layer];
                for &(dix, diy, w) in &op.by_source[src][gi].1 {
                    shift_add(out, input, dix, diy, w, nx, ny, boundary);
                }
            }
            for (o, &f) in out.iter_mut().zip(free) {
                if !f {
                    *o = 0.0;
                }
            }
        });
        let mut arrivals = Vec::new();
        for (t, &is_active) in active.iter().enumerate() {
            if is_active {
                continue;
            }
            let r = t * layer..(t + 1) * layer;
            if out[r.clone()].iter().any(|&v| v > 0.0) {
                arrivals.push((t, out[r.clone()].to_vec()));
            }
            out[r.clone()].copy_from_slice(&self.values[r]);
        }
        self.scratch = std::mem::replace(&mut self.values, out);
        for (t, inc) in arrivals {
            self.rebase(t, &inc);
        }
    }

    /// Folds `incoming` (already at the current time) into a passive layer.
    fn rebase(&mut self, t: usize, incoming: &[f64]) {
        let r = self.layer_range(t);
        let p = &mut self.partitions[t];
        let beta = p.beta();
        let old_mass = p.stored_mass * beta;
        let in_mass: f64 = incoming.iter().sum();
        for (v, &i) in self.values[r.clone()].iter_mut().zip(incoming) {
            *v = *v * beta + i;
        }
        p.log_beta = 0.0;
        if in_mass >= old_mass {
            p.pending = RelativeMotion::identity();
        }
        refresh_stats(p, &self.values[r]);
    }

    /// Restores a passive layer: replays its pending motion and rescales by
    /// `β`. Mass the replay moves into other layers is merged there.
    pub fn reactivate_layer(&mut self, t: usize) {
        if self.partitions[t].active {
            return;
        }
        let r = self.layer_range(t);
        let beta = self.partitions[t].beta();
        let pending = self.partitions[t].pending;
        let p = &mut self.partitions[t];
        p.active = true;
        p.log_beta = 0.0;
        p.pending = RelativeMotion::identity();
        for v in &mut self.values[r.clone()] {
            *v *= beta;
        }
        if pending.is_identity() {
            return;
        }
        let layer = self.grid.layer_len();
        let mut current = vec![0.0; self.values.len()];
        current[r.clone()].copy_from_slice(&self.values[r.clone()]);
        self.values[r].fill(0.0);
        let mut moved = vec![0.0; self.values.len()];
        for step in decompose(&pending, &self.noise) {
            let Ok(op) = StepOperator::new(&self.noise, &step, self.grid.cell_size, self.grid.theta_bins) else {
                continue;
            };
            moved.fill(0.0);
            for src in 0..self.grid.theta_bins {
                let input = &current[src * layer..(src + 1) * layer];
                if input.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (target, offs) in &op.by_source[src] {
                    let out = &mut moved[target * layer..(target + 1) * layer];
                    for &(dix, diy, w) in offs {
                        shift_add(out, input, dix, diy, w, self.grid.nx, self.grid.ny, self.boundary);
                    }
                }
            }
            for (c, v) in moved.iter_mut().enumerate() {
                if !self.free[c % layer] {
                    *v = 0.0;
                }
            }
            std::mem::swap(&mut current, &mut moved);
        }
        for target in 0..self.grid.theta_bins {
            let r = self.layer_range(target);
            let slice = &current[r.clone()];
            if slice.iter().all(|&v| v == 0.0) {
                continue;
            }
            if self.partitions[target].active {
                for (v, &m) in self.values[r].iter_mut().zip(slice) {
                    *v += m;
                }
            } else {
                let inc = slice.to_vec();
                self.rebase(target, &inc);
            }
        }
    }

    /// Stores a layer as passive with `β = 1`.
    pub fn deactivate_layer(&mut self, t: usize) {
        let r = self.layer_range(t);
        let p = &mut self.partitions[t];
        if !p.active {
            return;
        }
        p.active = false;
        p.log_beta = 0.0;
        p.pending = RelativeMotion::identity();
        refresh_stats(p, &self.values[r]);
    }

    /// Reactivates passive layers whose largest reconstructed value exceeds
    /// `ε`, until none qualifies.
    fn settle(&mut self) -> usize {
        let ln_eps = self.epsilon.ln();
        let mut count = 0;
        loop {
            let next = self
                .partitions
                .iter()
                .find(|p| !p.active && p.p_max > 0.0 && p.p_max.ln() + p.log_beta > ln_eps)
                .map(|p| p.id);
            match next {
                Some(t) => {
                    self.reactivate_layer(t);
                    count += 1;
                }
                None => return count,
            }
        }
    }

    fn deactivate_quiet(&mut self) -> usize {
        let mut count = 0;
        for t in 0..self.grid.theta_bins {
            if !self.partitions[t].active {
                continue;
            }
            let max = self.values[self.layer_range(t)].iter().fold(0.0f64, |m, &v| m.max(v));
            if max < self.epsilon {
                self.deactivate_layer(t);
                count += 1;
            }
        }
        count
    }

    fn normalize(&mut self) -> Result<f64, BeliefError> {
        let total = self.total_mass();
        if !(total >= UNDERFLOW_MASS) || !total.is_finite() {
            return Err(BeliefError::Underflow { total });
        }
        let ln_total = total.ln();
        let layer = self.grid.layer_len();
        for p in self.partitions.iter_mut() {
            if p.active {
                for v in &mut self.values[p.id * layer..(p.id + 1) * layer] {
                    *v /= total;
                }
            } else {
                p.log_beta -= ln_total;
            }
        }
        Ok(total)
    }
}

fn plogp_sum(values: &[f64]) -> f64 {
    values.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

fn refresh_stats(p: &mut PartitionState, values: &[f64]) {
    p.stored_mass = values.iter().sum();
    p.stored_plogp = plogp_sum(values);
    p.p_max = values.iter().fold(0.0f64, |m, &v| m.max(v));
}

/// `out[c + (dix, diy)] += w * input[c]` over one layer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn shift_add(out: &mut [f64], input: &[f64], dix: i32, diy: i32, w: f64, nx: usize, ny: usize, boundary: Boundary) {
    let (dix, diy) = (dix as i64, diy as i64);
    let (nxi, nyi) = (nx as i64, ny as i64);
    match boundary {
        Boundary::Clip => {
            if dix.abs() >= nxi || diy.abs() >= nyi {
                return;
            }
            let x0 = (-dix).max(0) as usize;
            let x1 = (nxi - dix).min(nxi) as usize;
            for iy in 0..ny {
                let ty = iy as i64 + diy;
                if ty < 0 || ty >= nyi {
                    continue;
                }
                let src = &input[iy * nx + x0..iy * nx + x1];
                let start = ty as usize * nx + (x0 as i64 + dix) as usize;
                let dst = &mut out[start..start + src.len()];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        Boundary::Wrap => {
            let sx = dix.rem_euclid(nxi) as usize;
            for iy in 0..ny {
                let ty = (iy as i64 + diy).rem_euclid(nyi) as usize;
                let src = &input[iy * nx..(iy + 1) * nx];
                let dst = &mut out[ty * nx..(ty + 1) * nx];
                for (ix, &s) in src.iter().enumerate() {
                    let tx = if ix + sx >= nx { ix + sx - nx } else { ix + sx };
                    dst[tx] += w * s;
                }
            }
        }
    }
}

pub use snapshot::{write_pgm, write_top_k_csv};
