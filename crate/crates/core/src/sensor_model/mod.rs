//! Discretized beam model for proximity sensors.
//!
//! A measurement is reported in one of `n` range bins of width
//! `max_range / n`; the last bin also collects every reading at or beyond the
//! maximal range. The likelihood of a bin mixes a Gaussian around the
//! expected distance to the closest mapped obstacle with a geometric law for
//! reflections on unmapped obstacles, evaluated incrementally from the
//! shortest bin upwards.

mod fit;
mod table;

pub use fit::{fit_parameters, FitError, FitResult, FIT_MIN_PAIRS};
pub use table::{
    build_sensor_table, BeamLikelihood, SensorTable, TableError, TableLimits, TABLE_MAGIC,
    TABLE_VERSION,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SensorModelError {
    #[error("invalid beam model parameters: {0}")]
    InvalidParams(String),
    #[error("expected distance {o_l} outside [0, {max_range}]")]
    DistanceOutOfRange { o_l: f64, max_range: f64 },
}

/// Parameters of the beam model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamModelParams {
    /// Standard deviation of the known-obstacle Gaussian, meters.
    pub sigma: f64,
    /// Per-bin probability of a reflection by an unmapped obstacle.
    pub c_r: f64,
    /// Probability that the closest mapped obstacle is detected.
    pub c_d: f64,
    /// Number of range bins.
    pub n: usize,
    /// Maximal sensor range in meters; `n * delta_d() == max_range`.
    pub max_range: f64,
}

impl BeamModelParams {
    pub fn new(sigma: f64, c_r: f64, c_d: f64, n: usize, max_range: f64) -> Result<Self, SensorModelError> {
        let p = BeamModelParams { sigma, c_r, c_d, n, max_range };
        p.validate()?;
        Ok(p)
    }

    /// Defaults used when no fitted values are available: `sigma = 2*delta_d`,
    /// `c_r = 0.01`, `c_d = 0.9`.
    pub fn with_defaults(n: usize, max_range: f64) -> Result<Self, SensorModelError> {
        Self::new(2.0 * max_range / n as f64, 0.01, 0.9, n, max_range)
    }

    pub fn validate(&self) -> Result<(), SensorModelError> {
        let bad = |m: String| Err(SensorModelError::InvalidParams(m));
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.c_r) {
            return bad(format!("c_r must lie in [0, 1], got {}", self.c_r));
        }
        if !(0.0..=1.0).contains(&self.c_d) {
            return bad(format!("c_d must lie in [0, 1], got {}", self.c_d));
        }
        if self.n < 2 {
            return bad(format!("need at least 2 range bins, got {}", self.n));
        }
        if !(self.max_range > 0.0) || !self.max_range.is_finite() {
            return bad(format!("max_range must be positive, got {}", self.max_range));
        }
        Ok(())
    }

    pub fn delta_d(&self) -> f64 {
        self.max_range / self.n as f64
    }

    pub fn discretization(&self) -> Discretization {
        Discretization { n: self.n, max_range: self.max_range }
    }
}

/// Range-bin layout shared by expected and measured distances.
///
/// Bin `k` (zero-based) covers `[k*Δ, (k+1)*Δ)`; the last bin additionally
/// absorbs every distance `>= max_range`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub n: usize,
    pub max_range: f64,
}

impl Discretization {
    pub fn delta(&self) -> f64 {
        self.max_range / self.n as f64
    }

    pub fn bin(&self, d: f64) -> usize {
        if !(d < self.max_range) {
            return self.n - 1;
        }
        if d <= 0.0 {
            return 0;
        }
        ((d / self.delta()) as usize).min(self.n - 1)
    }

    /// Bin-center distance.
    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.delta()
    }

    pub fn lower_edge(&self, k: usize) -> f64 {
        k as f64 * self.delta()
    }

    pub fn upper_edge(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.max_range
        } else {
            (k + 1) as f64 * self.delta()
        }
    }
}

/// `P(d_i | o_l)` for all bins; sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDistribution {
    pub probs: Vec<f64>,
}

impl BeamDistribution {
    /// True when every entry lies in `[0, 1]`. The incremental mixture can
    /// overshoot the remaining mass when `c_d` is close to one together with
    /// a large `c_r`, which leaves a negative final bin.
    pub fn is_proper(&self) -> bool {
        self.probs.iter().all(|&p| (0.0..=1.0).contains(&p))
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Draws a bin index by inverse transform.
    pub fn sample_bin<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &p) in self.probs.iter().enumerate() {
            acc += p.max(0.0);
            if u < acc {
                return k;
            }
        }
        self.probs.len() - 1
    }
}

/// Geometric law for reflections on unmapped obstacles, built from the
/// recurrence `P_u(d_i) = c_r * (1 - Σ_{j<i} P_u(d_j))`.
pub fn unknown_obstacle_mass(params: &BeamModelParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.n);
    let mut cumulative = 0.0;
    for _ in 0..params.n {
        let p = params.c_r * (1.0 - cumulative);
        out.push(p);
        cumulative += p;
    }
    out
}

/// Gaussian around `o_l` integrated over each bin and renormalized over
/// `[0, max_range]`.
pub fn known_obstacle_density(params: &BeamModelParams, o_l: f64) -> Result<Vec<f64>, SensorModelError> {
    if !(0.0..=params.max_range).contains(&o_l) {
        return Err(SensorModelError::DistanceOutOfRange { o_l, max_range: params.max_range });
    }
    let disc = params.discretization();
    let mut masses: Vec<f64> = (0..params.n)
        .map(|k| gaussian_mass(disc.lower_edge(k), disc.upper_edge(k), o_l, params.sigma))
        .collect();
    let total: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= total;
    }
    Ok(masses)
}

/// Incremental mixture of the known- and unknown-obstacle cases. The last
/// bin receives `1 - Σ_{j<n} P(d_j)`.
pub fn beam_distribution(params: &BeamModelParams, o_l: f64) -> Result<BeamDistribution, SensorModelError> {
    let pm = known_obstacle_density(params, o_l)?;
    Ok(combine(params, &pm))
}

/// Mixes a known-obstacle distribution `pm` with the unknown-obstacle law.
///
/// For bin `i < n`:
/// `P(d_i) = 1 - (1 - (1 - Σ_{j<i} P_u(d_j)) c_d P_m(d_i)) (1 - (1 - Σ_{j<i} P(d_j)) c_r)`,
/// with the reaching probability taken from the location-conditioned
/// cumulative `Σ_{j<i} P(d_j | l)`.
pub fn combine(params: &BeamModelParams, pm: &[f64]) -> BeamDistribution {
    let n = params.n;
    assert_eq!(pm.len(), n, "known-obstacle vector has wrong length");
    let mut probs = Vec::with_capacity(n);
    let mut cum_u = 0.0;
    let mut cum_p = 0.0;
    for &pm_i in &pm[..n - 1] {
        let known = (1.0 - cum_u) * params.c_d * pm_i;
        let unknown = (1.0 - cum_p) * params.c_r;
        let p = 1.0 - (1.0 - known) * (1.0 - unknown);
        probs.push(p);
        cum_p += p;
        cum_u += params.c_r * (1.0 - cum_u);
    }
    probs.push(1.0 - cum_p);
    BeamDistribution { probs }
}

/// Mass of `N(mu, sigma^2)` on `[a, b)`, evaluated on the tail side to keep
/// absolute accuracy near machine precision.
pub(crate) fn gaussian_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    let za = (a - mu) / s;
    let zb = (b - mu) / s;
    let m = if za >= 0.0 {
        0.5 * (libm::erfc(za) - libm::erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb) - libm::erfc(-za))
    } else {
        0.5 * (libm::erf(zb) - libm::erf(za))
    };
    m.max(0.0)
}
