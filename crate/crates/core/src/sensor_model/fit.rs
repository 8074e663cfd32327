//! Maximum-likelihood fit of `(sigma, c_r, c_d)` from (expected, measured)
//! distance pairs.

use thiserror::Error;

use super::{combine, gaussian_mass, BeamModelParams, Discretization};

/// Minimum number of pairs accepted by [`fit_parameters`].
pub const FIT_MIN_PAIRS: usize = 1000;

const PROB_FLOOR: f64 = 1e-300;
const GRID_POINTS: usize = 33;
const GOLDEN_ITERS: usize = 60;
const MAX_SWEEPS: usize = 60;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {required} pairs, got {got}")]
    InsufficientData { required: usize, got: usize },
    #[error("pair {index} has a value outside [0, {max_range}]: ({expected}, {measured})")]
    OutOfRange { index: usize, expected: f64, measured: f64, max_range: f64 },
    #[error("degenerate data: every pair is identical")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: BeamModelParams,
    /// Mean negative log-likelihood per pair at the optimum.
    pub nll: f64,
    pub sweeps: usize,
}

struct Group {
    expected: f64,
    counts: Vec<f64>,
}

struct Objective {
    groups: Vec<Group>,
    total: f64,
    n: usize,
    max_range: f64,
}

impl Objective {
    fn eval(&self, sigma: f64, c_r: f64, c_d: f64) -> f64 {
        let params = BeamModelParams { sigma, c_r, c_d, n: self.n, max_range: self.max_range };
        let disc = params.discretization();
        let mut pm = vec![0.0; self.n];
        let mut nll = 0.0;
        for g in &self.groups {
            for (k, slot) in pm.iter_mut().enumerate() {
                *slot = gaussian_mass(disc.lower_edge(k), disc.upper_edge(k), g.expected, sigma);
            }
            let z: f64 = pm.iter().sum();
            if z > 0.0 {
                pm.iter_mut().for_each(|v| *v /= z);
            }
            let dist = combine(&params, &pm);
            for (&c, &p) in g.counts.iter().zip(&dist.probs) {
                if c > 0.0 {
                    nll -= c * p.max(PROB_FLOOR).ln();
                }
            }
        }
        nll / self.total
    }
}

/// Fits the beam model by coordinate descent over `(sigma, c_r, c_d)`.
///
/// Pairs are grouped by expected-distance bin; each group is evaluated at the
/// mean expected distance of its members against the histogram of measured
/// bins. Each coordinate step scans a coarse grid over the full bound and
/// refines the best bracket by golden-section search.
pub fn fit_parameters(
    pairs: &[(f64, f64)],
    n: usize,
    max_range: f64,
) -> Result<FitResult, FitError> {
    if pairs.len() < FIT_MIN_PAIRS {
        return Err(FitError::InsufficientData { required: FIT_MIN_PAIRS, got: pairs.len() });
    }
    let tol = 1e-9 * max_range;
    for (index, &(e, m)) in pairs.iter().enumerate() {
        let ok = |v: f64| v.is_finite() && v >= -tol && v <= max_range + tol;
        if !ok(e) || !ok(m) {
            return Err(FitError::OutOfRange { index, expected: e, measured: m, max_range });
        }
    }
    if pairs.iter().all(|p| *p == pairs[0]) {
        return Err(FitError::Degenerate);
    }

    let disc = Discretization { n, max_range };
    let mut sums = vec![0.0; n];
    let mut counts = vec![vec![0.0; n]; n];
    let mut members = vec![0usize; n];
    for &(e, m) in pairs {
        let e = e.clamp(0.0, max_range);
        let k = disc.bin(e);
        sums[k] += e;
        members[k] += 1;
        counts[k][disc.bin(m.clamp(0.0, max_range))] += 1.0;
    }
    let groups: Vec<Group> = (0..n)
        .filter(|&k| members[k] > 0)
        .map(|k| Group { expected: sums[k] / members[k] as f64, counts: std::mem::take(&mut counts[k]) })
        .collect();
    let objective = Objective { groups, total: pairs.len() as f64, n, max_range };

    let delta = disc.delta();
    let sigma_bounds = ((delta / 20.0).ln(), (max_range / 2.0).ln());
    let defaults = BeamModelParams::with_defaults(n, max_range)
        .expect("defaults are valid for n >= 2 and positive range");
    // sigma searched in log space, c_r in sqrt space, c_d linearly
    let mut x = [defaults.sigma.ln(), defaults.c_r.sqrt(), defaults.c_d];
    let bounds = [sigma_bounds, (0.0, 1.0), (0.0, 1.0)];
    let decode = |x: &[f64; 3]| (x[0].exp(), x[1] * x[1], x[2]);
    let f = |x: &[f64; 3]| {
        let (s, r, d) = decode(x);
        objective.eval(s, r, d)
    };

    let mut best = f(&x);
    let mut sweeps = 0;
    for _ in 0..MAX_SWEEPS {
        sweeps += 1;
        let before = best;
        for axis in 0..3 {
            let (lo, hi) = bounds[axis];
            let along = |v: f64| {
                let mut y = x;
                y[axis] = v;
                f(&y)
            };
            let step = (hi - lo) / (GRID_POINTS - 1) as f64;
            let mut arg = x[axis];
            let mut val = best;
            for g in 0..GRID_POINTS {
                let v = lo + g as f64 * step;
                let fv = along(v);
                if fv < val {
                    val = fv;
                    arg = v;
                }
            }
            let (a, b) = ((arg - step).max(lo), (arg + step).min(hi));
            let (ga, gf) = golden_section(a, b, &along);
            if gf < val {
                val = gf;
                arg = ga;
            }
            if val < best {
                best = val;
                x[axis] = arg;
            }
        }
        if before - best <= 1e-12 * before.abs().max(1.0) {
            break;
        }
    }
    let (sigma, c_r, c_d) = decode(&x);
    Ok(FitResult {
        params: BeamModelParams { sigma, c_r, c_d, n, max_range },
        nll: best,
        sweeps,
    })
}

fn golden_section(mut a: f64, mut b: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
