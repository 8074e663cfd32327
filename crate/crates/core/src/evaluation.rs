//! Tracking metrics: deviation traces, failure fraction, kidnap recovery
//! times, confidence intervals and the cell-size sweep.

use std::io::{self, BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localizer::{process_log, LocalizerConfig, LocalizerError, PoseEstimate};
use crate::simulator::{simulate, SimConfig, SimError, TruthSample};
use crate::world_map::{OccupancyGrid, Pose};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("timestamp misalignment: {0}")]
    Misaligned(String),
    #[error("empty trace: {0}")]
    Empty(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Localizer(#[from] LocalizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Positional deviation (m) above which the estimate counts as wrong.
    pub threshold: f64,
    /// A wrong stretch counts as lost once it lasts this long (s).
    pub lost_persistence: f64,
    /// Deviation must stay below the threshold this long to count as
    /// recovered (s).
    pub recovery_hold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: 0.45, lost_persistence: 20.0, recovery_hold: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub t: f64,
    pub error: f64,
}

/// Positional error at every truth timestamp against the latest estimate at
/// or before it.
pub fn deviations(estimates: &[PoseEstimate], truth: &[TruthSample]) -> Result<Vec<Deviation>, EvalError> {
    if estimates.is_empty() {
        return Err(EvalError::Empty("estimates"));
    }
    if truth.is_empty() {
        return Err(EvalError::Empty("truth"));
    }
    for (name, ts) in [("estimates", estimates.iter().map(|e| e.t).collect::<Vec<_>>()), ("truth", truth.iter().map(|s| s.t).collect())] {
        if let Some(w) = ts.windows(2).find(|w| w[1] < w[0]) {
            return Err(EvalError::Misaligned(format!("{name} go back in time at t={}", w[1])));
        }
    }
    let mut out = Vec::with_capacity(truth.len());
    let mut j = 0;
    for s in truth {
        while j + 1 < estimates.len() && estimates[j + 1].t <= s.t {
            j += 1;
        }
        let e = &estimates[j];
        if e.t > s.t {
            return Err(EvalError::Misaligned(format!("no estimate at or before truth time {}", s.t)));
        }
        out.push(Deviation { t: s.t, error: (e.pose.x - s.pose.x).hypot(e.pose.y - s.pose.y) });
    }
    Ok(out)
}

/// Fraction of run time inside stretches where the deviation exceeds the
/// threshold for at least the persistence time. Sample `i` covers
/// `[t_i, t_{i+1})`.
pub fn tracking_failure_fraction(devs: &[Deviation], cfg: &EvalConfig) -> f64 {
    let Some((first, last)) = devs.first().zip(devs.last()) else { return 0.0 };
    let total = last.t - first.t;
    if total <= 0.0 {
        return 0.0;
    }
    let mut lost = 0.0;
    let mut i = 0;
    while i < devs.len() {
        if devs[i].error <= cfg.threshold {
            i += 1;
            continue;
        }
        let start = devs[i].t;
        while i < devs.len() && devs[i].error > cfg.threshold {
            i += 1;
        }
        let end = devs.get(i).map_or(last.t, |d| d.t);
        if end - start >= cfg.lost_persistence {
            lost += end - start;
        }
    }
    (lost / total).clamp(0.0, 1.0)
}

/// Earliest time at or after `from` where the deviation stays below the
/// threshold for the hold time; returns the time the hold completes. Sample
/// `i` covers `[t_i, t_{i+1})`.
fn confirm_time(devs: &[Deviation], from: f64, cfg: &EvalConfig) -> Option<f64> {
    let last = devs.last()?.t;
    let mut candidate: Option<f64> = None;
    for d in devs.iter().filter(|d| d.t >= from) {
        if let Some(c) = candidate {
            if d.t - c >= cfg.recovery_hold {
                return Some(c + cfg.recovery_hold);
            }
        }
        if d.error < cfg.threshold {
            candidate.get_or_insert(d.t);
        } else {
            candidate = None;
        }
    }
    candidate.filter(|c| last - c >= cfg.recovery_hold).map(|c| c + cfg.recovery_hold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recovery {
    pub onset: f64,
    /// Seconds from onset until the hold completes; `None` when censored at
    /// the end of the run.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RecoveryReport {
    pub recoveries: Vec<Recovery>,
    pub warnings: Vec<String>,
}

/// Recovery time per failure onset. An onset that falls before the previous
/// failure has recovered is merged into it.
pub fn recovery_times(devs: &[Deviation], onsets: &[f64], cfg: &EvalConfig) -> RecoveryReport {
    let mut sorted = onsets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut report = RecoveryReport::default();
    let mut busy_until = f64::NEG_INFINITY;
    for onset in sorted {
        if onset < busy_until {
            report.warnings.push(format!("failure at t={onset} overlaps the previous failure; merged"));
            continue;
        }
        let confirmed = confirm_time(devs, onset, cfg);
        busy_until = confirmed.unwrap_or(f64::INFINITY);
        report.recoveries.push(Recovery { onset, seconds: confirmed.map(|c| c - onset) });
    }
    report
}

/// Mean and half-width of the normal-approximation 95% interval.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Median treating censored values as infinite; `None` when the median is
/// censored.
pub fn censored_median(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub failure_fraction: f64,
    pub recovery_times: Vec<Option<f64>>,
    pub mean_error: f64,
    /// Mean wall time per update, when timings are available.
    pub update_seconds: Option<f64>,
    /// `(t, active_fraction)` per estimate.
    pub active_fraction: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Full metric set for one run. Recovery onsets are the truth samples
/// flagged as kidnaps.
pub fn evaluate_run(
    estimates: &[PoseEstimate],
    truth: &[TruthSample],
    update_seconds: &[f64],
    cfg: &EvalConfig,
) -> Result<RunMetrics, EvalError> {
    let devs = deviations(estimates, truth)?;
    let onsets: Vec<f64> = truth.iter().filter(|s| s.kidnap).map(|s| s.t).collect();
    let rec = recovery_times(&devs, &onsets, cfg);
    Ok(RunMetrics {
        failure_fraction: tracking_failure_fraction(&devs, cfg),
        recovery_times: rec.recoveries.iter().map(|r| r.seconds).collect(),
        mean_error: devs.iter().map(|d| d.error).sum::<f64>() / devs.len() as f64,
        update_seconds: (!update_seconds.is_empty()).then(|| update_seconds.iter().sum::<f64>() / update_seconds.len() as f64),
        active_fraction: estimates.iter().map(|e| (e.t, e.active_fraction)).collect(),
        warnings: rec.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell_size: f64,
    pub runs: usize,
    /// Mean deviation after convergence, averaged over runs.
    pub mean_error: f64,
    pub error_ci: f64,
    /// Simulated seconds until the estimate first stays within the
    /// threshold for the hold time; `None` if any run never converges.
    pub convergence_time: Option<f64>,
    /// Wall-clock seconds per run; not deterministic.
    pub cpu_seconds: f64,
}

struct SweepRun {
    error: Option<f64>,
    convergence: Option<f64>,
    cpu: f64,
}

fn sweep_run(map: &OccupancyGrid, loc: &LocalizerConfig, sim: &SimConfig, cfg: &EvalConfig) -> Result<SweepRun, EvalError> {
    let (events, truth) = simulate(map, sim)?;
    let started = Instant::now();
    let run = process_log(loc, map, &events)?;
    let cpu = started.elapsed().as_secs_f64();
    let devs = deviations(&run.estimates, &truth.poses)?;
    let t0 = devs[0].t;
    let converged = confirm_time(&devs, t0, cfg).map(|c| c - cfg.recovery_hold);
    let error = converged.map(|c| {
        let after: Vec<f64> = devs.iter().filter(|d| d.t >= c).map(|d| d.error).collect();
        after.iter().sum::<f64>() / after.len() as f64
    });
    Ok(SweepRun { error, convergence: converged.map(|c| c - t0), cpu })
}

/// Runs every `(cell size, seed)` pair and reports the mean converged error
/// per cell size. Runs that never converge contribute no error sample.
pub fn resolution_sweep(
    map: &OccupancyGrid,
    base: &LocalizerConfig,
    scenario: &SimConfig,
    cell_sizes: &[f64],
    seeds: &[u64],
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    let jobs: Vec<(usize, u64)> = (0..cell_sizes.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let results: Vec<Result<(usize, SweepRun), EvalError>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let loc = LocalizerConfig { cell_size: cell_sizes[c], ..base.clone() };
            let sim = SimConfig { seed, ..scenario.clone() };
            sweep_run(map, &loc, &sim, cfg).map(|r| (c, r))
        })
        .collect();
    let mut per_cell: Vec<Vec<SweepRun>> = (0..cell_sizes.len()).map(|_| Vec::new()).collect();
    for r in results {
        let (c, run) = r?;
        per_cell[c].push(run);
    }
    Ok(cell_sizes
        .iter()
        .zip(per_cell)
        .map(|(&cell_size, runs)| {
            let errors: Vec<f64> = runs.iter().filter_map(|r| r.error).collect();
            let (mean_error, error_ci) = mean_ci(&errors);
            let convergence_time = runs
                .iter()
                .map(|r| r.convergence)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            SweepRow {
                cell_size,
                runs: runs.len(),
                mean_error,
                error_ci,
                convergence_time,
                cpu_seconds: runs.iter().map(|r| r.cpu).sum::<f64>() / runs.len().max(1) as f64,
            }
        })
        .collect())
}

fn parse_rows<R: BufRead>(reader: R, header: &str) -> Result<Vec<Vec<f64>>, EvalError> {
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != header {
                return Err(EvalError::Parse { line: 1, message: format!("expected header `{header}`") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let fields = fields.map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?;
        if fields.len() != width {
            return Err(EvalError::Parse { line: i + 1, message: format!("expected {width} fields, got {}", fields.len()) });
        }
        rows.push(fields);
    }
    Ok(rows)
}

pub fn read_trajectory_csv<R: BufRead>(reader: R) -> Result<Vec<PoseEstimate>, EvalError> {
    Ok(parse_rows(reader, "t,x,y,theta,prob,entropy,active_fraction")?
        .into_iter()
        .map(|r| PoseEstimate {
            t: r[0],
            pose: Pose::new(r[1], r[2], r[3]),
            prob: r[4],
            entropy: r[5],
            active_fraction: r[6],
            lost: false,
        })
        .collect())
}

pub fn read_truth_csv<R: BufRead>(reader: R) -> Result<Vec<TruthSample>, EvalError> {
    Ok(parse_rows(reader, "t,x,y,theta,kidnap_flag")?
        .into_iter()
        .map(|r| TruthSample { t: r[0], pose: Pose::new(r[1], r[2], r[3]), kidnap: r[4] != 0.0 })
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], with_cpu: bool, mut w: W) -> io::Result<()> {
    write!(w, "cell_size,runs,mean_error,error_ci,convergence_time")?;
    writeln!(w, "{}", if with_cpu { ",cpu_seconds" } else { "" })?;
    for r in rows {
        let conv = r.convergence_time.map_or_else(|| "censored".to_string(), |c| c.to_string());
        write!(w, "{},{},{},{},{}", r.cell_size, r.runs, r.mean_error, r.error_ci, conv)?;
        if with_cpu {
            write!(w, ",{}", r.cpu_seconds)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
