//! The localization event loop.
//!
//! Odometry is accumulated and applied lazily right before the next sensor
//! update. All beams of a scan are filtered against the belief at scan start;
//! accepted beams are then incorporated one by one in bearing order.

mod config;
mod log;

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

pub use config::{LocalizerConfig, PriorConfig, SensorConfig};
pub use log::{read_log, write_log, EventPayload, LogError, SensorLogEvent};

use crate::belief::{BeliefError, BeliefGrid, LikelihoodSource, StateGrid};
use crate::filters::{self, BeamDecision};
use crate::motion_model::RelativeMotion;
use crate::sensor_model::{SensorTable, TableError, TableLimits};
use crate::world_map::{OccupancyGrid, Pose, WorldError};

#[derive(Debug, Error)]
pub enum LocalizerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("scan received but no sensor table is configured")]
    NoSensorTable,
    #[error("timestamp {t} precedes previous event at {previous}")]
    TimestampRegression { t: f64, previous: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub t: f64,
    pub pose: Pose,
    pub prob: f64,
    pub entropy: f64,
    pub active_fraction: f64,
    /// Set when an update underflowed during this step.
    pub lost: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub estimate: PoseEstimate,
    pub decisions: Vec<BeamDecision>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub events: usize,
    pub scans: usize,
    pub odometry: usize,
    pub total_distance: f64,
    pub beams: usize,
    pub beams_rejected: usize,
    pub lost_events: usize,
    /// Wall time of each scan update (prediction, filtering and perception).
    pub update_seconds: Vec<f64>,
}

impl RunStats {
    pub fn filtered_fraction(&self) -> f64 {
        if self.beams == 0 {
            0.0
        } else {
            self.beams_rejected as f64 / self.beams as f64
        }
    }
}

pub struct Localizer {
    config: LocalizerConfig,
    table: Option<SensorTable>,
    belief: BeliefGrid,
    pending: RelativeMotion,
    last_t: f64,
    last_estimate: Option<PoseEstimate>,
    stats: RunStats,
}

impl Localizer {
    /// Builds the state grid, sensor table and prior from the configuration.
    pub fn new(config: LocalizerConfig, map: &OccupancyGrid) -> Result<Self, LocalizerError> {
        config.validate().map_err(LocalizerError::Config)?;
        let grid = StateGrid::covering(map, config.cell_size, config.theta_bins)?;
        let params = config.sensor.params().map_err(|e| LocalizerError::Config(e.to_string()))?;
        let limits = TableLimits { max_entries: config.max_table_entries };
        let table = SensorTable::build(map, &params, &grid, config.theta_bins * config.table_theta_factor, limits)?;
        let belief = prior_belief(&config, grid, table.free_mask().to_vec())?;
        Ok(Self::with_parts(config, Some(table), belief))
    }

    /// Wraps an existing belief. `table` may be omitted when measurements are
    /// supplied through [`Localizer::observe`].
    pub fn with_parts(config: LocalizerConfig, table: Option<SensorTable>, mut belief: BeliefGrid) -> Self {
        belief.set_boundary(config.boundary);
        belief.set_epsilon(config.epsilon_fraction / belief.free_states() as f64);
        Localizer {
            config,
            table,
            belief,
            pending: RelativeMotion::identity(),
            last_t: f64::NEG_INFINITY,
            last_estimate: None,
            stats: RunStats::default(),
        }
    }

    pub fn config(&self) -> &LocalizerConfig {
        &self.config
    }

    pub fn belief(&self) -> &BeliefGrid {
        &self.belief
    }

    pub fn table(&self) -> Option<&SensorTable> {
        self.table.as_ref()
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Odometry not yet applied to the belief.
    pub fn pending_motion(&self) -> &RelativeMotion {
        &self.pending
    }

    /// Applies accumulated odometry to the belief.
    pub fn flush_motion(&mut self) -> Result<(), LocalizerError> {
        if !self.pending.is_identity() {
            self.belief.predict(&self.pending, &self.config.motion)?;
            self.pending = RelativeMotion::identity();
        }
        Ok(())
    }

    /// Incorporates one measurement given its per-state likelihood. Returns
    /// `false` when the update underflowed and the belief was kept (or reset,
    /// if so configured).
    pub fn observe<L: LikelihoodSource + ?Sized>(&mut self, likelihood: &L, p_avg: f64) -> Result<bool, LocalizerError> {
        self.flush_motion()?;
        match self.belief.apply_perception(likelihood, p_avg) {
            Ok(_) => Ok(true),
            Err(BeliefError::Underflow { .. }) => {
                if self.config.reset_on_lost {
                    self.reset()?;
                }
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn reset(&mut self) -> Result<(), LocalizerError> {
        let grid = self.belief.grid().clone();
        let free = self.belief.free_mask().to_vec();
        let mut b = BeliefGrid::uniform(grid, free)?;
        b.set_boundary(self.config.boundary);
        b.set_epsilon(self.config.epsilon_fraction / b.free_states() as f64);
        self.belief = b;
        Ok(())
    }

    pub fn estimate(&self, t: f64, lost: bool) -> PoseEstimate {
        let (_, pose, prob) = self.belief.max_posterior();
        PoseEstimate {
            t,
            pose,
            prob,
            entropy: self.belief.entropy(),
            active_fraction: self.belief.active_fraction(),
            lost,
        }
    }

    pub fn step(&mut self, event: &SensorLogEvent) -> Result<StepOutput, LocalizerError> {
        if event.t < self.last_t {
            return Err(LocalizerError::TimestampRegression { t: event.t, previous: self.last_t });
        }
        self.last_t = event.t;
        self.stats.events += 1;
        match &event.payload {
            EventPayload::Odometry(reading) => {
                self.stats.odometry += 1;
                self.stats.total_distance += reading.delta_trans.abs();
                self.pending = self.pending.then(&reading.to_motion());
                // the belief itself only changes at the next scan
                let mut estimate = match &self.last_estimate {
                    Some(e) => e.clone(),
                    None => self.estimate(event.t, false),
                };
                estimate.t = event.t;
                estimate.lost = false;
                Ok(StepOutput { estimate, decisions: Vec::new() })
            }
            EventPayload::Scan(beams) => {
                let started = Instant::now();
                self.stats.scans += 1;
                let out = self.scan(event.t, beams);
                self.stats.update_seconds.push(started.elapsed().as_secs_f64());
                out
            }
        }
    }

    fn scan(&mut self, t: f64, beams: &[(f64, f64)]) -> Result<StepOutput, LocalizerError> {
        if self.table.is_none() {
            return Err(LocalizerError::NoSensorTable);
        }
        self.flush_motion()?;
        let table = self.table.as_ref().expect("checked above");
        let max_range = table.params().max_range;
        let used: Vec<(f64, f64)> = beams
            .iter()
            .step_by(self.config.beam_stride)
            .map(|&(b, r)| (b, r.clamp(0.0, max_range)))
            .collect();
        let belief = &self.belief;
        let filter = &self.config.filter;
        let outcomes: Vec<filters::FilterOutcome> =
            used.par_iter().map(|&(b, r)| filters::evaluate(filter, belief, table, b, r)).collect();
        let decisions: Vec<BeamDecision> = used
            .iter()
            .zip(&outcomes)
            .map(|(&(bearing, measured), o)| BeamDecision {
                t,
                bearing,
                measured,
                accepted: o.decision.accepted(),
                score: o.score,
            })
            .collect();
        self.stats.beams += decisions.len();
        self.stats.beams_rejected += decisions.iter().filter(|d| !d.accepted).count();

        let mut accepted: Vec<(f64, f64)> = decisions.iter().filter(|d| d.accepted).map(|d| (d.bearing, d.measured)).collect();
        accepted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut lost = false;
        for (bearing, measured) in accepted {
            let table = self.table.as_ref().expect("checked above");
            let lik = table.beam_likelihood(bearing, measured);
            let p_avg = table.average_likelihood(measured);
            match self.belief.apply_perception(&lik, p_avg) {
                Ok(_) => {}
                Err(BeliefError::Underflow { .. }) => {
                    lost = true;
                    if self.config.reset_on_lost {
                        self.reset()?;
                        break;
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        if lost {
            self.stats.lost_events += 1;
        }
        let estimate = self.estimate(t, lost);
        self.last_estimate = Some(estimate.clone());
        Ok(StepOutput { estimate, decisions })
    }
}

/// Prior belief for a configuration.
pub fn prior_belief(config: &LocalizerConfig, grid: StateGrid, free: Vec<bool>) -> Result<BeliefGrid, BeliefError> {
    match config.prior {
        PriorConfig::Uniform => BeliefGrid::uniform(grid, free),
        PriorConfig::Gaussian { x, y, theta, sigma_xy, sigma_theta } => {
            BeliefGrid::gaussian(grid, free, &Pose::new(x, y, theta), sigma_xy, sigma_theta)
        }
    }
}

/// Result of replaying a log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRun {
    /// One estimate per scan event.
    pub estimates: Vec<PoseEstimate>,
    pub decisions: Vec<BeamDecision>,
    pub stats: RunStats,
}

/// Replays a log through a freshly configured localizer.
pub fn process_log(config: &LocalizerConfig, map: &OccupancyGrid, events: &[SensorLogEvent]) -> Result<LogRun, LocalizerError> {
    let mut localizer = Localizer::new(config.clone(), map)?;
    run_events(&mut localizer, events)
}

/// Replays a log through an existing localizer.
pub fn run_events(localizer: &mut Localizer, events: &[SensorLogEvent]) -> Result<LogRun, LocalizerError> {
    let mut estimates = Vec::new();
    let mut decisions = Vec::new();
    for event in events {
        let out = localizer.step(event)?;
        if matches!(event.payload, EventPayload::Scan(_)) {
            estimates.push(out.estimate);
            decisions.extend(out.decisions);
        }
    }
    Ok(LogRun { estimates, decisions, stats: localizer.stats().clone() })
}

pub fn write_trajectory_csv<W: Write>(estimates: &[PoseEstimate], mut w: W) -> io::Result<()> {
    writeln!(w, "t,x,y,theta,prob,entropy,active_fraction")?;
    for e in estimates {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.t, e.pose.x, e.pose.y, e.pose.theta, e.prob, e.entropy, e.active_fraction
        )?;
    }
    Ok(())
}
