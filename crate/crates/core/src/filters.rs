//! Per-reading acceptance tests for environments with unmodelled obstacles.
//!
//! The entropy filter keeps readings that do not make the belief less
//! certain. The distance filter rejects readings that are, with probability
//! above `gamma`, shorter than the mapped distance.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefGrid, LikelihoodSource};
use crate::sensor_model::{SensorTable, TableError};
use crate::world_map::{Beam, Pose};

/// Entropy increases up to this many nats count as "no increase".
pub const ENTROPY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    #[default]
    None,
    Entropy,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub gamma: f64,
    /// Include passive layers in the distance filter's expectation.
    pub exact_passive: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { kind: FilterKind::None, gamma: 0.99, exact_passive: false }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn accepted(self) -> bool {
        self == Decision::Accept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub decision: Decision,
    /// `ΔH` for the entropy filter, `P_short` for the distance filter, 0
    /// without a filter.
    pub score: f64,
    pub diagnostic: Option<String>,
}

impl FilterOutcome {
    fn accept(score: f64) -> Self {
        FilterOutcome { decision: Decision::Accept, score, diagnostic: None }
    }
}

/// Accepts iff the trial posterior's entropy does not exceed the current
/// entropy. The belief is not modified.
pub fn entropy_filter_accept<L: LikelihoodSource + ?Sized>(
    belief: &BeliefGrid,
    likelihood: &L,
    p_avg: f64,
) -> FilterOutcome {
    match belief.trial_entropy(likelihood, p_avg) {
        Ok(h) => {
            let dh = h - belief.entropy();
            let decision = if dh <= ENTROPY_TOLERANCE { Decision::Accept } else { Decision::Reject };
            FilterOutcome { decision, score: dh, diagnostic: None }
        }
        Err(e) => FilterOutcome {
            decision: Decision::Reject,
            score: f64::NAN,
            diagnostic: Some(e.to_string()),
        },
    }
}

/// Probability that a reading in `measured_bin` is shorter than a reading
/// reflected by the mapped obstacle at the given pose.
pub fn p_short_conditional(table: &SensorTable, pose: &Pose, beam: &Beam, measured_bin: usize) -> Result<f64, TableError> {
    table.p_short(pose, beam, measured_bin)
}

/// `P_short(d_i | l)` for every state of the table's grid.
pub struct ShortSource<'a> {
    table: &'a SensorTable,
    layers: Vec<usize>,
    bin: usize,
}

impl<'a> ShortSource<'a> {
    pub fn new(table: &'a SensorTable, bearing: f64, measured: f64) -> Self {
        ShortSource { table, layers: table.layer_map(bearing), bin: table.discretization().bin(measured) }
    }
}

impl LikelihoodSource for ShortSource<'_> {
    fn likelihood(&self, layer: usize, cell: usize) -> f64 {
        self.table.short_entry(self.table.expected_bin_at(cell, self.layers[layer]), self.bin)
    }
}

/// Belief-averaged `P_short`; rejects iff it exceeds `gamma`.
pub fn distance_filter_accept(
    belief: &BeliefGrid,
    table: &SensorTable,
    bearing: f64,
    measured: f64,
    gamma: f64,
    exact_passive: bool,
) -> FilterOutcome {
    let p_short = belief.expectation(&ShortSource::new(table, bearing, measured), exact_passive);
    let decision = if p_short > gamma { Decision::Reject } else { Decision::Accept };
    FilterOutcome { decision, score: p_short, diagnostic: None }
}

/// Runs the configured filter on one reading.
pub fn evaluate(
    config: &FilterConfig,
    belief: &BeliefGrid,
    table: &SensorTable,
    bearing: f64,
    measured: f64,
) -> FilterOutcome {
    match config.kind {
        FilterKind::None => FilterOutcome::accept(0.0),
        FilterKind::Entropy => {
            let lik = table.beam_likelihood(bearing, measured);
            entropy_filter_accept(belief, &lik, table.average_likelihood(measured))
        }
        FilterKind::Distance => distance_filter_accept(belief, table, bearing, measured, config.gamma, config.exact_passive),
    }
}

/// One logged filter decision.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDecision {
    pub t: f64,
    pub bearing: f64,
    pub measured: f64,
    pub accepted: bool,
    pub score: f64,
}

pub fn write_decisions_csv<W: Write>(decisions: &[BeamDecision], mut w: W) -> io::Result<()> {
    writeln!(w, "t,bearing,measured,decision,score")?;
    for d in decisions {
        let tag = if d.accepted { "accept" } else { "reject" };
        writeln!(w, "{},{},{},{},{}", d.t, d.bearing, d.measured, tag, d.score)?;
    }
    Ok(())
}
