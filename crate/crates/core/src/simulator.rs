//! Synthetic log generation: scripted paths, noisy odometry, range scans
//! against the map plus a crowd of moving discs, and kidnap events.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localizer::{EventPayload, SensorLogEvent};
use crate::motion_model::MotionNoise;
use crate::world_map::{ray_cast, wrap_to_pi, OccupancyGrid, Pose};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("start pose ({x}, {y}) is not in free space")]
    StartNotFree { x: f64, y: f64 },
    #[error("path command {index} ({command:?}) leaves free space")]
    PathBlocked { index: usize, command: PathCommand },
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum PathCommand {
    /// Drive straight by a signed distance (m).
    Forward { distance: f64 },
    /// Turn in place by a signed angle (rad).
    Turn { angle: f64 },
    /// Turn towards a point and drive to it, re-planned from the true pose
    /// every tick.
    Goto { x: f64, y: f64 },
}

/// Generative parameters of the simulated range sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorTruth {
    pub sigma: f64,
    pub c_r: f64,
    pub c_d: f64,
    pub max_range: f64,
    /// Range bins used for unknown-obstacle reflections.
    pub n: usize,
}

impl Default for SensorTruth {
    fn default() -> Self {
        SensorTruth { sigma: 0.05, c_r: 0.005, c_d: 0.95, max_range: 5.0, n: 64 }
    }
}

impl SensorTruth {
    pub fn exact(max_range: f64) -> Self {
        SensorTruth { sigma: 0.0, c_r: 0.0, c_d: 1.0, max_range, n: 64 }
    }
}

/// People walking near the robot, modelled as discs that move in the world
/// frame. Discs are added or removed each scan to steer the running fraction
/// of blocked beams towards the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdConfig {
    /// Long-run fraction of beams to corrupt.
    pub target_fraction: f64,
    pub radius: f64,
    /// New people appear at this distance band from the robot (m).
    pub min_range: f64,
    pub max_range: f64,
    /// Walking speed (m/s).
    pub walk_speed: f64,
    pub max_discs: usize,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        CrowdConfig { target_fraction: 0.5, radius: 0.25, min_range: 0.5, max_range: 3.0, walk_speed: 0.3, max_discs: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KidnapConfig {
    pub rate_per_meter: f64,
    /// Heading change drawn uniformly from this range (rad).
    pub rot_min: f64,
    pub rot_max: f64,
    /// Each position coordinate shifts uniformly within `±shift` (m).
    pub shift: f64,
}

impl Default for KidnapConfig {
    fn default() -> Self {
        KidnapConfig { rate_per_meter: 0.005, rot_min: PI / 2.0, rot_max: 1.5 * PI, shift: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// `[x, y, theta]`.
    pub start: [f64; 3],
    pub path: Vec<PathCommand>,
    /// True odometry noise.
    pub noise: MotionNoise,
    /// Evenly spaced beams over the full circle, unless `bearings` is set.
    pub beam_count: usize,
    pub bearings: Option<Vec<f64>>,
    pub sensor: SensorTruth,
    pub crowd: Option<CrowdConfig>,
    pub kidnap: Option<KidnapConfig>,
    pub seed: u64,
    pub speed: f64,
    pub turn_rate: f64,
    pub scan_period: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            start: [0.0, 0.0, 0.0],
            path: Vec::new(),
            noise: MotionNoise::default(),
            beam_count: 24,
            bearings: None,
            sensor: SensorTruth::default(),
            crowd: None,
            kidnap: None,
            seed: 0,
            speed: 0.5,
            turn_rate: 1.0,
            scan_period: 0.25,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("simulation config serializes")
    }

    pub fn beam_bearings(&self) -> Vec<f64> {
        match &self.bearings {
            Some(b) => b.clone(),
            None => (0..self.beam_count).map(|i| i as f64 * TAU / self.beam_count as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.speed > 0.0 && self.turn_rate > 0.0 && self.scan_period > 0.0) {
            return bad("speed, turn_rate and scan_period must be positive");
        }
        let s = &self.sensor;
        if !(s.sigma >= 0.0 && (0.0..=1.0).contains(&s.c_r) && (0.0..=1.0).contains(&s.c_d) && s.max_range > 0.0 && s.n >= 2) {
            return bad("sensor parameters out of range");
        }
        if let Some(c) = &self.crowd {
            if !((0.0..=1.0).contains(&c.target_fraction) && c.walk_speed >= 0.0 && c.radius > 0.0 && c.min_range > c.radius && c.max_range >= c.min_range) {
                return bad("crowd parameters out of range");
            }
        }
        if let Some(k) = &self.kidnap {
            if !(k.rate_per_meter >= 0.0 && k.rot_max >= k.rot_min && k.shift >= 0.0) {
                return bad("kidnap parameters out of range");
            }
        }
        self.noise.validate().map_err(|e| SimError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub pose: Pose,
    pub kidnap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamRecord {
    pub t: f64,
    pub index: usize,
    pub bearing: f64,
    pub measured: f64,
    /// Map ray-cast distance at the true pose.
    pub expected: f64,
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// One sample per scan.
    pub poses: Vec<TruthSample>,
    pub beams: Vec<BeamRecord>,
    pub kidnap_times: Vec<f64>,
}

impl GroundTruth {
    pub fn corrupted_fraction(&self) -> f64 {
        if self.beams.is_empty() {
            return 0.0;
        }
        self.beams.iter().filter(|b| b.corrupted).count() as f64 / self.beams.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    x: f64,
    y: f64,
    heading: f64,
}

struct Sim<'a> {
    map: &'a OccupancyGrid,
    cfg: &'a SimConfig,
    bearings: Vec<f64>,
    rng: ChaCha8Rng,
    pose: Pose,
    t: f64,
    discs: Vec<Disc>,
    corrupted: usize,
    beams: usize,
    events: Vec<SensorLogEvent>,
    truth: GroundTruth,
}

/// Runs the scripted path and returns the sensor log and ground truth.
pub fn simulate(map: &OccupancyGrid, cfg: &SimConfig) -> Result<(Vec<SensorLogEvent>, GroundTruth), SimError> {
    cfg.validate()?;
    let start = Pose::new(cfg.start[0], cfg.start[1], cfg.start[2]);
    if !map.is_free_at(start.x, start.y) {
        return Err(SimError::StartNotFree { x: start.x, y: start.y });
    }
    let mut sim = Sim {
        map,
        cfg,
        bearings: cfg.beam_bearings(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        pose: start,
        t: 0.0,
        discs: Vec::new(),
        corrupted: 0,
        beams: 0,
        events: Vec::new(),
        truth: GroundTruth::default(),
    };
    sim.scan(false);
    for (index, command) in cfg.path.iter().enumerate() {
        sim.run_command(index, command)?;
    }
    Ok((sim.events, sim.truth))
}

impl Sim<'_> {
    fn run_command(&mut self, index: usize, command: &PathCommand) -> Result<(), SimError> {
        let blocked = || SimError::PathBlocked { index, command: *command };
        let dt = self.cfg.scan_period;
        match *command {
            PathCommand::Forward { distance } => {
                let step = self.cfg.speed * dt;
                let mut remaining = distance;
                while remaining.abs() > 1e-12 {
                    let d = remaining.signum() * remaining.abs().min(step);
                    self.tick(0.0, d, None).map_err(|_| blocked())?;
                    remaining -= d;
                }
            }
            PathCommand::Turn { angle } => {
                let step = self.cfg.turn_rate * dt;
                let mut remaining = angle;
                while remaining.abs() > 1e-12 {
                    let a = remaining.signum() * remaining.abs().min(step);
                    self.tick(a, 0.0, None).map_err(|_| blocked())?;
                    remaining -= a;
                }
            }
            PathCommand::Goto { x, y } => {
                let max_rot = self.cfg.turn_rate * dt;
                let max_trans = self.cfg.speed * dt;
                for _ in 0..10_000_000 {
                    let (dx, dy) = (x - self.pose.x, y - self.pose.y);
                    let dist = dx.hypot(dy);
                    if dist < 1e-9 {
                        return Ok(());
                    }
                    let err = wrap_to_pi(dy.atan2(dx) - self.pose.theta);
                    let rot = err.clamp(-max_rot, max_rot);
                    let trans = if (err - rot).abs() < 1e-12 { dist.min(max_trans) } else { 0.0 };
                    self.tick(rot, trans, Some((x, y))).map_err(|_| blocked())?;
                }
                return Err(blocked());
            }
        }
        Ok(())
    }

    fn gaussian(&mut self, sigma: f64, cutoff: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= cutoff {
                return z * sigma;
            }
        }
    }

    fn segment_free(&self, from: &Pose, trans: f64) -> bool {
        if trans == 0.0 {
            return true;
        }
        let bearing = if trans < 0.0 { PI } else { 0.0 };
        matches!(ray_cast(self.map, from, bearing, trans.abs()), Ok(d) if d >= trans.abs())
    }

    fn tick(&mut self, rot: f64, trans: f64, goal: Option<(f64, f64)>) -> Result<(), ()> {
        let turned = Pose::new(self.pose.x, self.pose.y, self.pose.theta + rot);
        if !self.segment_free(&turned, trans) {
            return Err(());
        }
        let (s, c) = turned.theta.sin_cos();
        let next = Pose::new(turned.x + trans * c, turned.y + trans * s, turned.theta);
        if !self.map.is_free_at(next.x, next.y) {
            return Err(());
        }
        self.pose = next;
        let noise = self.cfg.noise;
        let sigma_t = (noise.trans_variance_per_meter * trans.abs()).sqrt();
        let sigma_r = (noise.rot_variance_per_meter * trans.abs() + noise.rot_variance_per_radian * rot.abs()).sqrt();
        let e_t = self.gaussian(sigma_t, noise.cutoff);
        let e_r = self.gaussian(sigma_r, noise.cutoff);
        self.t += self.cfg.scan_period;
        self.events.push(SensorLogEvent::odometry(self.t, trans + e_t, rot + e_r));
        let kidnapped = self.maybe_kidnap(trans.abs(), goal);
        self.scan(kidnapped);
        Ok(())
    }

    fn maybe_kidnap(&mut self, travelled: f64, goal: Option<(f64, f64)>) -> bool {
        let Some(k) = self.cfg.kidnap else { return false };
        let u: f64 = self.rng.random();
        if u >= k.rate_per_meter * travelled {
            return false;
        }
        for _ in 0..100 {
            let dtheta = self.rng.random_range(k.rot_min..=k.rot_max);
            let dx = self.rng.random_range(-k.shift..=k.shift);
            let dy = self.rng.random_range(-k.shift..=k.shift);
            let target = Pose::new(self.pose.x + dx, self.pose.y + dy, self.pose.theta + dtheta);
            if !self.map.is_free_at(target.x, target.y) {
                continue;
            }
            if let Some((gx, gy)) = goal {
                let (ex, ey) = (gx - target.x, gy - target.y);
                let toward = Pose::new(target.x, target.y, ey.atan2(ex));
                if !self.segment_free(&toward, ex.hypot(ey)) {
                    continue;
                }
            }
            self.pose = target;
            self.truth.kidnap_times.push(self.t);
            return true;
        }
        false
    }

    fn update_crowd(&mut self) {
        let Some(crowd) = self.cfg.crowd else { return };
        let step = crowd.walk_speed * self.cfg.scan_period;
        let (rx, ry) = (self.pose.x, self.pose.y);
        for i in 0..self.discs.len() {
            let turn = self.gaussian(0.3, 3.0);
            let d = self.discs[i];
            let heading = d.heading + turn;
            let (nx, ny) = (d.x + step * heading.cos(), d.y + step * heading.sin());
            let clear = (nx - rx).hypot(ny - ry) >= crowd.radius + 0.2;
            self.discs[i] = if clear && self.map.is_free_at(nx, ny) {
                Disc { x: nx, y: ny, heading }
            } else {
                Disc { heading: self.rng.random_range(0.0..TAU), ..d }
            };
        }
        self.discs.retain(|d| (d.x - rx).hypot(d.y - ry) <= crowd.max_range + 1.0);
        let so_far = if self.beams == 0 { 0.0 } else { self.corrupted as f64 / self.beams as f64 };
        if so_far < crowd.target_fraction {
            if self.discs.len() < crowd.max_discs {
                for _ in 0..20 {
                    let range = self.rng.random_range(crowd.min_range..=crowd.max_range);
                    let angle = self.rng.random_range(0.0..TAU);
                    let (x, y) = (rx + range * angle.cos(), ry + range * angle.sin());
                    if self.map.is_free_at(x, y) {
                        let heading = self.rng.random_range(0.0..TAU);
                        self.discs.push(Disc { x, y, heading });
                        break;
                    }
                }
            }
        } else if so_far > crowd.target_fraction && !self.discs.is_empty() {
            let i = self.rng.random_range(0..self.discs.len());
            self.discs.swap_remove(i);
        }
    }

    /// Distance along a robot-relative bearing to the nearest crowd disc.
    fn crowd_hit(&self, bearing: f64) -> f64 {
        let Some(crowd) = self.cfg.crowd else { return f64::INFINITY };
        let (s, c) = (self.pose.theta + bearing).sin_cos();
        let r2 = crowd.radius * crowd.radius;
        let mut best = f64::INFINITY;
        for d in &self.discs {
            let (cx, cy) = (d.x - self.pose.x, d.y - self.pose.y);
            let along = cx * c + cy * s;
            let perp2 = (cx * cx + cy * cy) - along * along;
            if along > 0.0 && perp2 <= r2 {
                let hit = along - (r2 - perp2).sqrt();
                if hit >= 0.0 {
                    best = best.min(hit);
                }
            }
        }
        best
    }

    fn measure(&mut self, o_true: f64) -> f64 {
        let s = self.cfg.sensor;
        let mut reading = s.max_range;
        let u: f64 = self.rng.random();
        if u < s.c_d {
            let e = self.gaussian(s.sigma, f64::INFINITY);
            reading = (o_true + e).clamp(0.0, s.max_range);
        }
        if s.c_r > 0.0 {
            let u: f64 = self.rng.random();
            let bin = if s.c_r >= 1.0 { 0.0 } else { ((1.0 - u).ln() / (1.0 - s.c_r).ln()).floor() };
            let delta = s.max_range / s.n as f64;
            if bin < (s.n - 1) as f64 {
                let frac: f64 = self.rng.random();
                reading = reading.min((bin + frac) * delta);
            }
        }
        reading
    }

    fn scan(&mut self, kidnap: bool) {
        self.update_crowd();
        let mut beams = Vec::with_capacity(self.bearings.len());
        for index in 0..self.bearings.len() {
            let bearing = self.bearings[index];
            let expected = ray_cast(self.map, &self.pose, bearing, self.cfg.sensor.max_range)
                .expect("true pose stays on the map");
            let dynamic = self.crowd_hit(bearing);
            let corrupted = dynamic < expected;
            let mut measured = self.measure(expected.min(dynamic));
            if corrupted {
                measured = measured.min(expected);
            }
            self.beams += 1;
            self.corrupted += corrupted as usize;
            self.truth.beams.push(BeamRecord { t: self.t, index, bearing, measured, expected, corrupted });
            beams.push((bearing, measured));
        }
        self.events.push(SensorLogEvent::scan(self.t, beams));
        self.truth.poses.push(TruthSample { t: self.t, pose: self.pose, kidnap });
    }
}

/// Fraction of beams per time window whose reading is shorter than the map
/// distance at the true pose by more than `3 * sigma`.
pub fn estimate_corruption(
    events: &[SensorLogEvent],
    map: &OccupancyGrid,
    truth: &[TruthSample],
    sigma: f64,
    max_range: f64,
    window: f64,
) -> Vec<(f64, f64)> {
    let mut windows: Vec<(f64, usize, usize)> = Vec::new();
    let mut j = 0;
    for e in events {
        let EventPayload::Scan(beams) = &e.payload else { continue };
        while j + 1 < truth.len() && truth[j + 1].t <= e.t {
            j += 1;
        }
        let Some(sample) = truth.get(j).filter(|s| s.t <= e.t) else { continue };
        let w = (e.t / window).floor() * window;
        if windows.last().is_none_or(|l| l.0 != w) {
            windows.push((w, 0, 0));
        }
        let slot = windows.last_mut().expect("pushed above");
        for &(bearing, measured) in beams {
            let Ok(expected) = ray_cast(map, &sample.pose, bearing, max_range) else { continue };
            slot.2 += 1;
            if measured < expected - 3.0 * sigma {
                slot.1 += 1;
            }
        }
    }
    windows
        .into_iter()
        .map(|(w, bad, total)| (w, if total == 0 { 0.0 } else { bad as f64 / total as f64 }))
        .collect()
}

pub fn write_truth_csv<W: Write>(truth: &GroundTruth, mut w: W) -> io::Result<()> {
    writeln!(w, "t,x,y,theta,kidnap_flag")?;
    for s in &truth.poses {
        writeln!(w, "{},{},{},{},{}", s.t, s.pose.x, s.pose.y, s.pose.theta, s.kidnap as u8)?;
    }
    Ok(())
}

pub fn write_corruption_csv<W: Write>(truth: &GroundTruth, mut w: W) -> io::Result<()> {
    writeln!(w, "t,beam,bearing,measured,expected,corrupted")?;
    for b in &truth.beams {
        writeln!(w, "{},{},{},{},{},{}", b.t, b.index, b.bearing, b.measured, b.expected, b.corrupted as u8)?;
    }
    Ok(())
}
