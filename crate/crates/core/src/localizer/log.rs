use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::motion_model::OdometryReading;

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    Odometry(OdometryReading),
    /// `(bearing, measured range)` pairs.
    Scan(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorLogEvent {
    pub t: f64,
    pub payload: EventPayload,
}

impl SensorLogEvent {
    pub fn odometry(t: f64, delta_trans: f64, delta_rot: f64) -> Self {
        SensorLogEvent { t, payload: EventPayload::Odometry(OdometryReading::new(delta_trans, delta_rot)) }
    }

    pub fn scan(t: f64, beams: Vec<(f64, f64)>) -> Self {
        SensorLogEvent { t, payload: EventPayload::Scan(beams) }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {t} precedes previous timestamp {previous}")]
    TimestampRegression { line: usize, t: f64, previous: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a sensor log. Blank lines and lines starting with `#` are skipped.
pub fn read_log<R: BufRead>(source: R) -> Result<Vec<SensorLogEvent>, LogError> {
    let mut events = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let event = parse_line(trimmed).map_err(|message| LogError::Parse { line: line_no, message })?;
        if event.t < previous {
            return Err(LogError::TimestampRegression { line: line_no, t: event.t, previous });
        }
        previous = event.t;
        events.push(event);
    }
    Ok(events)
}

fn parse_line(line: &str) -> Result<SensorLogEvent, String> {
    let mut fields = line.split_whitespace();
    let tag = fields.next().ok_or("empty line")?;
    let mut number = |what: &str| -> Result<f64, String> {
        let raw = fields.next().ok_or(format!("missing {what}"))?;
        let v: f64 = raw.parse().map_err(|_| format!("bad {what} '{raw}'"))?;
        if !v.is_finite() {
            return Err(format!("non-finite {what}"));
        }
        Ok(v)
    };
    let event = match tag {
        "ODOM" => {
            let t = number("timestamp")?;
            let dtrans = number("translation")?;
            let drot = number("rotation")?;
            SensorLogEvent::odometry(t, dtrans, drot)
        }
        "SCAN" => {
            let t = number("timestamp")?;
            let k = number("beam count")?;
            if k < 0.0 || k.fract() != 0.0 {
                return Err(format!("bad beam count {k}"));
            }
            let mut beams = Vec::with_capacity(k as usize);
            for _ in 0..k as usize {
                let b = number("bearing")?;
                let r = number("range")?;
                if r < 0.0 {
                    return Err(format!("negative range {r}"));
                }
                beams.push((b, r));
            }
            SensorLogEvent::scan(t, beams)
        }
        other => return Err(format!("unknown event tag '{other}'")),
    };
    if fields.next().is_some() {
        return Err("trailing fields".into());
    }
    Ok(event)
}

pub fn write_log<W: Write>(events: &[SensorLogEvent], mut w: W) -> io::Result<()> {
    for e in events {
        match &e.payload {
            EventPayload::Odometry(o) => writeln!(w, "ODOM {} {} {}", e.t, o.delta_trans, o.delta_rot)?,
            EventPayload::Scan(beams) => {
                write!(w, "SCAN {} {}", e.t, beams.len())?;
                for (b, r) in beams {
                    write!(w, " {b} {r}")?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}
