use serde::{Deserialize, Serialize};

use crate::belief::{Boundary, DEFAULT_EPSILON_FRACTION};
use crate::filters::FilterConfig;
use crate::motion_model::MotionNoise;
use crate::sensor_model::{BeamModelParams, SensorModelError};

/// Engine configuration, read from a TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    /// Spatial resolution of the belief grid (m).
    pub cell_size: f64,
    /// Orientation layers of the belief grid.
    pub theta_bins: usize,
    /// Sensor table orientation bins per belief layer.
    pub table_theta_factor: usize,
    /// `ε` as a fraction of the uniform prior state probability; 0 disables
    /// selective updates.
    pub epsilon_fraction: f64,
    pub boundary: Boundary,
    /// Use every `beam_stride`-th beam of a scan.
    pub beam_stride: usize,
    /// Reset to the uniform prior when an update underflows.
    pub reset_on_lost: bool,
    /// Upper bound on sensor table entries.
    pub max_table_entries: usize,
    pub sensor: SensorConfig,
    pub motion: MotionNoise,
    pub filter: FilterConfig,
    pub prior: PriorConfig,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            cell_size: 0.15,
            theta_bins: 90,
            table_theta_factor: 1,
            epsilon_fraction: DEFAULT_EPSILON_FRACTION,
            boundary: Boundary::Clip,
            beam_stride: 1,
            reset_on_lost: false,
            max_table_entries: 1 << 30,
            sensor: SensorConfig::default(),
            motion: MotionNoise::default(),
            filter: FilterConfig::default(),
            prior: PriorConfig::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub n: usize,
    pub max_range: f64,
    /// Defaults to two range bins.
    pub sigma: Option<f64>,
    pub c_r: f64,
    pub c_d: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { n: 64, max_range: 5.0, sigma: None, c_r: 0.01, c_d: 0.9 }
    }
}

impl SensorConfig {
    pub fn params(&self) -> Result<BeamModelParams, SensorModelError> {
        let defaults = BeamModelParams::with_defaults(self.n, self.max_range)?;
        BeamModelParams::new(self.sigma.unwrap_or(defaults.sigma), self.c_r, self.c_d, self.n, self.max_range)
    }

    pub fn from_params(p: &BeamModelParams) -> Self {
        SensorConfig { n: p.n, max_range: p.max_range, sigma: Some(p.sigma), c_r: p.c_r, c_d: p.c_d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorConfig {
    Uniform,
    Gaussian { x: f64, y: f64, theta: f64, sigma_xy: f64, sigma_theta: f64 },
}

impl LocalizerConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: LocalizerConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if self.theta_bins == 0 || self.table_theta_factor == 0 || self.beam_stride == 0 {
            return Err("theta_bins, table_theta_factor and beam_stride must be positive".into());
        }
        if !(self.epsilon_fraction >= 0.0 && self.epsilon_fraction < 1.0) {
            return Err(format!("epsilon_fraction must lie in [0, 1), got {}", self.epsilon_fraction));
        }
        self.sensor.params().map_err(|e| e.to_string())?;
        self.motion.validate().map_err(|e| e.to_string())?;
        self.filter.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterKind;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(LocalizerConfig::from_toml("").unwrap(), LocalizerConfig::default());
    }

    #[test]
    fn round_trip_and_overrides() {
        let text = r#"
            cell_size = 0.3
            theta_bins = 36
            [filter]
            kind = "distance"
            [prior]
            kind = "gaussian"
            x = 1.0
            y = 2.0
            theta = 0.5
            sigma_xy = 0.2
            sigma_theta = 0.1
        "#;
        let c = LocalizerConfig::from_toml(text).unwrap();
        assert_eq!(c.theta_bins, 36);
        assert_eq!(c.filter.kind, FilterKind::Distance);
        assert!(matches!(c.prior, PriorConfig::Gaussian { .. }));
        assert_eq!(LocalizerConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(LocalizerConfig::from_toml("cell_size = -1.0").is_err());
        assert!(LocalizerConfig::from_toml("bogus = 1").is_err());
        assert!(LocalizerConfig::from_toml("[filter]\ngamma = 1.5").is_err());
    }
}
