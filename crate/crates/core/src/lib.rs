//! Grid-based Markov localization for a mobile robot in a mapped 2-D world.
//!
//! The crate covers the occupancy-grid world model, a discretized beam
//! sensor model with precomputed lookup tables, an odometry motion model,
//! a selectively updated position belief, measurement filters for crowded
//! environments, the localization event loop, a log simulator and the
//! evaluation metrics.

pub mod belief;
pub mod evaluation;
pub mod filters;
pub mod localizer;
pub mod motion_model;
pub mod sensor_model;
pub mod simulator;
pub mod world_map;

pub use belief::{BeliefGrid, Boundary, LikelihoodSource, StateGrid};
pub use motion_model::{MotionNoise, OdometryReading, RelativeMotion};
pub use sensor_model::{BeamModelParams, SensorTable};
pub use world_map::{load_map, Beam, Occupancy, OccupancyGrid, Pose};
