//! Pedestrian road-crossing model with sensory-motor constraints.
//!
//! A pedestrian agent with noisy vision, looming aversion, time pressure and a
//! pendulum walking model learns when and how fast to cross between two
//! approaching vehicles. The crate contains the full stack:
//!
//! - [`scenario`]: trial geometry, vehicle kinematics, training-scenario sampling
//! - [`perception`]: subtended-angle noise, Kalman tracking, looming
//! - [`locomotion`]: step-length law, pendulum effort, ballistic speed control
//! - [`env`]: the partially observable crossing environment (SM / S / M variants)
//! - [`ppo`]: a from-scratch PPO learner with checkpointing
//! - [`metrics`]: crossing classification, aggregation, effect sizes, phenomenon checks
//! - [`calibration`]: discrepancy, Gaussian-process surrogate and BOLFI-style fitting

pub mod calibration;
pub mod env;
pub mod error;
pub mod locomotion;
pub mod metrics;
pub mod perception;
pub mod ppo;
pub mod rng;
pub mod scenario;

pub use calibration::{ObservedMetrics, ParamPoint};
pub use env::{
    ActionSet, EnvConfig, NonPolicyParams, Observation, PedestrianEnv, RewardBreakdown,
    TerminalState, Variant,
};
pub use error::{Error, Result};
pub use metrics::{ConditionKey, CrossingClass, EpisodeRecord, MetricTable};
pub use ppo::{Checkpoint, TrainConfig};
pub use scenario::{RoadGeometry, ScenarioSpec};
