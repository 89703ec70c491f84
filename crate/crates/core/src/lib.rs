//! Desk-scale transition matching.
//!
//! Train difference transition matching (D-TM) and flow matching (FM) models
//! on low-dimensional synthetic targets, sample them with deterministic and
//! re-noising samplers, and check every step against closed-form Gaussian
//! mixture oracles.

pub mod checks;
pub mod error;
pub mod evaluation;
pub mod nets;
pub mod oracle;
pub mod process;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod state;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use nets::{Model, ModelConfig, ModelKind, NetParams};
pub use process::Parameterization;
pub use rng::{RandomStream, Seed};
pub use samplers::{SamplerMode, SamplerSpec};
pub use schedules::TimeWeighting;
pub use state::StatePoint;
pub use training::TrainConfig;

