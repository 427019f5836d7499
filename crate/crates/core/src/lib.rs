//! Streaming flow policies.
//!
//! A policy is a history-conditioned velocity field `v_θ(a, t | h)` in action
//! space whose flow time coincides with execution time, so actions can be
//! executed while the ODE is still being integrated. Training regresses the
//! field onto analytically constructed stabilizing flows around each
//! demonstration.

pub mod baseline;
pub mod chunk;
pub mod cli;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod field;
pub mod flows;
pub mod model;
pub mod net;
pub mod ode;
pub mod parallel;
pub mod stream;
pub mod svg;
pub mod train;
pub mod trajectory;

pub use chunk::ChunkParams;
pub use dataset::{Dataset, Demonstration, ObservationHistory};
pub use error::{Error, Result};
pub use field::VelocityField;
pub use flows::{FlowConfig, LatentFlowConfig};
pub use model::{FlowSpec, VelocityModel};
pub use train::{train_policy, TrainConfig};
pub use trajectory::{Action, Trajectory};
