//! Multiscale simulation and control of crowds guided by hidden leaders.
//!
//! * [`micro`]: agent-based follower/leader dynamics.
//! * [`meso`]: binary-interaction Monte Carlo for a follower density coupled
//!   to agent-based leaders.
//! * [`control`]: leader strategies, cost functionals, compass search, MPC.
//! * [`metrics`]: evacuation observables and replicate statistics.
//! * [`config`] and [`experiment`]: configuration files and run orchestration.

pub mod config;
pub mod control;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod kernels;
pub mod meso;
pub mod metrics;
pub mod micro;
pub mod output;
pub mod params;
pub mod rng;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};
pub use geometry::{Rect, Vector2};
pub use params::ModelParams;
pub use rng::RandomSource;
pub use scenario::Scenario;
