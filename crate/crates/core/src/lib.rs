//! Cooperative multi-agent Q-learning with value decomposition.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense layers, GRU, Adam, finite-difference checks, checkpoints
//! * [`envs`]: the environment contract and three cooperative environments
//! * [`agent`]: the shared recurrent action network, ε-greedy selection and the
//!   prediction-error intrinsic reward network
//! * [`mixer`]: the state-conditioned double monotonic mixer and training losses
//! * [`replay`]: episode replay over a sum tree with priority, importance factor
//!   and visit counting
//! * [`runtime`]: actor / worker / learner loops and the throughput bench
//! * [`trainer`]: schedules, evaluation and the full training run
//! * [`config`]: the run configuration and its validation

pub mod error;
pub mod agent;
pub mod config;
pub mod envs;
pub mod mixer;
pub mod replay;
pub mod runtime;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
