//! Adaptive online optimizers (SGD, Adagrad, RMSprop, Adam, AMSGrad, AdamNc)
//! with convergence diagnostics, adversarial and stochastic test
//! sequences, regret accounting and regret-bound evaluation.

pub mod analysis;
pub mod erm;
pub mod error;
pub mod numcore;
pub mod optim;
pub mod runner;
pub mod scenarios;
pub mod verify;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use numcore::{BoxSet, RealVec};
pub use optim::{OptimizerKind, Schedule};
