//! Weight-friction gradient descent for continual learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] and [`rng`]: dense `f64` matrices and the seeded generator.
//! * [`nn`]: ReLU multilayer perceptrons with exact backpropagation.
//! * [`optim`]: SGD, Adam and the weight-friction update rule.
//! * [`data`]: IDX loading, splits, permuted tasks, synthetic datasets.
//! * [`continual`]: task-sequence training, EWC, μ grid search, metrics.
//! * [`convergence`]: regret and descent checks on convex problems.
//! * [`config`], [`experiment`] and [`report`]: experiment files, runs and
//!   their outputs.

pub mod error;
pub mod linalg;
pub mod rng;
pub mod nn;
pub mod optim;
pub mod data;
pub mod clock;
pub mod continual;
pub mod convergence;
pub mod config;

pub use error::{Error, ErrorCategory, Result};
pub mod experiment;
pub mod report;
