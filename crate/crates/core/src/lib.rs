//! Adam-family optimizers with difference-of-gradient friction
//! (diffGrad, DGrad, Cos#1, Cos#2), a small MLP trainer to exercise them,
//! and sum-rule ensemble evaluation.

pub mod augment;
pub mod bench;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use optim::{OptimConfig, OptimState, Optimizer, StepStats, Variant};
pub use schedule::ScheduleConfig;
pub use tensor::Tensor;
