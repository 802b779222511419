//! Group fairness auditing: per-group statistics, loss metrics, closed-form
//! fairness bounds, a small learner and Monte Carlo checks of the bounds.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod groupstats;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod verify;

pub use dataset::{GroupedDataset, Record};
pub use error::{Error, Result};
