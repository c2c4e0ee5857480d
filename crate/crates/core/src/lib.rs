//! Preference-based Bayesian optimization with a three-outcome comparison
//! model and an indifference threshold.

pub mod acquisition;
pub mod benchmarks;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod normal;
pub mod preference;
pub mod rng;
pub mod space;
pub mod surrogate;

pub use error::{CpboError, Result};
pub use preference::{PreferenceDataset, PreferenceLabel};
pub use space::{Axis, Bounds, Config};
