//! Doubly robust score tests of the conditional-independence null
//! `Y ⟂ A | L` in high-dimensional generalized linear models.

pub mod comparators;
pub mod error;
pub mod glm;
pub mod model;
pub mod nuisance;
pub mod score;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{expit, predict_mean, validate_dataset, Dataset, Link, WorkingModel};
pub use nuisance::{KnownPropensity, NuisanceFit, NuisanceMethod, Propensity};
pub use score::{run_test, run_tests, Method, TestOptions, TestResult};
