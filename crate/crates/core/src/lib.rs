//! Localized reduced basis methods for parametric parabolic diffusion
//! problems with certified bounds on the full approximation error.

pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod forms;
pub mod greedy;
pub mod grid;
pub mod linalg;
pub mod reduction;
pub mod space;
pub mod truth;

pub use error::{Error, Result};
