//! Collaborative linear and ridge regression over matrix-masked,
//! horizontally partitioned data, with a malicious-cloud check and an
//! adversary workbench.

pub mod attacks;
pub mod cli;
pub mod data;
pub mod error;
pub mod keygen;
pub mod matrix;
pub mod model;
pub mod protocol;
pub mod seed;

pub use data::Dataset;
pub use error::{Error, Result};
pub use keygen::{AgencyId, AgencyKeys, Mode};
pub use matrix::Mat;
