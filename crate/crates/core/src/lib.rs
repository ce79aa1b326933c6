//! Federated-learning laboratory: federated model averaging (FMA),
//! iterative moving averaging (IMA) with mild client exploration, an
//! empirical bias/variance/covariance loss decomposition and 1D/2D
//! loss-landscape scans, all on small dense networks and synthetic data.

pub mod data;
pub mod decomposition;
pub mod error;
pub mod federation;
pub mod landscape;
pub mod nn;
pub mod rng;
pub mod smoothing;

pub use error::{Error, Result};
