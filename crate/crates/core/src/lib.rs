//! Stroboscopic drive/dissipate simulation of the quantum Rabi model with
//! engineered sideband-cooling dissipation.

pub mod analysis;
pub mod channels;
pub mod cli;
pub mod config;
pub mod error;
pub mod fit;
pub mod fockspace;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod probe;
pub mod protocol;

pub use error::{DptError, Result};
