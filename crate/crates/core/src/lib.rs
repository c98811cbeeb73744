//! Statistical-CSI distributed precoding for cooperating LEO satellites.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod factorization;
pub mod geometry;
pub mod linalg;
pub mod ofdm;
pub mod rates;
pub mod rng;
pub mod scenario;
pub mod solvers;
pub mod te;

pub use error::{Error, Result};
