pub mod backtest;
pub mod calibration;
pub mod cv;
pub mod error;
pub mod estimators;
pub mod rmt;
pub mod rng;
pub mod simulation;
pub mod spectral;

pub use error::{Error, ErrorCategory, Result};
pub use spectral::{eigh, reconstruct, CovarianceMatrix, SymmetricSpectrum};
