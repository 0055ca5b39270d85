//! Direction-of-arrival estimation for binaural hearing aids assisted by an
//! external microphone.
//!
//! The processing chain is
//! [`stft::analyze`] → [`activity`] labels → [`covariance::CovarianceState`]
//! → [`rtf::Estimator`] → [`doa::cost_row`] / [`doa::argmin_direction`],
//! driven end to end by [`eval::run`]. [`scene::synthesize`] produces
//! test scenes with known ground truth.

pub mod activity;
pub mod covariance;
pub mod doa;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod rtf;
pub mod scene;
pub mod stft;

pub use error::{Error, Result};
