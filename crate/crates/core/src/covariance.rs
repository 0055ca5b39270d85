//! Recursive, activity-gated covariance tracking per frequency bin.

use std::sync::atomic::{AtomicU64, Ordering};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activity::ActivityLabel;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

/// Initial diagonal of both covariance matrices.
pub const INIT_EPSILON: f64 = 1e-6;

/// Exponential smoothing factors for the noisy and noise covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub alpha_y: f64,
    pub alpha_n: f64,
    /// Update the noise matrix from the previous *noisy* matrix, i.e.
    /// `Φn ← α_n·Φy + (1 − α_n)·y·yᴴ`. Only useful for comparisons.
    #[serde(default)]
    pub faithful_eq26: bool,
}

impl SmoothingConfig {
    pub fn new(alpha_y: f64, alpha_n: f64) -> Result<Self> {
        let cfg = Self {
            alpha_y,
            alpha_n,
            faithful_eq26: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Smoothing factors from time constants: `α = exp(−hop / (f_s·τ))`.
    pub fn from_time_constants(tau_y_s: f64, tau_n_s: f64, hop: usize, sample_rate: u32) -> Result<Self> {
        if !(tau_y_s > 0.0 && tau_n_s > 0.0) {
            return Err(Error::config("time constants must be positive"));
        }
        Self::new(
            alpha_from_tau(tau_y_s, hop, sample_rate),
            alpha_from_tau(tau_n_s, hop, sample_rate),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_y", self.alpha_y), ("alpha_n", self.alpha_n)] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::config(format!("{name} = {a} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

pub fn alpha_from_tau(tau_s: f64, hop: usize, sample_rate: u32) -> f64 {
    (-(hop as f64) / (sample_rate as f64 * tau_s)).exp()
}

/// Number of frames after which the recursions are considered settled:
/// `ceil(2·τ_max·f_s / hop)`.
pub fn warmup_frames(tau_max_s: f64, hop: usize, sample_rate: u32) -> usize {
    (2.0 * tau_max_s * sample_rate as f64 / hop as f64).ceil() as usize
}

/// Noisy and noise covariance estimates for one frequency bin.
#[derive(Debug)]
pub struct CovarianceState {
    phi_y: CMatrix,
    phi_n: CMatrix,
    config: SmoothingConfig,
    pub frames_seen_y: u64,
    pub frames_seen_n: u64,
    noise_reads: AtomicU64,
}

impl CovarianceState {
    pub fn new(dim: usize, config: SmoothingConfig) -> Self {
        Self {
            phi_y: CMatrix::scaled_identity(dim, INIT_EPSILON),
            phi_n: CMatrix::scaled_identity(dim, INIT_EPSILON),
            config,
            frames_seen_y: 0,
            frames_seen_n: 0,
            noise_reads: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.phi_y.dim()
    }

    pub fn config(&self) -> &SmoothingConfig {
        &self.config
    }

    pub fn phi_y(&self) -> &CMatrix {
        &self.phi_y
    }

    /// Noise covariance. Every call is counted, see [`Self::noise_reads`].
    pub fn phi_n(&self) -> &CMatrix {
        self.noise_reads.fetch_add(1, Ordering::Relaxed);
        &self.phi_n
    }

    /// How many times the noise covariance has been read.
    pub fn noise_reads(&self) -> u64 {
        self.noise_reads.load(Ordering::Relaxed)
    }

    /// Folds one observation into the matrix selected by `label`. On
    /// non-finite input the state is left untouched and an error returned.
    pub fn update(&mut self, y: &[C64], label: ActivityLabel) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::config(format!(
                "observation of length {} for a {}-channel state",
                y.len(),
                self.dim()
            )));
        }
        if y.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::numerical("non-finite observation"));
        }
        match label {
            ActivityLabel::SpeechPlusNoise => {
                let a = self.config.alpha_y;
                self.phi_y.blend_outer(a, 1.0 - a, y);
                self.phi_y.symmetrize();
                self.frames_seen_y += 1;
            }
            ActivityLabel::NoiseOnly => {
                let a = self.config.alpha_n;
                if self.config.faithful_eq26 {
                    let mut next = self.phi_y.clone();
                    next.blend_outer(a, 1.0 - a, y);
                    self.phi_n = next;
                } else {
                    self.phi_n.blend_outer(a, 1.0 - a, y);
                }
                self.phi_n.symmetrize();
                self.frames_seen_n += 1;
            }
        }
        Ok(())
    }
}

impl Clone for CovarianceState {
    fn clone(&self) -> Self {
        Self {
            phi_y: self.phi_y.clone(),
            phi_n: self.phi_n.clone(),
            config: self.config,
            frames_seen_y: self.frames_seen_y,
            frames_seen_n: self.frames_seen_n,
            noise_reads: AtomicU64::new(self.noise_reads()),
        }
    }
}

/// Leading `M × M` block of an `(M+1) × (M+1)` matrix (the head-mounted
/// channels), i.e. `E·Φ·Eᵀ` with `E = [I, 0]`.
pub fn head_submatrix(phi: &CMatrix) -> Result<CMatrix> {
    if phi.dim() < 2 {
        return Err(Error::config("head submatrix needs at least a 2×2 matrix"));
    }
    Ok(phi.principal_submatrix(phi.dim() - 1))
}

#[derive(Serialize)]
struct BinDump {
    bin: usize,
    frames_seen_y: u64,
    frames_seen_n: u64,
    phi_y: Vec<Vec<[f64; 2]>>,
    phi_n: Vec<Vec<[f64; 2]>>,
}

fn as_pairs(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.dim())
        .map(|r| (0..m.dim()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

/// Writes per-bin matrices as JSON arrays of `[re, im]` pairs. Diagnostic
/// only; the layout is not a stable interface.
pub fn dump_states(states: &[CovarianceState], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dump: Vec<BinDump> = states
        .iter()
        .enumerate()
        .map(|(bin, s)| BinDump {
            bin,
            frames_seen_y: s.frames_seen_y,
            frames_seen_n: s.frames_seen_n,
            phi_y: as_pairs(&s.phi_y),
            phi_n: as_pairs(&s.phi_n),
        })
        .collect();
    let text = serde_json::to_string(&dump)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
