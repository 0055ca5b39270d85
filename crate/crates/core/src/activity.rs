//! Speech-plus-noise / noise-only labelling of time-frequency bins.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::stft::TfGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivityLabel {
    SpeechPlusNoise,
    NoiseOnly,
}

impl ActivityLabel {
    pub fn is_speech(self) -> bool {
        self == ActivityLabel::SpeechPlusNoise
    }
}

/// Parameters of the fixed-prior speech presence probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SppConfig {
    pub prior_speech_prob: f64,
    pub fixed_apriori_snr_db: f64,
    pub threshold: f64,
    pub noise_psd_floor: f64,
    /// Frames labelled noise-only at start-up, so the noise estimate the
    /// probability depends on has something to start from.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_frames: usize,
}

fn default_bootstrap() -> usize {
    32
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            prior_speech_prob: 0.5,
            fixed_apriori_snr_db: 15.0,
            threshold: 0.5,
            noise_psd_floor: 1e-12,
            bootstrap_frames: default_bootstrap(),
        }
    }
}

impl SppConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.threshold) {
            return Err(Error::config(format!("SPP threshold {} not in (0,1)", self.threshold)));
        }
        if !open_unit(self.prior_speech_prob) {
            return Err(Error::config(format!(
                "speech prior {} not in (0,1)",
                self.prior_speech_prob
            )));
        }
        if !(self.noise_psd_floor > 0.0) {
            return Err(Error::config("noise PSD floor must be positive"));
        }
        Ok(())
    }
}

/// Posterior speech presence probability under a Gaussian model with fixed
/// prior `q` and fixed a-priori SNR `ξ`:
///
/// `p = [1 + (1−q)/q · (1+ξ) · exp(−γ·ξ/(1+ξ))]⁻¹`, `γ = noisy_power / noise_psd`.
pub fn spp(noisy_power: f64, noise_psd: f64, cfg: &SppConfig) -> f64 {
    let noise = if noise_psd >= cfg.noise_psd_floor {
        noise_psd
    } else {
        log::trace!("noise PSD {noise_psd:e} clamped to {:e}", cfg.noise_psd_floor);
        cfg.noise_psd_floor
    };
    let xi = 10f64.powf(cfg.fixed_apriori_snr_db / 10.0);
    let q = cfg.prior_speech_prob;
    let gamma = noisy_power.max(0.0) / noise;
    let odds = (1.0 - q) / q * (1.0 + xi) * (-gamma * xi / (1.0 + xi)).exp();
    (1.0 / (1.0 + odds)).clamp(0.0, 1.0)
}

/// Speech-plus-noise iff the mean probability over the head channels
/// exceeds `threshold`.
pub fn classify_frame(probabilities: &[f64], threshold: f64) -> ActivityLabel {
    if probabilities.is_empty() {
        return ActivityLabel::NoiseOnly;
    }
    let mean = probabilities.iter().sum::<f64>() / probabilities.len() as f64;
    if mean > threshold {
        ActivityLabel::SpeechPlusNoise
    } else {
        ActivityLabel::NoiseOnly
    }
}

/// Labels one observation from its head channels and per-channel noise PSDs.
pub fn classify_observation(y_head: &[C64], noise_psd: &[f64], cfg: &SppConfig) -> ActivityLabel {
    let probs: Vec<f64> = y_head
        .iter()
        .zip(noise_psd)
        .map(|(y, n)| spp(y.norm_sqr(), *n, cfg))
        .collect();
    classify_frame(&probs, cfg.threshold)
}

/// Activity labels for a `K × L` time-frequency grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    bins: usize,
    frames: usize,
    speech: Vec<bool>,
}

pub const LABEL_MAGIC: &[u8; 8] = b"DOALBL01";

impl LabelGrid {
    pub fn new(bins: usize, frames: usize, fill: ActivityLabel) -> Self {
        Self {
            bins,
            frames,
            speech: vec![fill.is_speech(); bins * frames],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, k: usize, l: usize) -> ActivityLabel {
        if self.speech[k * self.frames + l] {
            ActivityLabel::SpeechPlusNoise
        } else {
            ActivityLabel::NoiseOnly
        }
    }

    pub fn set(&mut self, k: usize, l: usize, label: ActivityLabel) {
        self.speech[k * self.frames + l] = label.is_speech();
    }

    pub fn speech_fraction(&self) -> f64 {
        self.speech.iter().filter(|s| **s).count() as f64 / self.speech.len().max(1) as f64
    }

    /// Serializes as the `DOALBL01` bitmap: 8-byte magic, `K` and `L` as
    /// little-endian u32, then one bit per bin in row-major `[k × l]` order,
    /// least significant bit first, 1 meaning speech-plus-noise.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.speech.len().div_ceil(8));
        out.extend_from_slice(LABEL_MAGIC);
        out.extend_from_slice(&(self.bins as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        for chunk in self.speech.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, s)| acc | (u8::from(*s) << i));
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != LABEL_MAGIC {
            return Err(Error::format("label bitmap", "missing DOALBL01 header"));
        }
        let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let frames = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n = bins * frames;
        let payload = &bytes[16..];
        if payload.len() != n.div_ceil(8) {
            return Err(Error::format(
                "label bitmap",
                format!("expected {} payload bytes, found {}", n.div_ceil(8), payload.len()),
            ));
        }
        let speech = (0..n).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self {
            bins,
            frames,
            speech,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Oracle labels from separately available speech and noise spectra:
/// speech-plus-noise iff `|X₁|² > margin·|N₁|²` in the reference channel.
pub fn oracle_labels(clean: &TfGrid, noise: &TfGrid, snr_margin_db: f64) -> Result<LabelGrid> {
    if clean.data.shape() != noise.data.shape() {
        return Err(Error::config(format!(
            "clean grid {:?} and noise grid {:?} differ in shape",
            clean.data.shape(),
            noise.data.shape()
        )));
    }
    let margin = 10f64.powf(snr_margin_db / 10.0);
    let (bins, frames) = (clean.num_bins(), clean.num_frames());
    let mut labels = LabelGrid::new(bins, frames, ActivityLabel::NoiseOnly);
    for k in 0..bins {
        for l in 0..frames {
            let x = clean.data[[0, k, l]].norm_sqr();
            let n = noise.data[[0, k, l]].norm_sqr();
            if x > margin * n {
                labels.set(k, l, ActivityLabel::SpeechPlusNoise);
            }
        }
    }
    Ok(labels)
}
