//! Multichannel STFT analysis.
//!
//! Frames are left-aligned, the tail that does not fill a whole frame is
//! dropped, and only the one-sided spectrum (`fft_size/2 + 1` bins, DC
//! first) is kept.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Real-valued multichannel audio, `[channels × time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, m: usize) -> ArrayView1<'_, f64> {
        self.samples.row(m)
    }

    /// Keeps the first `m` channels.
    pub fn head_channels(&self, m: usize) -> AudioClip {
        AudioClip {
            samples: self.samples.slice(ndarray::s![..m, ..]).to_owned(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?,
            (hound::SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?,
            (fmt, bits) => {
                return Err(Error::format(
                    "wav",
                    format!("unsupported sample format {fmt:?} with {bits} bits"),
                ))
            }
        };
        if spec.sample_rate != DEFAULT_SAMPLE_RATE {
            log::warn!(
                "{}: sample rate {} Hz differs from the nominal {} Hz",
                path.display(),
                spec.sample_rate,
                DEFAULT_SAMPLE_RATE
            );
        }
        let frames = interleaved.len() / channels.max(1);
        let samples = Array2::from_shape_fn((channels, frames), |(c, t)| interleaved[t * channels + c]);
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 32-bit float PCM.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let spec = hound::WavSpec {
            channels: self.channels() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for t in 0..self.len() {
            for c in 0..self.channels() {
                writer
                    .write_sample(self.samples[[c, t]] as f32)
                    .map_err(wav_err)?;
            }
        }
        writer.finalize().map_err(wav_err)
    }
}

/// Framing parameters. The FFT size equals the frame length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 32 ms frames with 50 % overlap at 16 kHz.
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn fft_size(&self) -> usize {
        self.frame_len
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::config(format!(
                "frame length {} must be even and at least 2",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::config(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Time of the centre of frame `l` in seconds.
    pub fn frame_center_s(&self, l: usize, sample_rate: u32) -> f64 {
        (l * self.hop) as f64 / sample_rate as f64 + self.frame_len as f64 / (2.0 * sample_rate as f64)
    }
}

/// Square-root Hann (sine) window, `w[n] = sqrt(0.5 − 0.5·cos(2πn/N))`.
pub fn sqrt_hann(frame_len: usize) -> Result<Vec<f64>> {
    if frame_len < 2 || frame_len % 2 != 0 {
        return Err(Error::config(format!(
            "window length {frame_len} must be even and at least 2"
        )));
    }
    Ok((0..frame_len)
        .map(|n| {
            let v = 0.5 - 0.5 * (2.0 * PI * n as f64 / frame_len as f64).cos();
            v.max(0.0).sqrt()
        })
        .collect())
}

/// Complex short-time spectra, `[channels × bins × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    pub data: Array3<C64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl TfGrid {
    pub fn channels(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn num_bins(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn num_frames(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    /// The `channels`-vector at bin `k`, frame `l`.
    pub fn vector(&self, k: usize, l: usize) -> Vec<C64> {
        self.data.slice(ndarray::s![.., k, l]).to_vec()
    }
}

/// STFT of every channel of `clip`.
pub fn analyze(clip: &AudioClip, cfg: &StftConfig) -> Result<TfGrid> {
    cfg.validate()?;
    if clip.is_empty() || clip.len() < cfg.frame_len {
        return Err(Error::config(format!(
            "clip of {} samples is shorter than one frame ({})",
            clip.len(),
            cfg.frame_len
        )));
    }
    if clip.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("clip contains non-finite samples"));
    }
    let window = sqrt_hann(cfg.frame_len)?;
    let n_fft = cfg.fft_size();
    let bins = cfg.num_bins();
    let frames = cfg.num_frames(clip.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut data = Array3::<C64>::zeros((clip.channels(), bins, frames));
    let mut buf = vec![C64::new(0.0, 0.0); n_fft];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (m, mut out) in data.outer_iter_mut().enumerate() {
        let x = clip.channel(m);
        for l in 0..frames {
            let start = l * cfg.hop;
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = C64::new(x[start + n] * window[n], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                out[[k, l]] = buf[k];
            }
        }
    }
    Ok(TfGrid {
        data,
        config: *cfg,
        sample_rate: clip.sample_rate,
    })
}
