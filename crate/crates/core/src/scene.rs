//! Synthetic binaural scenes with an external microphone.
//!
//! The target is a (possibly moving) far-field source rendered frame by
//! frame: each Hann-weighted, zero-padded source frame receives the
//! free-field steering phase of the azimuth at the frame centre and the
//! frames are overlap-added, which cross-fades between successive
//! directions. Noise is a sum of independent white plane waves spread over
//! the sphere, rendered in the frequency domain over the whole signal. An
//! optional reverberation proxy adds a spatially diffuse, exponentially
//! decaying copy of the source.

use std::f64::consts::PI;
use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unit_vector, ArrayGeometry, Position, SPEED_OF_SOUND};
use crate::linalg::C64;
use crate::stft::{analyze, AudioClip, StftConfig, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryKnot {
    pub time_s: f64,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSignal {
    /// Stationary noise with a speech-like spectral envelope, amplitude
    /// modulated at a syllabic rate.
    SpeechShaped {
        corner_hz: f64,
        tilt_db_per_octave: f64,
        modulation_hz: f64,
        modulation_depth: f64,
    },
    /// First channel of a WAV file, looped to the scene duration.
    Wav { path: PathBuf },
}

impl Default for SourceSignal {
    fn default() -> Self {
        SourceSignal::SpeechShaped {
            corner_hz: 500.0,
            tilt_db_per_octave: -3.0,
            modulation_hz: 4.0,
            modulation_depth: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseField {
    /// `diffuse_order` plane waves on a spherical Fibonacci lattice.
    #[default]
    Isotropic,
    /// Four horizontal plane waves from the room corners (±45°, ±135°).
    FourCorner,
    /// A single plane wave; fully coherent, useful as a negative control.
    PlaneWave { azimuth_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbProxy {
    /// Direct-to-diffuse energy ratio of the target at the front mics.
    pub drr_db: f64,
    pub t60_s: f64,
}

/// Declarative scene description, usually read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: ArrayGeometry,
    pub source_trajectory: Vec<TrajectoryKnot>,
    #[serde(default)]
    pub source_signal: SourceSignal,
    /// Broadband SNR at the front head microphones; `None` disables noise.
    pub snr_db: Option<f64>,
    #[serde(default = "default_diffuse_order")]
    pub diffuse_order: usize,
    #[serde(default)]
    pub noise_field: NoiseField,
    #[serde(default)]
    pub reverb_proxy: Option<ReverbProxy>,
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default)]
    pub stft: StftConfig,
    pub seed: u64,
}

fn default_diffuse_order() -> usize {
    96
}

fn default_sample_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}

impl SceneSpec {
    /// Static talker at 2 m-class distance, external mic 1.6 m away at 45°.
    pub fn static_preset(azimuth_deg: f64, snr_db: Option<f64>, seed: u64) -> Self {
        Self {
            geometry: ArrayGeometry::binaural().with_external_polar(45.0, 1.6),
            source_trajectory: vec![TrajectoryKnot {
                time_s: 0.0,
                azimuth_deg,
            }],
            source_signal: SourceSignal::default(),
            snr_db,
            diffuse_order: default_diffuse_order(),
            noise_field: NoiseField::Isotropic,
            reverb_proxy: None,
            duration_s: 30.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            stft: StftConfig::default(),
            seed,
        }
    }

    /// Talker walking from −50° to 50° over 25 s, external mic 1.5 m in front.
    pub fn moving_preset(snr_db: Option<f64>, seed: u64) -> Self {
        Self {
            geometry: ArrayGeometry::binaural().with_external_polar(0.0, 1.5),
            source_trajectory: vec![
                TrajectoryKnot {
                    time_s: 0.0,
                    azimuth_deg: -50.0,
                },
                TrajectoryKnot {
                    time_s: 25.0,
                    azimuth_deg: 50.0,
                },
            ],
            duration_s: 25.0,
            ..Self::static_preset(0.0, snr_db, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.stft.validate()?;
        if !(self.duration_s > 0.0) {
            return Err(Error::config("scene duration must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if self.diffuse_order < 8 {
            return Err(Error::config(format!(
                "diffuse order {} below the minimum of 8",
                self.diffuse_order
            )));
        }
        if self.source_trajectory.is_empty() {
            return Err(Error::config("source trajectory needs at least one knot"));
        }
        if !self
            .source_trajectory
            .windows(2)
            .all(|w| w[0].time_s <= w[1].time_s)
        {
            return Err(Error::config("trajectory knots must be sorted by time"));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::config("snr_db must be finite (use null for no noise)"));
            }
        }
        if let Some(r) = &self.reverb_proxy {
            if !(r.t60_s > 0.0 && r.drr_db.is_finite()) {
                return Err(Error::config("reverb proxy needs a positive T60 and finite DRR"));
            }
        }
        let n = self.num_samples();
        if n < self.stft.frame_len {
            return Err(Error::config("scene shorter than one STFT frame"));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn is_static(&self) -> bool {
        self.source_trajectory
            .iter()
            .all(|k| k.azimuth_deg == self.source_trajectory[0].azimuth_deg)
    }

    /// Azimuth at `t` seconds, linear between knots and constant outside.
    pub fn azimuth_at(&self, t: f64) -> f64 {
        let knots = &self.source_trajectory;
        if t <= knots[0].time_s {
            return knots[0].azimuth_deg;
        }
        for w in knots.windows(2) {
            if t <= w[1].time_s {
                let span = w[1].time_s - w[0].time_s;
                if span <= 0.0 {
                    return w[1].azimuth_deg;
                }
                let f = (t - w[0].time_s) / span;
                return w[0].azimuth_deg + f * (w[1].azimuth_deg - w[0].azimuth_deg);
            }
        }
        knots[knots.len() - 1].azimuth_deg
    }
}

/// Rendered scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub mixed: AudioClip,
    pub clean: AudioClip,
    pub noise: AudioClip,
    /// Source azimuth at the centre of every analysis frame.
    pub truth_doa: Vec<f64>,
    /// Extended free-field RTF vector per analysis bin (static scenes only).
    pub oracle_rtf: Option<Vec<Vec<C64>>>,
    pub stft: StftConfig,
}

impl SceneOutput {
    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.truth_doa.len())
            .map(|l| self.stft.frame_center_s(l, self.mixed.sample_rate))
            .collect()
    }

    /// Same scene with the noise rescaled to a new broadband SNR at the
    /// `front` channels. Equals re-rendering with that SNR up to rounding.
    pub fn with_snr(&self, snr_db: f64, front: &[usize]) -> Result<SceneOutput> {
        let speech = mean_power(&self.clean.samples, front);
        let raw = mean_power(&self.noise.samples, front);
        if !(raw > 0.0) {
            return Err(Error::config("scene has no noise to rescale"));
        }
        let noise = &self.noise.samples * (speech / (raw * db_to_power(snr_db))).sqrt();
        let mixed = &self.clean.samples + &noise;
        let fs = self.mixed.sample_rate;
        Ok(SceneOutput {
            mixed: AudioClip::new(mixed, fs)?,
            noise: AudioClip::new(noise, fs)?,
            ..self.clone()
        })
    }
}

/// Renders `spec`. Deterministic for a given spec (including its seed).
pub fn synthesize(spec: &SceneSpec) -> Result<SceneOutput> {
    spec.validate()?;
    let n = spec.num_samples();
    let fs = spec.sample_rate;
    let positions = spec.geometry.positions();
    let channels = positions.len();
    let mut planner = FftPlanner::<f64>::new();

    let source = source_signal(spec, n, &mut planner)?;
    let mut clean = render_target(spec, &source, &positions, &mut planner);

    if let Some(reverb) = &spec.reverb_proxy {
        let tail = render_reverb(spec, reverb, &source, &positions, &mut planner);
        let front = spec.geometry.front_pair();
        let direct_power = mean_power(&clean, &front);
        let tail_power = mean_power(&tail, &front);
        if tail_power > 0.0 {
            let gain = (direct_power / (tail_power * db_to_power(reverb.drr_db))).sqrt();
            clean.scaled_add(gain, &tail);
        }
    }

    let noise = match spec.snr_db {
        None => Array2::zeros((channels, n)),
        Some(snr) => {
            let mut noise = render_noise(spec, &positions, n, &mut planner);
            let front = spec.geometry.front_pair();
            let speech = mean_power(&clean, &front);
            let raw = mean_power(&noise, &front);
            if raw > 0.0 {
                noise *= (speech / (raw * db_to_power(snr))).sqrt();
            }
            noise
        }
    };
    let mixed = &clean + &noise;

    let frames = spec.stft.num_frames(n);
    let truth_doa = (0..frames)
        .map(|l| spec.azimuth_at(spec.stft.frame_center_s(l, fs)))
        .collect();
    let oracle_rtf = spec.is_static().then(|| {
        let dir = unit_vector(spec.source_trajectory[0].azimuth_deg, 0.0);
        (0..spec.stft.num_bins())
            .map(|k| {
                let omega = 2.0 * PI * k as f64 * fs as f64 / spec.stft.fft_size() as f64;
                let a = spec.geometry.steering(&positions, &dir, omega);
                let r = a[0];
                let mut g: Vec<C64> = a.iter().map(|x| x / r).collect();
                g[0] = C64::new(1.0, 0.0);
                g
            })
            .collect()
    });

    Ok(SceneOutput {
        mixed: AudioClip::new(mixed, fs)?,
        clean: AudioClip::new(clean, fs)?,
        noise: AudioClip::new(noise, fs)?,
        truth_doa,
        oracle_rtf,
        stft: spec.stft,
    })
}

fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn mean_power(x: &Array2<f64>, channels: &[usize]) -> f64 {
    channels
        .iter()
        .map(|&c| x.row(c).iter().map(|v| v * v).sum::<f64>() / x.ncols() as f64)
        .sum::<f64>()
        / channels.len() as f64
}

fn source_signal(spec: &SceneSpec, n: usize, planner: &mut FftPlanner<f64>) -> Result<Vec<f64>> {
    let fs = spec.sample_rate as f64;
    let mut s = match &spec.source_signal {
        SourceSignal::SpeechShaped {
            corner_hz,
            tilt_db_per_octave,
            modulation_hz,
            modulation_depth,
        } => {
            let mut rng = stream_rng(spec.seed, 1);
            let mut half = white_half_spectrum(&mut rng, n);
            for (k, x) in half.iter_mut().enumerate() {
                let f = k as f64 * fs / n as f64;
                *x *= speech_envelope(f, *corner_hz, *tilt_db_per_octave);
            }
            let mut s = irfft(&half, n, planner);
            for (t, v) in s.iter_mut().enumerate() {
                let phase = 2.0 * PI * modulation_hz * t as f64 / fs;
                *v *= 1.0 - modulation_depth * (0.5 + 0.5 * phase.cos());
            }
            s
        }
        SourceSignal::Wav { path } => {
            let clip = AudioClip::read_wav(path)?;
            if clip.sample_rate != spec.sample_rate {
                return Err(Error::config(format!(
                    "source WAV at {} Hz, scene at {} Hz",
                    clip.sample_rate, spec.sample_rate
                )));
            }
            if clip.is_empty() {
                return Err(Error::config("source WAV is empty"));
            }
            let x = clip.channel(0);
            (0..n).map(|t| x[t % x.len()]).collect()
        }
    };
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        s.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(s)
}

/// Magnitude envelope: high-pass below 100 Hz, flat up to `corner`, then a
/// constant slope in dB per octave.
fn speech_envelope(f: f64, corner: f64, tilt_db_per_octave: f64) -> f64 {
    let highpass = if f <= 0.0 { 0.0 } else { 1.0 / (1.0 + (100.0 / f).powi(4)).sqrt() };
    let tilt = if f > corner {
        10f64.powf(tilt_db_per_octave * (f / corner).log2() / 20.0)
    } else {
        1.0
    };
    highpass * tilt
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One-sided spectrum of unit-variance white Gaussian noise of length `n`.
fn white_half_spectrum(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let bins = n / 2 + 1;
    let interior = (n as f64 / 2.0).sqrt();
    let edge = (n as f64).sqrt();
    (0..bins)
        .map(|k| {
            let a: f64 = rng.sample(StandardNormal);
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                C64::new(edge * a, 0.0)
            } else {
                let b: f64 = rng.sample(StandardNormal);
                C64::new(interior * a, interior * b)
            }
        })
        .collect()
}

/// Real inverse DFT of a one-sided spectrum (`1/n` normalisation).
fn irfft(half: &[C64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut full = vec![C64::new(0.0, 0.0); n];
    for (k, v) in half.iter().enumerate().take(n / 2 + 1) {
        full[k] = *v;
        if k > 0 && k < n - k {
            full[n - k] = v.conj();
        }
    }
    if n % 2 == 0 {
        full[n / 2] = C64::new(full[n / 2].re, 0.0);
    }
    full[0] = C64::new(full[0].re, 0.0);
    planner.plan_fft_inverse(n).process(&mut full);
    full.iter().map(|v| v.re / n as f64).collect()
}

fn rfft(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<C64> {
    let mut buf: Vec<C64> = (0..n)
        .map(|t| C64::new(x.get(t).copied().unwrap_or(0.0), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Adds `spectrum[k]·exp(−jω_k·τ)` to `acc` for all one-sided bins of an
/// `n`-point DFT, using a phase recursion re-anchored every 1024 bins.
fn accumulate_delayed(acc: &mut [C64], spectrum: &[C64], delay_s: f64, gain: f64, n: usize, fs: f64) {
    let step = -2.0 * PI * fs * delay_s / n as f64;
    let rot = C64::from_polar(1.0, step);
    let mut phasor = C64::new(gain, 0.0);
    for (k, (a, x)) in acc.iter_mut().zip(spectrum).enumerate() {
        if k % 1024 == 0 {
            phasor = C64::from_polar(gain, step * k as f64);
        }
        *a += x * phasor;
        phasor *= rot;
    }
}

/// Plane-wave arrival directions of the noise field.
fn noise_directions(spec: &SceneSpec) -> Vec<Position> {
    match &spec.noise_field {
        NoiseField::Isotropic => fibonacci_sphere(spec.diffuse_order),
        NoiseField::FourCorner => [45.0, 135.0, -135.0, -45.0]
            .iter()
            .map(|az| unit_vector(*az, 0.0))
            .collect(),
        NoiseField::PlaneWave { azimuth_deg } => vec![unit_vector(*azimuth_deg, 0.0)],
    }
}

/// Nearly uniform points on the unit sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<Position> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Sum of independent white plane waves, `[channels × n]`, circular over
/// the signal length. Per-channel variance is normalised to one.
fn render_diffuse(
    spec: &SceneSpec,
    directions: &[Position],
    positions: &[Position],
    n: usize,
    stream: u64,
    planner: &mut FftPlanner<f64>,
) -> Array2<f64> {
    let fs = spec.sample_rate as f64;
    let bins = n / 2 + 1;
    let mut rng = stream_rng(spec.seed, stream);
    let mut acc = vec![vec![C64::new(0.0, 0.0); bins]; positions.len()];
    let gain = 1.0 / (directions.len() as f64).sqrt();
    for dir in directions {
        let spectrum = white_half_spectrum(&mut rng, n);
        for (m, p) in positions.iter().enumerate() {
            let tau = crate::geometry::plane_wave_delay(p, dir);
            accumulate_delayed(&mut acc[m], &spectrum, tau, gain, n, fs);
        }
    }
    let mut out = Array2::zeros((positions.len(), n));
    for (m, half) in acc.iter().enumerate() {
        let x = irfft(half, n, planner);
        out.row_mut(m).iter_mut().zip(x).for_each(|(o, v)| *o = v);
    }
    out
}

fn render_noise(spec: &SceneSpec, positions: &[Position], n: usize, planner: &mut FftPlanner<f64>) -> Array2<f64> {
    render_diffuse(spec, &noise_directions(spec), positions, n, 2, planner)
}

/// Diffuse, exponentially decaying tail: a multichannel diffuse impulse
/// response convolved with the source.
fn render_reverb(
    spec: &SceneSpec,
    reverb: &ReverbProxy,
    source: &[f64],
    positions: &[Position],
    planner: &mut FftPlanner<f64>,
) -> Array2<f64> {
    let fs = spec.sample_rate as f64;
    let len = ((reverb.t60_s * fs).ceil() as usize).max(2);
    let ir_n = (2 * len).next_power_of_two();
    let mut ir = render_diffuse(spec, &fibonacci_sphere(spec.diffuse_order), positions, ir_n, 3, planner);
    for mut row in ir.rows_mut() {
        for (t, v) in row.iter_mut().enumerate() {
            // 60 dB of amplitude decay over T60
            *v = if t < len { *v * (-6.907_755 * t as f64 / (reverb.t60_s * fs)).exp() } else { 0.0 };
        }
    }
    let n = source.len();
    let conv_n = n + len;
    let s_spec = rfft(source, conv_n, planner);
    let mut out = Array2::zeros((positions.len(), n));
    for m in 0..positions.len() {
        let h = ir.row(m).to_vec();
        let h_spec = rfft(&h[..len], conv_n, planner);
        let prod: Vec<C64> = s_spec.iter().zip(&h_spec).map(|(a, b)| a * b).collect();
        let y = irfft(&prod, conv_n, planner);
        out.row_mut(m).iter_mut().zip(&y[..n]).for_each(|(o, v)| *o = *v);
    }
    out
}

/// Frame-wise free-field rendering of the target. Hann frames at 50 %
/// overlap sum to one, so a static direction reproduces a pure delay.
fn render_target(spec: &SceneSpec, source: &[f64], positions: &[Position], planner: &mut FftPlanner<f64>) -> Array2<f64> {
    let fs = spec.sample_rate as f64;
    let n = source.len();
    let frame = spec.stft.frame_len;
    let hop = frame / 2;
    let max_delay = positions
        .iter()
        .map(|p| crate::geometry::distance(p, &[0.0; 3]) / SPEED_OF_SOUND * fs)
        .fold(0.0, f64::max);
    // Every per-channel delay becomes positive after this common shift,
    // which is undone when reading the output.
    let bulk = max_delay.ceil() as usize + 2;
    let pad = (frame + 2 * bulk + 2).next_power_of_two();
    let bins = pad / 2 + 1;
    let window: Vec<f64> = (0..frame)
        .map(|t| 0.5 - 0.5 * (2.0 * PI * t as f64 / frame as f64).cos())
        .collect();

    let fwd = planner.plan_fft_forward(pad);
    let inv = planner.plan_fft_inverse(pad);
    let mut out = Array2::<f64>::zeros((positions.len(), n + pad + hop));
    let mut buf = vec![C64::new(0.0, 0.0); pad];
    let mut chan = vec![C64::new(0.0, 0.0); pad];

    // frame starts at (i − 1)·hop so the first samples are fully covered
    let frames = n / hop + 2;
    for i in 0..frames {
        let start = i as isize * hop as isize - hop as isize;
        buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
        for t in 0..frame {
            let idx = start + t as isize;
            if idx >= 0 && (idx as usize) < n {
                buf[t] = C64::new(source[idx as usize] * window[t], 0.0);
            }
        }
        fwd.process(&mut buf);
        let centre = (start as f64 + frame as f64 / 2.0) / fs;
        let dir = unit_vector(spec.azimuth_at(centre), 0.0);
        for (m, p) in positions.iter().enumerate() {
            let tau = crate::geometry::plane_wave_delay(p, &dir) + bulk as f64 / fs;
            chan.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
            for k in 0..bins {
                let omega = 2.0 * PI * k as f64 * fs / pad as f64;
                let mut h = C64::from_polar(1.0, -omega * tau);
                if spec.geometry.head_shadow {
                    h *= spec.geometry.steering(std::slice::from_ref(p), &dir, omega)[0].norm();
                }
                let v = buf[k] * h;
                chan[k] = v;
                if k > 0 && k < pad - k {
                    chan[pad - k] = v.conj();
                }
            }
            chan[pad / 2] = C64::new(chan[pad / 2].re, 0.0);
            inv.process(&mut chan);
            let mut row = out.row_mut(m);
            for (t, v) in chan.iter().enumerate() {
                // output index = time + hop, so the leading frame stays in range
                let idx = (start + hop as isize) as usize + t;
                row[idx] += v.re / pad as f64;
            }
        }
    }
    // out index = time + hop + bulk
    let offset = hop + bulk;
    Array2::from_shape_fn((positions.len(), n), |(m, t)| out[[m, t + offset]])
}

/// Magnitude-squared coherence between microphone pairs.
#[derive(Debug, Clone)]
pub struct CoherenceCurves {
    pub frequencies_hz: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// `measured[p][k]` for pair `p`, bin `k`.
    pub measured: Vec<Vec<f64>>,
    /// Spherically isotropic model `sinc²(ω·d/c)`.
    pub model: Vec<Vec<f64>>,
}

impl CoherenceCurves {
    pub fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        self.pairs.iter().position(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Welch estimate of the pairwise coherence of a noise recording, next to
/// the spherically isotropic reference. Needs at least 10 s of audio.
pub fn diffuse_field_check(noise: &AudioClip, geometry: &ArrayGeometry) -> Result<CoherenceCurves> {
    if noise.duration_s() < 10.0 - 1e-9 {
        return Err(Error::config(format!(
            "coherence check needs at least 10 s of noise, got {:.2} s",
            noise.duration_s()
        )));
    }
    let positions = geometry.positions();
    if positions.len() != noise.channels() {
        return Err(Error::config(format!(
            "geometry has {} microphones, recording {} channels",
            positions.len(),
            noise.channels()
        )));
    }
    let cfg = StftConfig::default();
    let grid = analyze(noise, &cfg)?;
    let bins = grid.num_bins();
    let frames = grid.num_frames();
    let fs = noise.sample_rate as f64;
    let frequencies_hz: Vec<f64> = (0..bins).map(|k| k as f64 * fs / cfg.fft_size() as f64).collect();

    let psd: Vec<Vec<f64>> = (0..noise.channels())
        .map(|m| {
            (0..bins)
                .map(|k| (0..frames).map(|l| grid.data[[m, k, l]].norm_sqr()).sum())
                .collect()
        })
        .collect();

    let mut pairs = Vec::new();
    let mut measured = Vec::new();
    let mut model = Vec::new();
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            let d = crate::geometry::distance(&positions[a], &positions[b]);
            let msc = (0..bins)
                .map(|k| {
                    let cross: C64 = (0..frames)
                        .map(|l| grid.data[[a, k, l]] * grid.data[[b, k, l]].conj())
                        .sum();
                    let denom = psd[a][k] * psd[b][k];
                    if denom > 0.0 {
                        cross.norm_sqr() / denom
                    } else {
                        0.0
                    }
                })
                .collect();
            let reference = frequencies_hz
                .iter()
                .map(|f| sinc(2.0 * PI * f * d / SPEED_OF_SOUND).powi(2))
                .collect();
            pairs.push((a, b));
            measured.push(msc);
            model.push(reference);
        }
    }
    Ok(CoherenceCurves {
        frequencies_hz,
        pairs,
        measured,
        model,
    })
}
