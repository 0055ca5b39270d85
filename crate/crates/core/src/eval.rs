//! End-to-end runs, accuracy metrics, CSV artefacts and parameter sweeps.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{classify_observation, oracle_labels, ActivityLabel, LabelGrid, SppConfig};
use crate::covariance::{warmup_frames, CovarianceState, SmoothingConfig};
use crate::doa::{argmin_direction, cost_row, default_directions, generate_prototypes, CostSurface, DoaEstimate, PrototypeDatabase};
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::linalg::C64;
use crate::rtf::{Estimator, EstimatorConfig, RtfVariant, RtfVector};
use crate::scene::{synthesize, NoiseField, ReverbProxy, SceneOutput, SceneSpec};
use crate::stft::{analyze, AudioClip, StftConfig};

/// Source of the speech/noise labels that drive the covariance updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Spp,
    #[default]
    Oracle,
}

/// Frames that enter the accuracy figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalWindow {
    SecondHalf,
    All,
    AfterWarmup,
}

impl EvalWindow {
    pub fn range(self, frames: usize, warmup: usize) -> std::ops::Range<usize> {
        match self {
            EvalWindow::SecondHalf => frames / 2..frames,
            EvalWindow::All => 0..frames,
            EvalWindow::AfterWarmup => warmup.min(frames)..frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimator: Estimator,
    pub detector: Detector,
    pub tau_y_s: f64,
    pub tau_n_s: f64,
    pub eval_window: EvalWindow,
    pub tolerance_deg: f64,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub spp: SppConfig,
    #[serde(default = "default_margin")]
    pub oracle_margin_db: f64,
    #[serde(default)]
    pub estimator_config: EstimatorConfig,
    /// Use the noise update as printed in the source derivation, which
    /// blends from the noisy covariance instead of the noise covariance.
    #[serde(default)]
    pub faithful_eq26: bool,
    #[serde(default)]
    pub keep_cost_surface: bool,
    /// Only estimate RTFs and directions inside the evaluation window;
    /// frames outside it are reported invalid. The covariance recursions
    /// still run over every frame.
    #[serde(default)]
    pub scored_frames_only: bool,
}

fn default_margin() -> f64 {
    -10.0
}

impl RunConfig {
    pub fn static_default(estimator: Estimator) -> Self {
        Self {
            estimator,
            detector: Detector::Oracle,
            tau_y_s: 0.25,
            tau_n_s: 0.5,
            eval_window: EvalWindow::SecondHalf,
            tolerance_deg: 5.0,
            stft: StftConfig::default(),
            spp: SppConfig::default(),
            oracle_margin_db: default_margin(),
            estimator_config: EstimatorConfig::default(),
            faithful_eq26: false,
            keep_cost_surface: false,
            scored_frames_only: false,
        }
    }

    pub fn moving_default(estimator: Estimator) -> Self {
        Self {
            tau_y_s: 0.15,
            eval_window: EvalWindow::All,
            ..Self::static_default(estimator)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.spp.validate()?;
        if !(self.tolerance_deg > 0.0) {
            return Err(Error::config("tolerance must be positive"));
        }
        if !(self.tau_y_s > 0.0 && self.tau_n_s > 0.0) {
            return Err(Error::config("time constants must be positive"));
        }
        Ok(())
    }

    pub fn smoothing(&self, sample_rate: u32) -> Result<SmoothingConfig> {
        let mut s = SmoothingConfig::from_time_constants(self.tau_y_s, self.tau_n_s, self.stft.hop, sample_rate)?;
        s.faithful_eq26 = self.faithful_eq26;
        Ok(s)
    }

    pub fn warmup_frames(&self, sample_rate: u32) -> usize {
        warmup_frames(self.tau_y_s.max(self.tau_n_s), self.stft.hop, sample_rate)
    }
}

/// Output of one estimator over one recording.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub estimator: Estimator,
    pub estimates: Vec<DoaEstimate>,
    pub frame_times: Vec<f64>,
    pub cost_surface: Option<CostSurface>,
    /// Frames before this index come from unsettled recursions.
    pub warmup_frames: usize,
    /// Reads of the noise covariance summed over bins. Shared between the
    /// estimators of a joint run.
    pub noise_reads: u64,
    /// Bin-frames where a numerical routine failed and the previous
    /// estimate was held.
    pub numerical_failures: u64,
    pub processing_s: f64,
    pub signal_s: f64,
}

impl RunOutput {
    pub fn real_time_factor(&self) -> f64 {
        self.processing_s / self.signal_s
    }
}

struct BinTrack {
    state: CovarianceState,
    held: Vec<RtfVector>,
    failures: Vec<u64>,
}

/// Runs a single estimator. `oracle` is required when the detector is the
/// oracle.
pub fn run(
    cfg: &RunConfig,
    mixed: &AudioClip,
    oracle: Option<&LabelGrid>,
    db: &PrototypeDatabase,
) -> Result<RunOutput> {
    let mut out = run_estimators(cfg, &[cfg.estimator], mixed, oracle, db)?;
    Ok(out.remove(0))
}

/// Runs several estimators on shared STFT, labels and covariance states.
/// `cfg.estimator` is ignored.
pub fn run_estimators(
    cfg: &RunConfig,
    estimators: &[Estimator],
    mixed: &AudioClip,
    oracle: Option<&LabelGrid>,
    db: &PrototypeDatabase,
) -> Result<Vec<RunOutput>> {
    let started = Instant::now();
    cfg.validate()?;
    if estimators.is_empty() {
        return Err(Error::config("no estimator selected"));
    }
    let head = db.num_mics();
    let has_external = match mixed.channels() {
        c if c == head => false,
        c if c == head + 1 => true,
        c => {
            return Err(Error::config(format!(
                "recording has {c} channels, prototypes expect {head} head microphones (plus optionally one external)"
            )))
        }
    };
    if let Some(e) = estimators.iter().find(|e| e.needs_external() && !has_external) {
        return Err(Error::config(format!(
            "estimator {e} requires the external microphone channel"
        )));
    }
    if db.fft_size != cfg.stft.fft_size() || db.sample_rate != mixed.sample_rate {
        return Err(Error::config(format!(
            "prototypes built for fft size {} at {} Hz, run uses {} at {} Hz",
            db.fft_size,
            db.sample_rate,
            cfg.stft.fft_size(),
            mixed.sample_rate
        )));
    }
    let dim = mixed.channels();
    cfg.estimator_config.validate(dim)?;
    let grid = analyze(mixed, &cfg.stft)?;
    let (bins, frames) = (grid.num_bins(), grid.num_frames());
    if let Some(labels) = oracle {
        if labels.bins() != bins || labels.frames() != frames {
            return Err(Error::config(format!(
                "label grid is {}×{}, recording gives {bins}×{frames}",
                labels.bins(),
                labels.frames()
            )));
        }
    } else if cfg.detector == Detector::Oracle {
        return Err(Error::config("oracle detector selected but no labels supplied"));
    }
    let labels = match cfg.detector {
        Detector::Oracle => oracle,
        Detector::Spp => None,
    };

    let smoothing = cfg.smoothing(mixed.sample_rate)?;
    let mut tracks: Vec<BinTrack> = (0..bins)
        .map(|_| BinTrack {
            state: CovarianceState::new(dim, smoothing),
            held: vec![RtfVector::invalid(head, RtfVariant::Head); estimators.len()],
            failures: vec![0; estimators.len()],
        })
        .collect();
    let mut estimates = vec![Vec::with_capacity(frames); estimators.len()];
    let mut surfaces: Vec<Vec<Option<Vec<f64>>>> = vec![Vec::new(); estimators.len()];

    let warmup = cfg.warmup_frames(mixed.sample_rate);
    let decided = if cfg.scored_frames_only {
        cfg.eval_window.range(frames, warmup)
    } else {
        0..frames
    };
    for l in 0..frames {
        let decide = decided.contains(&l);
        tracks.par_iter_mut().enumerate().try_for_each(|(k, track)| {
            let y: Vec<C64> = (0..dim).map(|m| grid.data[[m, k, l]]).collect();
            let label = match labels {
                Some(g) => g.get(k, l),
                None => spp_label(&track.state, &y[..head], l, &cfg.spp),
            };
            if let Err(e) = track.state.update(&y, label) {
                if !matches!(e, Error::Numerical(_)) {
                    return Err(e);
                }
                track.failures.iter_mut().for_each(|f| *f += 1);
                return Ok(());
            }
            if !decide {
                return Ok(());
            }
            for (j, est) in estimators.iter().enumerate() {
                match est.estimate(&track.state, has_external, &cfg.estimator_config) {
                    Ok(v) if v.valid => track.held[j] = v,
                    Ok(_) => {}
                    Err(Error::Numerical(_)) => track.failures[j] += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        })?;
        if !decide {
            for j in 0..estimators.len() {
                estimates[j].push(DoaEstimate::invalid());
                if cfg.keep_cost_surface {
                    surfaces[j].push(None);
                }
            }
            continue;
        }
        let rows: Vec<Result<Option<Vec<f64>>>> = (0..estimators.len())
            .into_par_iter()
            .map(|j| {
                let bin_estimates: Vec<&RtfVector> = tracks.iter().map(|t| &t.held[j]).collect();
                cost_row(&bin_estimates, db)
            })
            .collect();
        for (j, row) in rows.into_iter().enumerate() {
            let row = row?;
            estimates[j].push(argmin_direction(row.as_deref(), &db.directions));
            if cfg.keep_cost_surface {
                surfaces[j].push(row);
            }
        }
    }

    let noise_reads = tracks.iter().map(|t| t.state.noise_reads()).sum();
    let frame_times: Vec<f64> = (0..frames)
        .map(|l| cfg.stft.frame_center_s(l, mixed.sample_rate))
        .collect();
    let processing_s = started.elapsed().as_secs_f64();
    Ok(estimators
        .iter()
        .enumerate()
        .zip(estimates.into_iter().zip(surfaces))
        .map(|((j, &estimator), (estimates, rows))| RunOutput {
            estimator,
            estimates,
            frame_times: frame_times.clone(),
            cost_surface: cfg.keep_cost_surface.then(|| CostSurface {
                directions: db.directions.clone(),
                rows,
            }),
            warmup_frames: warmup,
            noise_reads,
            numerical_failures: tracks.iter().map(|t| t.failures[j]).sum(),
            processing_s,
            signal_s: mixed.duration_s(),
        })
        .collect())
}

/// Speech presence decision for one bin-frame, using the running noise
/// covariance diagonal as the noise PSD of each head channel.
fn spp_label(state: &CovarianceState, y_head: &[C64], frame: usize, cfg: &SppConfig) -> ActivityLabel {
    if frame < cfg.bootstrap_frames {
        return ActivityLabel::NoiseOnly;
    }
    let phi_n = state.phi_n();
    let psd: Vec<f64> = (0..y_head.len()).map(|m| phi_n[(m, m)].re).collect();
    classify_observation(y_head, &psd, cfg)
}

/// Oracle labels of a rendered scene.
pub fn scene_labels(scene: &SceneOutput, cfg: &RunConfig) -> Result<LabelGrid> {
    let clean = analyze(&scene.clean, &cfg.stft)?;
    let noise = analyze(&scene.noise, &cfg.stft)?;
    oracle_labels(&clean, &noise, cfg.oracle_margin_db)
}

/// Runs `estimators` on a rendered scene, computing oracle labels when the
/// detector asks for them.
pub fn run_scene(
    cfg: &RunConfig,
    estimators: &[Estimator],
    scene: &SceneOutput,
    db: &PrototypeDatabase,
) -> Result<Vec<RunOutput>> {
    let labels = match cfg.detector {
        Detector::Oracle => Some(scene_labels(scene, cfg)?),
        Detector::Spp => None,
    };
    run_estimators(cfg, estimators, &scene.mixed, labels.as_ref(), db)
}

/// Absolute azimuth difference wrapped to `[0, 180]`.
pub fn angular_error(estimate_deg: f64, truth_deg: f64) -> f64 {
    let d = (estimate_deg - truth_deg).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Percentage of frames within `tolerance_deg` of the truth. Invalid frames
/// count as misses.
pub fn accuracy(estimates: &[DoaEstimate], truth_deg: &[f64], tolerance_deg: f64) -> Result<f64> {
    if estimates.len() != truth_deg.len() {
        return Err(Error::config(format!(
            "{} estimates for {} truth frames",
            estimates.len(),
            truth_deg.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::config("accuracy over an empty window"));
    }
    let hits = estimates
        .iter()
        .zip(truth_deg)
        .filter(|(e, &t)| e.valid && angular_error(e.azimuth_deg, t) <= tolerance_deg)
        .count();
    Ok(100.0 * hits as f64 / estimates.len() as f64)
}

/// Scores of one run over its evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tolerance_deg: f64,
    pub window_start: usize,
    pub window_end: usize,
    pub frames_scored: usize,
    pub accuracy_pct: f64,
    pub invalid_frames: usize,
    /// Over valid frames only.
    pub rms_error_deg: Option<f64>,
    pub mean_error_deg: Option<f64>,
    /// Per-frame absolute error inside the window; `null` where invalid.
    pub errors_deg: Vec<Option<f64>>,
}

pub fn evaluate(
    estimates: &[DoaEstimate],
    truth_deg: &[f64],
    window: std::ops::Range<usize>,
    tolerance_deg: f64,
) -> Result<Metrics> {
    if estimates.len() != truth_deg.len() {
        return Err(Error::config(format!(
            "{} estimates for {} truth frames",
            estimates.len(),
            truth_deg.len()
        )));
    }
    if window.end > estimates.len() || window.start >= window.end {
        return Err(Error::config(format!(
            "evaluation window {}..{} is empty or exceeds {} frames",
            window.start,
            window.end,
            estimates.len()
        )));
    }
    let est = &estimates[window.clone()];
    let truth = &truth_deg[window.clone()];
    let errors: Vec<Option<f64>> = est
        .iter()
        .zip(truth)
        .map(|(e, &t)| e.valid.then(|| angular_error(e.azimuth_deg, t)))
        .collect();
    let valid: Vec<f64> = errors.iter().flatten().copied().collect();
    let (rms, mean) = if valid.is_empty() {
        (None, None)
    } else {
        let n = valid.len() as f64;
        (
            Some((valid.iter().map(|e| e * e).sum::<f64>() / n).sqrt()),
            Some(valid.iter().sum::<f64>() / n),
        )
    };
    Ok(Metrics {
        tolerance_deg,
        window_start: window.start,
        window_end: window.end,
        frames_scored: est.len(),
        accuracy_pct: accuracy(est, truth, tolerance_deg)?,
        invalid_frames: est.len() - valid.len(),
        rms_error_deg: rms,
        mean_error_deg: mean,
        errors_deg: errors,
    })
}

/// Metrics of `output` under the window and tolerance of `cfg`.
pub fn evaluate_run(output: &RunOutput, truth_deg: &[f64], cfg: &RunConfig) -> Result<Metrics> {
    let window = cfg.eval_window.range(output.estimates.len(), output.warmup_frames);
    evaluate(&output.estimates, truth_deg, window, cfg.tolerance_deg)
}

#[derive(Debug, Serialize, Deserialize)]
struct DoaRow {
    frame: usize,
    time_s: f64,
    azimuth_deg: Option<f64>,
    cost: Option<f64>,
    valid: u8,
}

/// `frame,time_s,azimuth_deg,cost,valid`; invalid frames leave the
/// azimuth and cost cells empty.
pub fn write_doa_csv(path: impl AsRef<Path>, estimates: &[DoaEstimate], times: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (frame, (e, &time_s)) in estimates.iter().zip(times).enumerate() {
        w.serialize(DoaRow {
            frame,
            time_s,
            azimuth_deg: e.valid.then_some(e.azimuth_deg),
            cost: e.valid.then_some(e.cost),
            valid: u8::from(e.valid),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a DOA CSV back into estimates and frame times.
pub fn read_doa_csv(path: impl AsRef<Path>) -> Result<(Vec<DoaEstimate>, Vec<f64>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut estimates = Vec::new();
    let mut times = Vec::new();
    for (i, row) in r.deserialize::<DoaRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.frame != i {
            return Err(Error::format("DOA CSV", format!("row {i} has frame index {}", row.frame)));
        }
        let est = match (row.valid, row.azimuth_deg) {
            (1, Some(az)) => DoaEstimate {
                azimuth_deg: az,
                cost: row.cost.unwrap_or(f64::NAN),
                valid: true,
            },
            (0, _) => DoaEstimate::invalid(),
            _ => return Err(Error::format("DOA CSV", format!("row {i}: valid frame without azimuth"))),
        };
        estimates.push(est);
        times.push(row.time_s);
    }
    Ok((estimates, times))
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    frame_index: usize,
    time_s: f64,
    azimuth_deg: f64,
}

/// `frame_index,time_s,azimuth_deg`.
pub fn write_truth_csv(path: impl AsRef<Path>, azimuths: &[f64], times: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (frame_index, (&azimuth_deg, &time_s)) in azimuths.iter().zip(times).enumerate() {
        w.serialize(TruthRow {
            frame_index,
            time_s,
            azimuth_deg,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut az = Vec::new();
    let mut times = Vec::new();
    for (i, row) in r.deserialize::<TruthRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.frame_index != i {
            return Err(Error::format(
                "truth CSV",
                format!("row {i} has frame index {}", row.frame_index),
            ));
        }
        az.push(row.azimuth_deg);
        times.push(row.time_s);
    }
    Ok((az, times))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format("CSV", format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalPlacement {
    pub azimuth_deg: f64,
    pub distance_m: f64,
}

impl Default for ExternalPlacement {
    fn default() -> Self {
        Self {
            azimuth_deg: 45.0,
            distance_m: 1.6,
        }
    }
}

/// Cartesian product of scene and estimator settings. Every scene cell is
/// rendered once and shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMatrix {
    pub snr_db: Vec<f64>,
    #[serde(default = "default_reverb")]
    pub reverb: Vec<Option<ReverbProxy>>,
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_placements")]
    pub external_mics: Vec<ExternalPlacement>,
    pub source_azimuths: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub noise_field: NoiseField,
    #[serde(default = "default_sweep_run")]
    pub run: RunConfig,
}

fn default_reverb() -> Vec<Option<ReverbProxy>> {
    vec![None]
}

fn default_placements() -> Vec<ExternalPlacement> {
    vec![ExternalPlacement::default()]
}

fn default_duration() -> f64 {
    30.0
}

fn default_sweep_run() -> RunConfig {
    RunConfig::static_default(Estimator::CsHead)
}

impl SweepMatrix {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("snr_db", self.snr_db.is_empty()),
            ("reverb", self.reverb.is_empty()),
            ("estimators", self.estimators.is_empty()),
            ("external_mics", self.external_mics.is_empty()),
            ("source_azimuths", self.source_azimuths.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::config(format!("sweep axis {name} is empty")));
        }
        self.run.validate()
    }

    fn scene(&self, cell: &SceneCell) -> SceneSpec {
        let mut spec = SceneSpec::static_preset(cell.azimuth_deg, Some(cell.snr_db), cell.seed);
        spec.geometry = ArrayGeometry::binaural().with_external_polar(cell.external.azimuth_deg, cell.external.distance_m);
        spec.reverb_proxy = cell.reverb;
        spec.duration_s = self.duration_s;
        spec.noise_field = self.noise_field.clone();
        spec.stft = self.run.stft;
        spec
    }
}

/// One rendered scene; `snr_db` is the level it is first rendered at.
#[derive(Debug, Clone, Copy)]
struct SceneCell {
    snr_db: f64,
    reverb: Option<ReverbProxy>,
    external: ExternalPlacement,
    azimuth_deg: f64,
    seed: u64,
}

/// One line of the sweep table. `source_azimuth_deg` is empty on rows that
/// average over all source positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub drr_db: Option<f64>,
    pub t60_s: Option<f64>,
    pub estimator: Estimator,
    pub ext_azimuth_deg: f64,
    pub ext_distance_m: f64,
    pub source_azimuth_deg: Option<f64>,
    pub runs: usize,
    pub failures: usize,
    pub accuracy_pct: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn is_average(&self) -> bool {
        self.source_azimuth_deg.is_none()
    }
}

/// Runs the whole matrix. A failing cell is recorded in its rows and the
/// sweep continues. Each scene is rendered once and remixed for every SNR.
pub fn sweep(matrix: &SweepMatrix) -> Result<Vec<SweepRow>> {
    matrix.validate()?;
    let head = ArrayGeometry::binaural();
    let db = generate_prototypes(
        &head,
        &default_directions(),
        crate::stft::DEFAULT_SAMPLE_RATE,
        matrix.run.stft.fft_size(),
    )?;
    let mut cells = Vec::new();
    for &reverb in &matrix.reverb {
        for &external in &matrix.external_mics {
            for &azimuth_deg in &matrix.source_azimuths {
                for &seed in &matrix.seeds {
                    cells.push(SceneCell {
                        snr_db: matrix.snr_db[0],
                        reverb,
                        external,
                        azimuth_deg,
                        seed,
                    });
                }
            }
        }
    }
    // results[cell][snr]
    let results: Vec<Vec<CellOutcome>> = cells.par_iter().map(|cell| sweep_cell(matrix, cell, &db)).collect();

    let mut rows = Vec::new();
    let seeds = matrix.seeds.len();
    let positions = matrix.source_azimuths.len();
    let group = positions * seeds;
    for (si, &snr_db) in matrix.snr_db.iter().enumerate() {
        for (g, chunk) in results.chunks(group).enumerate() {
            let cell = cells[g * group];
            for (j, &estimator) in matrix.estimators.iter().enumerate() {
                let row = |source_azimuth_deg: Option<f64>, outcomes: &[&CellOutcome]| {
                    let values: Vec<f64> = outcomes.iter().filter_map(|r| r.as_ref().ok().map(|v| v[j])).collect();
                    let error = outcomes.iter().find_map(|r| r.as_ref().err().cloned());
                    let (mean, std) = mean_std(&values);
                    SweepRow {
                        snr_db,
                        drr_db: cell.reverb.map(|r| r.drr_db),
                        t60_s: cell.reverb.map(|r| r.t60_s),
                        estimator,
                        ext_azimuth_deg: cell.external.azimuth_deg,
                        ext_distance_m: cell.external.distance_m,
                        source_azimuth_deg,
                        runs: outcomes.len(),
                        failures: outcomes.len() - values.len(),
                        accuracy_pct: mean,
                        accuracy_std: std,
                        error,
                    }
                };
                for (p, &az) in matrix.source_azimuths.iter().enumerate() {
                    let outcomes: Vec<_> = chunk[p * seeds..(p + 1) * seeds].iter().map(|c| &c[si]).collect();
                    rows.push(row(Some(az), &outcomes));
                }
                if positions > 1 {
                    let outcomes: Vec<_> = chunk.iter().map(|c| &c[si]).collect();
                    rows.push(row(None, &outcomes));
                }
            }
        }
    }
    Ok(rows)
}

/// Accuracy per estimator, or the error message of a failed cell.
type CellOutcome = std::result::Result<Vec<f64>, String>;

fn sweep_cell(matrix: &SweepMatrix, cell: &SceneCell, db: &PrototypeDatabase) -> Vec<CellOutcome> {
    let spec = matrix.scene(cell);
    let base = match synthesize(&spec) {
        Ok(s) => s,
        Err(e) => return vec![Err(e.to_string()); matrix.snr_db.len()],
    };
    let front = spec.geometry.front_pair();
    matrix
        .snr_db
        .iter()
        .map(|&snr| {
            let scene = base.with_snr(snr, &front)?;
            let outputs = run_scene(&matrix.run, &matrix.estimators, &scene, db)?;
            outputs
                .iter()
                .map(|o| evaluate_run(o, &scene.truth_doa, &matrix.run).map(|m| m.accuracy_pct))
                .collect::<Result<Vec<f64>>>()
        })
        .map(|r| r.map_err(|e| e.to_string()))
        .collect()
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Accuracy versus SNR, one series per estimator/reverb/placement, taken
/// from the position-averaged rows (or the only position).
pub fn write_plot_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let single_position = !rows.iter().any(SweepRow::is_average);
    let mut out = String::from("series,snr_db,accuracy_pct\n");
    for row in rows.iter().filter(|r| single_position || r.is_average()) {
        let mut series = row.estimator.name().to_string();
        if let (Some(d), Some(t)) = (row.drr_db, row.t60_s) {
            series.push_str(&format!("/drr{d}dB-t60{t}s"));
        }
        series.push_str(&format!("/ext{}deg-{}m", row.ext_azimuth_deg, row.ext_distance_m));
        let acc = row.accuracy_pct.map(|a| format!("{a:.4}")).unwrap_or_default();
        out.push_str(&format!("{series},{},{acc}\n", row.snr_db));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(az: f64) -> DoaEstimate {
        DoaEstimate {
            azimuth_deg: az,
            cost: 0.1,
            valid: true,
        }
    }

    #[test]
    fn wrap_around_error() {
        assert_eq!(angular_error(175.0, -180.0), 5.0);
        assert_eq!(angular_error(-175.0, 175.0), 10.0);
        assert_eq!(angular_error(0.0, 180.0), 180.0);
        assert_eq!(angular_error(30.0, 30.0), 0.0);
    }

    #[test]
    fn invalid_frames_are_misses() {
        let e = [est(0.0), DoaEstimate::invalid(), est(10.0), est(4.0)];
        let t = [0.0; 4];
        assert_eq!(accuracy(&e, &t, 5.0).unwrap(), 50.0);
        assert!(accuracy(&[], &[], 5.0).is_err());
        assert!(accuracy(&e, &t[..3], 5.0).is_err());
    }

    #[test]
    fn metrics_window() {
        let e = [est(90.0), est(0.0), DoaEstimate::invalid(), est(3.0)];
        let m = evaluate(&e, &[0.0; 4], EvalWindow::SecondHalf.range(4, 0), 5.0).unwrap();
        assert_eq!(m.frames_scored, 2);
        assert_eq!(m.invalid_frames, 1);
        assert_eq!(m.accuracy_pct, 50.0);
        assert_eq!(m.rms_error_deg, Some(3.0));
        assert_eq!(EvalWindow::AfterWarmup.range(10, 63), 10..10);
        assert!(evaluate(&e, &[0.0; 4], 4..4, 5.0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("doa.csv");
        let e = vec![est(-35.0), DoaEstimate::invalid(), est(175.0)];
        let times = vec![0.016, 0.032, 0.048];
        write_doa_csv(&p, &e, &times).unwrap();
        let (back, t) = read_doa_csv(&p).unwrap();
        assert_eq!(t, times);
        assert_eq!(back[0], e[0]);
        assert!(!back[1].valid);
        assert_eq!(back[2], e[2]);

        let q = dir.path().join("truth.csv");
        write_truth_csv(&q, &[1.0, 2.0], &[0.0, 0.1]).unwrap();
        assert_eq!(read_truth_csv(&q).unwrap(), (vec![1.0, 2.0], vec![0.0, 0.1]));
    }
}
