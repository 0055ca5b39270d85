use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::Value;

use rtf_doa::activity::LabelGrid;
use rtf_doa::doa::{generate_prototypes, PayloadEncoding, PrototypeDatabase};
use rtf_doa::eval::{
    evaluate, evaluate_run, read_doa_csv, read_truth_csv, run, scene_labels, sweep, write_doa_csv, write_plot_csv,
    write_sweep_csv, write_truth_csv, EvalWindow, RunConfig, SweepMatrix,
};
use rtf_doa::geometry::ArrayGeometry;
use rtf_doa::rtf::Estimator;
use rtf_doa::scene::{synthesize, SceneSpec};
use rtf_doa::stft::AudioClip;

/// Direction-of-arrival estimation for binaural hearing aids with an
/// external microphone.
#[derive(Parser)]
#[command(name = "rtfdoa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a free-field prototype database file.
    Prototypes(PrototypesArgs),
    /// Render a scene description to WAV files, truth CSV and oracle labels.
    Simulate(SimulateArgs),
    /// Estimate per-frame directions from a multichannel WAV file.
    Estimate(EstimateArgs),
    /// Score a DOA CSV against a truth CSV.
    Evaluate(EvaluateArgs),
    /// Run a matrix of simulated conditions and write a results table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PrototypesArgs {
    /// Output database file.
    #[arg(long)]
    out: PathBuf,
    /// Array geometry JSON; defaults to the built-in binaural layout.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 512)]
    fft_size: usize,
    /// Azimuth grid step in degrees, starting at −180°.
    #[arg(long, default_value_t = 5.0)]
    step_deg: f64,
    /// Multiply steering magnitudes by the spherical head-shadow term.
    #[arg(long)]
    head_shadow: bool,
    #[arg(long, value_enum, default_value_t = Encoding::Raw)]
    encoding: Encoding,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Raw,
    Base64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene description JSON (must contain a seed).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Oracle labelling margin: speech iff |X₁|² > margin·|N₁|².
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    margin_db: f64,
}

#[derive(Args)]
struct EstimateArgs {
    /// Multichannel WAV: head microphones first, optional external last.
    #[arg(long)]
    input: PathBuf,
    /// Prototype database file.
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Run configuration JSON; keys override the defaults, flags override keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Default set to start from.
    #[arg(long, value_enum, default_value_t = Preset::Static)]
    preset: Preset,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// Oracle label bitmap (required with the oracle detector).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    tau_y: Option<f64>,
    #[arg(long)]
    tau_n: Option<f64>,
    #[arg(long)]
    tolerance_deg: Option<f64>,
    /// Blend the noise covariance from the noisy covariance, as printed in
    /// the original derivation.
    #[arg(long)]
    faithful_eq26: bool,
    /// Also write the per-frame cost surface.
    #[arg(long)]
    cost_surface: bool,
    /// Truth CSV; when given, metrics are written as well.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Static,
    Moving,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Spp,
    Oracle,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    doa: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    tolerance_deg: f64,
    #[arg(long, value_enum, default_value_t = WindowArg::SecondHalf)]
    window: WindowArg,
    /// Frames skipped by the after-warmup window.
    #[arg(long, default_value_t = 63)]
    warmup_frames: usize,
    /// Metrics JSON output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    SecondHalf,
    All,
    AfterWarmup,
}

impl From<WindowArg> for EvalWindow {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::SecondHalf => EvalWindow::SecondHalf,
            WindowArg::All => EvalWindow::All,
            WindowArg::AfterWarmup => EvalWindow::AfterWarmup,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep matrix JSON.
    #[arg(long)]
    matrix: PathBuf,
    /// Results table.
    #[arg(long)]
    out: PathBuf,
    /// Accuracy-versus-SNR series for plotting.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prototypes(a) => prototypes(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures, 2 for everything else (bad arguments,
/// configuration or input files).
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<rtf_doa::Error>() {
        Some(rtf_doa::Error::Numerical(_)) => 3,
        _ => 2,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(rtf_doa::Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn prototypes(a: PrototypesArgs) -> Result<()> {
    let mut geometry = match &a.geometry {
        Some(p) => read_json::<ArrayGeometry>(p)?,
        None => ArrayGeometry::binaural(),
    };
    geometry.head_shadow |= a.head_shadow;
    if !(a.step_deg > 0.0 && a.step_deg <= 360.0) {
        return Err(rtf_doa::Error::Config(format!("grid step {} must be in (0, 360]", a.step_deg)).into());
    }
    let count = (360.0 / a.step_deg).round() as usize;
    let directions: Vec<f64> = (0..count).map(|i| -180.0 + a.step_deg * i as f64).collect();
    let db = generate_prototypes(&geometry, &directions, a.sample_rate, a.fft_size)?;
    let encoding = match a.encoding {
        Encoding::Raw => PayloadEncoding::Raw,
        Encoding::Base64 => PayloadEncoding::Base64,
    };
    db.write(&a.out, encoding)?;
    info!(
        "wrote {} directions × {} bins × {} mics to {}",
        db.num_directions(),
        db.num_bins(),
        db.num_mics(),
        a.out.display()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let raw: Value = serde_json::from_str(&text).map_err(rtf_doa::Error::from)?;
    if raw.get("seed").is_none() {
        bail!(rtf_doa::Error::Config("scene file must set \"seed\"".into()));
    }
    let spec: SceneSpec = serde_json::from_value(raw).map_err(rtf_doa::Error::from)?;
    create_dir(&a.out_dir)?;
    let scene = synthesize(&spec)?;
    scene.mixed.write_wav(a.out_dir.join("mixed.wav"))?;
    scene.clean.write_wav(a.out_dir.join("clean.wav"))?;
    scene.noise.write_wav(a.out_dir.join("noise.wav"))?;
    write_truth_csv(a.out_dir.join("truth.csv"), &scene.truth_doa, &scene.frame_times())?;
    let cfg = RunConfig {
        stft: spec.stft,
        oracle_margin_db: a.margin_db,
        ..RunConfig::static_default(Estimator::CwHead)
    };
    let labels = scene_labels(&scene, &cfg)?;
    labels.write(a.out_dir.join("labels.bin"))?;
    write_json(&a.out_dir.join("scene.json"), &spec)?;
    info!(
        "rendered {:.1} s, {} channels, {} frames ({:.1}% speech bins) to {}",
        scene.mixed.duration_s(),
        scene.mixed.channels(),
        scene.truth_doa.len(),
        100.0 * labels.speech_fraction(),
        a.out_dir.display()
    );
    Ok(())
}

/// Defaults, then the config file, then command-line flags.
fn resolve_run_config(a: &EstimateArgs) -> Result<RunConfig> {
    let base = match a.preset {
        Preset::Static => RunConfig::static_default(Estimator::CwHead),
        Preset::Moving => RunConfig::moving_default(Estimator::CwHead),
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = &a.config {
        let overlay: Value = read_json(path)?;
        if !overlay.is_object() {
            bail!(rtf_doa::Error::Config(format!("{} is not a JSON object", path.display())));
        }
        merge(&mut value, overlay);
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(rtf_doa::Error::from)?;
    if let Some(e) = a.estimator {
        cfg.estimator = e;
    }
    if let Some(d) = a.detector {
        cfg.detector = match d {
            DetectorArg::Spp => rtf_doa::eval::Detector::Spp,
            DetectorArg::Oracle => rtf_doa::eval::Detector::Oracle,
        };
    }
    if let Some(t) = a.tau_y {
        cfg.tau_y_s = t;
    }
    if let Some(t) = a.tau_n {
        cfg.tau_n_s = t;
    }
    if let Some(t) = a.tolerance_deg {
        cfg.tolerance_deg = t;
    }
    cfg.faithful_eq26 |= a.faithful_eq26;
    cfg.keep_cost_surface |= a.cost_surface;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

#[derive(Serialize)]
struct ResolvedRun<'a> {
    input: &'a Path,
    db: &'a Path,
    labels: Option<&'a Path>,
    truth: Option<&'a Path>,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct Timing {
    processing_s: f64,
    signal_s: f64,
    real_time_factor: f64,
    numerical_failures: u64,
    noise_covariance_reads: u64,
    warmup_frames: usize,
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let cfg = resolve_run_config(&a)?;
    create_dir(&a.out_dir)?;
    write_json(
        &a.out_dir.join("resolved_config.json"),
        &ResolvedRun {
            input: &a.input,
            db: &a.db,
            labels: a.labels.as_deref(),
            truth: a.truth.as_deref(),
            config: &cfg,
        },
    )?;
    let clip = AudioClip::read_wav(&a.input)?;
    let db = PrototypeDatabase::read(&a.db)?;
    let labels = a.labels.as_ref().map(LabelGrid::read).transpose()?;
    let out = run(&cfg, &clip, labels.as_ref(), &db)?;
    write_doa_csv(a.out_dir.join("doa.csv"), &out.estimates, &out.frame_times)?;
    if let Some(surface) = &out.cost_surface {
        surface.write_csv(a.out_dir.join("cost_surface.csv"))?;
    }
    write_json(
        &a.out_dir.join("timing.json"),
        &Timing {
            processing_s: out.processing_s,
            signal_s: out.signal_s,
            real_time_factor: out.real_time_factor(),
            numerical_failures: out.numerical_failures,
            noise_covariance_reads: out.noise_reads,
            warmup_frames: out.warmup_frames,
        },
    )?;
    let valid = out.estimates.iter().filter(|e| e.valid).count();
    info!(
        "{}: {valid}/{} valid frames, real-time factor {:.3}",
        cfg.estimator,
        out.estimates.len(),
        out.real_time_factor()
    );
    if let Some(truth_path) = &a.truth {
        let (truth, _) = read_truth_csv(truth_path)?;
        let metrics = evaluate_run(&out, &truth, &cfg)?;
        info!("accuracy {:.2}% within {}°", metrics.accuracy_pct, cfg.tolerance_deg);
        write_json(&a.out_dir.join("metrics.json"), &metrics)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let (estimates, _) = read_doa_csv(&a.doa)?;
    let (truth, _) = read_truth_csv(&a.truth)?;
    if !(a.tolerance_deg > 0.0) {
        bail!(rtf_doa::Error::Config("tolerance must be positive".into()));
    }
    let window = EvalWindow::from(a.window).range(estimates.len(), a.warmup_frames);
    let metrics = evaluate(&estimates, &truth, window, a.tolerance_deg)?;
    match &a.out {
        Some(path) => write_json(path, &metrics)?,
        None => println!("{}", serde_json::to_string_pretty(&metrics)?),
    }
    info!("accuracy {:.2}% over {} frames", metrics.accuracy_pct, metrics.frames_scored);
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let matrix: SweepMatrix = read_json(&a.matrix)?;
    let rows = sweep(&matrix)?;
    write_sweep_csv(&a.out, &rows)?;
    if let Some(plot) = &a.plot_data {
        write_plot_csv(plot, &rows)?;
    }
    let failed = rows.iter().filter(|r| r.failures > 0).count();
    info!("{} rows written to {} ({failed} with failed runs)", rows.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_3() {
        let e = anyhow::Error::from(rtf_doa::Error::Numerical("not positive definite".into())).context("estimating");
        assert_eq!(exit_code(&e), 3);
        let e = anyhow::Error::from(rtf_doa::Error::Config("bad".into()));
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }

    #[test]
    fn merge_replaces_leaves_and_keeps_siblings() {
        let mut base = serde_json::json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut base, serde_json::json!({"b": {"c": 5}, "e": true}));
        assert_eq!(base, serde_json::json!({"a": 1, "b": {"c": 5, "d": 3}, "e": true}));
    }
}
