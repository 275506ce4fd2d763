use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tssto_core::io::{read_masks, read_stack, write_json, write_masks, write_stack};
use tssto_core::mask::{coverage, BandFusion};
use tssto_core::metrics::evaluate;
use tssto_core::pipeline::write_remove_outputs;
use tssto_core::simulate::{apply_contamination, ContaminationConfig, ShapeConfig, PRESET_COVERAGES};
use tssto_core::synthetic::{contamination_masks, piecewise_scene, SceneConfig};
use tssto_core::{par, run_remove, ImageStack, PixelFormat, RemoveConfig};

#[derive(Parser)]
#[command(name = "tssto", version, about = "Thick cloud and shadow removal for multitemporal image stacks")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "TSSTO_THREADS")]
    threads: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paint simulated clouds on a clean stack, one output per coverage.
    Simulate(SimulateArgs),
    /// Remove clouds and shadows from a stack.
    Remove(RemoveArgs),
    /// Score a restored stack against a reference.
    Evaluate(EvaluateArgs),
    /// Write a synthetic piecewise-constant clean stack.
    Scene(SceneArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Manifest of the clean stack.
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cloud coverages in percent, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    coverage: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frames to contaminate; defaults to every odd-indexed frame.
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
    /// Shadow displacement from the cloud as `rows,cols`.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    shadow_offset: Option<Vec<isize>>,
    #[arg(long)]
    cloud_level: Option<f64>,
    #[arg(long)]
    texture: Option<f64>,
    #[arg(long)]
    shadow_factor: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Any,
    Mean,
}

#[derive(Args)]
struct RemoveArgs {
    /// Manifest of the contaminated stack.
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with any subset of the configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Per-iteration growth factor of mu.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    tau_cloud: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau_shadow: Option<f64>,
    #[arg(long, value_enum)]
    fusion: Option<Fusion>,
    #[arg(long)]
    min_region: Option<usize>,
    #[arg(long)]
    dilation: Option<usize>,
    /// Stop after clean-area substitution.
    #[arg(long)]
    skip_cloning: bool,
    /// Directory of frameNNN.pgm masks to use instead of thresholding.
    #[arg(long)]
    masks_in: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Manifest of the ground-truth stack.
    reference: PathBuf,
    /// Manifest of the stack to score.
    test: PathBuf,
    /// Mask directory selecting the repaired area.
    #[arg(long)]
    scope_masks: Option<PathBuf>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    F32le,
    U16le,
    U8,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    #[arg(long, default_value_t = 3)]
    bands: usize,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 14)]
    cells: usize,
    /// Relative brightness change per frame.
    #[arg(long, default_value_t = 0.02)]
    drift: f64,
    #[arg(long, default_value_t = 2015)]
    seed: u64,
    #[arg(long, value_enum, default_value = "f32le")]
    format: Format,
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
}

enum Failure {
    Usage(String),
    Core(tssto_core::Error),
}

impl From<tssto_core::Error> for Failure {
    fn from(e: tssto_core::Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => par::install(n, || dispatch(cli.command)),
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Remove(a) => remove(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Scene(a) => scene(a),
    }
}

#[derive(Serialize)]
struct SweepEntry {
    coverage_pct: f64,
    manifest: PathBuf,
    truth_masks: PathBuf,
    /// Achieved cloud fraction on each contaminated frame.
    achieved: Vec<f64>,
}

#[derive(Serialize)]
struct SweepIndex {
    clean: PathBuf,
    seed: u64,
    frames: Vec<usize>,
    runs: Vec<SweepEntry>,
}

fn coverage_dir(pct: f64) -> String {
    format!("cov{pct:05.2}")
}

fn simulate(a: SimulateArgs) -> Outcome {
    let coverages = match a.coverage {
        None => PRESET_COVERAGES.iter().map(|c| (c * 1e4).round() / 100.0).collect(),
        Some(list) if list.is_empty() => return Err(Failure::Usage("--coverage needs at least one value".into())),
        Some(list) => list,
    };
    let clean = read_stack(&a.clean)?;
    let dims = clean.dims();
    let frames = a.frames.unwrap_or_else(|| (1..dims.t).step_by(2).collect());
    if let Some(&bad) = frames.iter().find(|&&k| k >= dims.t) {
        return Err(Failure::Core(tssto_core::Error::InvalidInput(format!(
            "frame {bad} out of range for {} frames",
            dims.t
        ))));
    }
    let shape = ShapeConfig {
        shadow_offset: a.shadow_offset.map(|v| (v[0], v[1])),
        ..ShapeConfig::default()
    };
    let defaults = ContaminationConfig::default();
    let contamination = ContaminationConfig {
        cloud_level: a.cloud_level.unwrap_or(defaults.cloud_level),
        texture_amplitude: a.texture.unwrap_or(defaults.texture_amplitude),
        shadow_factor: a.shadow_factor.unwrap_or(defaults.shadow_factor),
        seed: a.seed,
    };
    let mut runs = Vec::with_capacity(coverages.len());
    for pct in coverages {
        let masks = contamination_masks(dims, &frames, pct / 100.0, a.seed, &shape)?;
        let dirty = apply_contamination(&clean, &masks, &contamination)?;
        let dir = a.out.join(coverage_dir(pct));
        let manifest = write_stack(&dirty, &dir)?;
        let truth = dir.join("truth");
        write_masks(&masks, &truth)?;
        log::info!("{pct}% coverage written to {}", dir.display());
        runs.push(SweepEntry {
            coverage_pct: pct,
            manifest,
            truth_masks: truth,
            achieved: frames.iter().map(|&k| coverage(&masks[k]).0).collect(),
        });
    }
    let index = SweepIndex {
        clean: a.clean,
        seed: a.seed,
        frames,
        runs,
    };
    write_json(&a.out.join("sweep.json"), &index)?;
    Ok(())
}

fn load_config(path: &Path) -> Result<RemoveConfig, tssto_core::Error> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => tssto_core::Error::MissingFile { path: path.to_path_buf() },
        _ => tssto_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    serde_json::from_str(&text).map_err(|e| tssto_core::Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then explicit flags.
fn effective_config(a: &RemoveArgs) -> Result<RemoveConfig, tssto_core::Error> {
    let mut cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => RemoveConfig::default(),
    };
    let s = &mut cfg.solver;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut s.lambda1, a.lambda1);
    set(&mut s.lambda2, a.lambda2);
    set(&mut s.lambda3, a.lambda3);
    if a.lambda4.is_some() {
        s.lambda4 = a.lambda4;
    }
    set(&mut s.mu, a.mu);
    set(&mut s.rho, a.rho);
    set(&mut s.tol, a.tol);
    if let Some(n) = a.max_iters {
        s.max_iters = n;
    }
    let t = &mut cfg.thresholds;
    set(&mut t.tau_cloud, a.tau_cloud);
    set(&mut t.tau_shadow, a.tau_shadow);
    if let Some(f) = a.fusion {
        t.band_fusion = match f {
            Fusion::Any => BandFusion::Any,
            Fusion::Mean => BandFusion::Mean,
        };
    }
    if let Some(n) = a.min_region {
        t.min_region_px = n;
    }
    if let Some(n) = a.dilation {
        t.dilation_radius_px = n;
    }
    cfg.skip_cloning |= a.skip_cloning;
    Ok(cfg)
}

fn remove(a: RemoveArgs) -> Outcome {
    let cfg = effective_config(&a)?;
    let stack = read_stack(&a.manifest)?;
    let masks = a
        .masks_in
        .as_deref()
        .map(|dir| read_masks(dir, stack.num_frames()))
        .transpose()?;
    let out = run_remove(&stack, &cfg, masks)?;
    for b in out.bands.iter().filter(|b| !b.converged) {
        log::warn!("band {} did not converge in {} iterations", b.band, b.iters_used);
    }
    if out.cloning.as_ref().is_some_and(|c| !c.all_converged()) {
        log::warn!("some Poisson solves stopped above tolerance; see report.json");
    }
    write_remove_outputs(&out, &cfg, &a.out)?;
    Ok(())
}

fn to_raw(stack: &ImageStack) -> Result<ImageStack, tssto_core::Error> {
    let peak = stack.meta.peak;
    stack.with_bands(stack.bands().iter().map(|b| b.scale(peak)).collect())
}

fn evaluate_cmd(a: EvaluateArgs) -> Outcome {
    let reference = read_stack(&a.reference)?;
    let test = read_stack(&a.test)?;
    reference.same_shape(&test)?;
    let scope = a
        .scope_masks
        .as_deref()
        .map(|dir| read_masks(dir, reference.num_frames()))
        .transpose()?;
    let report = evaluate(&to_raw(&reference)?, &to_raw(&test)?, scope.as_deref(), reference.meta.peak)?;
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| tssto_core::Error::Runtime(e.to_string()))?
        ),
    }
    Ok(())
}

fn scene(a: SceneArgs) -> Outcome {
    let cfg = SceneConfig {
        rows: a.rows,
        cols: a.cols,
        bands: a.bands,
        frames: a.frames,
        cells: a.cells,
        drift: a.drift,
        seed: a.seed,
    };
    let mut stack = piecewise_scene(&cfg)?;
    stack.meta.pixel_format = match a.format {
        Format::F32le => PixelFormat::F32Le,
        Format::U16le => PixelFormat::U16Le,
        Format::U8 => PixelFormat::U8,
    };
    if !(a.peak.is_finite() && a.peak > 0.0) {
        return Err(Failure::Usage("--peak must be positive".into()));
    }
    stack.meta.peak = a.peak;
    write_stack(&stack, &a.out)?;
    Ok(())
}
