//! `egolabel` command-line interface.
//!
//! Exit codes: 0 success, 2 schema or input-format error, 3 every window
//! failed to optimize, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use egolabel::energy::EnergyWeights;
use egolabel::geometry::Calibration;
use egolabel::metrics::evaluate;
use egolabel::optimize::{OptimizerConfig, RotationMode};
use egolabel::par::{self, Execution};
use egolabel::pipeline::{
    bootstrap, generate_pseudo_labels, read_label_poses, PipelineConfig, PseudoLabelSet, ReferenceEstimator,
    SequenceDataset,
};
use egolabel::prior::MotionPrior;
use egolabel::skeleton::{BoneTopology, PoseSequence};
use egolabel::synth::{gen_scenario, MotionKind, NoiseConfig, Occlusion, ScenarioConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "egolabel", version, about = "Pseudo labels for egocentric 3D pose from multi-view optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture with ground truth.
    Synth(SynthArgs),
    /// Optimize every window of a dataset and write pseudo labels.
    Optimize(OptimizeArgs),
    /// Alternate the reference estimator and the optimizer.
    Bootstrap(BootstrapArgs),
    /// PA-MPJPE and BA-MPJPE of predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionArg {
    WalkCycle,
    RandomSmooth,
    Static,
}

#[derive(Clone, Copy, ValueEnum)]
enum OcclusionArg {
    None,
    LowerBodyEgo,
    HandsExt,
}

#[derive(Clone, Copy, ValueEnum)]
enum RotationArg {
    AxisAngle,
    RawMatrix,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "walk-cycle")]
    motion: MotionArg,
    #[arg(long, value_enum, default_value = "none")]
    occlusion: OcclusionArg,
    /// Egocentric 3D initialization noise, mm.
    #[arg(long)]
    noise_ego3d: Option<f64>,
    /// Egocentric 2D keypoint noise, px.
    #[arg(long)]
    noise_ego2d: Option<f64>,
    /// External 2D keypoint noise, px.
    #[arg(long)]
    noise_ext2d: Option<f64>,
    /// External 3D pose noise, mm.
    #[arg(long)]
    noise_ext3d: Option<f64>,
    /// Multiplier on SLAM relative translations.
    #[arg(long, default_value_t = 1.0)]
    slam_scale: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    /// JSON-lines dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Calibration JSON; defaults to `calib.json` next to the dataset.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Run configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Energy weights JSON.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Motion prior JSON; its window must equal `--window`.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    rotation_mode: Option<RotationArg>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write per-window energy traces as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    run: OptimizeArgs,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    /// Blend factor of the reference estimator.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Ground-truth pose JSON for a per-iteration PA-MPJPE trace.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Pose JSON or `labels.jsonl`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Topology JSON defining the standard skeleton.
    #[arg(long)]
    topo: Option<PathBuf>,
    #[arg(long)]
    per_action: bool,
    #[arg(long)]
    json: bool,
}

/// Everything a run needs besides the data. All fields are optional in the
/// config file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    window: Option<usize>,
    stride: Option<usize>,
    optimizer: OptimizerConfig,
    weights: EnergyWeights,
    heatmap_width: Option<usize>,
    heatmap_height: Option<usize>,
    heatmap_sigma: Option<f64>,
    threads: Option<usize>,
}

/// Every window failed, so no labels exist.
#[derive(Debug)]
struct AllWindowsFailed;

impl std::fmt::Display for AllWindowsFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("optimization failed in every window")
    }
}

impl std::error::Error for AllWindowsFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<AllWindowsFailed>().is_some() {
        return 3;
    }
    match e.downcast_ref::<egolabel::Error>() {
        Some(egolabel::Error::Schema(_) | egolabel::Error::Json(_)) => 2,
        _ => 1,
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut noise = NoiseConfig::default();
    noise.ego_3d = a.noise_ego3d.unwrap_or(noise.ego_3d);
    noise.ego_2d = a.noise_ego2d.unwrap_or(noise.ego_2d);
    noise.ext_2d = a.noise_ext2d.unwrap_or(noise.ext_2d);
    noise.ext_3d = a.noise_ext3d.unwrap_or(noise.ext_3d);
    let config = ScenarioConfig {
        frames: a.frames,
        motion: match a.motion {
            MotionArg::WalkCycle => MotionKind::WalkCycle,
            MotionArg::RandomSmooth => MotionKind::RandomSmooth,
            MotionArg::Static => MotionKind::Static,
        },
        occlusion: match a.occlusion {
            OcclusionArg::None => Occlusion::None,
            OcclusionArg::LowerBodyEgo => Occlusion::LowerBodyEgo,
            OcclusionArg::HandsExt => Occlusion::HandsExt,
        },
        seed: a.seed,
        noise,
        slam_scale: a.slam_scale,
        ..Default::default()
    };
    let scenario = gen_scenario(&config)?;
    scenario
        .write(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}

struct Prepared {
    dataset: SequenceDataset,
    weights: EnergyWeights,
    prior: Option<MotionPrior>,
    pipeline: PipelineConfig,
    threads: Option<usize>,
}

fn read_json_file<T>(path: &Path, parse: impl Fn(&str) -> egolabel::Result<T>) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn prepare(a: &OptimizeArgs) -> Result<Prepared> {
    let mut config: RunConfig = match &a.config {
        Some(p) => read_json_file(p, |t| {
            serde_json::from_str(t).map_err(|e| egolabel::Error::Schema(format!("run config: {e}")))
        })?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.weights {
        config.weights = read_json_file(p, EnergyWeights::from_json)?;
    }
    if let Some(m) = a.rotation_mode {
        config.optimizer.rotation_mode = match m {
            RotationArg::AxisAngle => RotationMode::AxisAngle,
            RotationArg::RawMatrix => RotationMode::RawMatrix,
        };
    }
    if let Some(n) = a.max_iters {
        config.optimizer.max_iters = n;
    }
    config.optimizer.validate()?;
    config.weights.validate()?;

    let calib_path = match &a.calib {
        Some(p) => Some(p.clone()),
        None => {
            let sibling = a.dataset.with_file_name("calib.json");
            sibling.exists().then_some(sibling)
        }
    };
    let calibration = match calib_path {
        Some(p) => read_json_file(&p, Calibration::from_json)?,
        None => Calibration::default_synthetic(),
    };
    let dataset = SequenceDataset::load(&a.dataset, calibration)
        .with_context(|| format!("loading {}", a.dataset.display()))?;
    let prior = match &a.prior {
        Some(p) => Some(read_json_file(p, MotionPrior::from_json)?),
        None => None,
    };

    let defaults = PipelineConfig::default();
    let window = a.window.or(config.window).unwrap_or(defaults.window);
    let pipeline = PipelineConfig {
        window,
        stride: a.stride.or(config.stride).unwrap_or(window),
        optimizer: config.optimizer,
        heatmap_width: config.heatmap_width.unwrap_or(defaults.heatmap_width),
        heatmap_height: config.heatmap_height.unwrap_or(defaults.heatmap_height),
        heatmap_sigma: config.heatmap_sigma.unwrap_or(defaults.heatmap_sigma),
        execution: Execution::Parallel,
    };
    Ok(Prepared {
        dataset,
        weights: config.weights,
        prior,
        pipeline,
        threads: a.threads.or(config.threads),
    })
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(match threads {
        Some(n) => par::with_threads(n, f)?,
        None => f(),
    })
}

#[derive(Serialize)]
struct WindowSummary {
    offset: usize,
    len: usize,
    converged: Option<bool>,
    iterations: Option<usize>,
    initial_energy: Option<f64>,
    final_energy: Option<f64>,
    error: Option<String>,
}

fn write_outputs(labels: &PseudoLabelSet, out: &Path, trace: Option<&Path>, frame_rate: f64) -> Result<()> {
    labels.write(out)?;
    labels.to_pose_sequence(frame_rate).save(out.join("poses.json"))?;
    let windows: Vec<WindowSummary> = labels
        .windows
        .iter()
        .map(|w| match &w.result {
            Ok(r) => WindowSummary {
                offset: w.offset,
                len: w.len,
                converged: Some(r.converged),
                iterations: Some(r.iterations_used),
                initial_energy: Some(r.initial_energy),
                final_energy: Some(r.final_energy),
                error: None,
            },
            Err(e) => WindowSummary {
                offset: w.offset,
                len: w.len,
                converged: None,
                iterations: None,
                initial_energy: None,
                final_energy: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    let summary = serde_json::json!({
        "labeled_fraction": labels.labeled_fraction(),
        "failed_windows": labels.failed_windows(),
        "windows": windows,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if let Some(path) = trace {
        let mut csv = String::new();
        for w in &labels.windows {
            if let Ok(r) = &w.result {
                for (i, line) in r.trace_csv().lines().enumerate() {
                    if i == 0 {
                        if csv.is_empty() {
                            csv.push_str("window,");
                            csv.push_str(line);
                            csv.push('\n');
                        }
                        continue;
                    }
                    csv.push_str(&format!("{},{line}\n", w.offset));
                }
            }
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if labels.all_windows_failed() {
        return Err(AllWindowsFailed.into());
    }
    Ok(())
}

fn frame_rate_of(dataset_path: &Path) -> f64 {
    // Frame rate only feeds the pose file header; the synthetic default is used
    // unless a ground-truth sidecar says otherwise.
    PoseSequence::load(dataset_path.with_file_name("gt.json"))
        .map(|g| g.frame_rate)
        .unwrap_or(30.0)
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let p = prepare(&a)?;
    let topo = BoneTopology::standard();
    let labels = in_pool(p.threads, || {
        generate_pseudo_labels(&p.dataset, &p.weights, &topo, p.prior.as_ref(), &p.pipeline)
    })??;
    write_outputs(&labels, &a.out, a.trace.as_deref(), frame_rate_of(&a.dataset))?;
    println!(
        "{} windows ({} failed), {:.1}% of frames labeled, written to {}",
        labels.windows.len(),
        labels.failed_windows(),
        100.0 * labels.labeled_fraction(),
        a.out.display()
    );
    Ok(())
}

fn cmd_bootstrap(a: BootstrapArgs) -> Result<()> {
    let p = prepare(&a.run)?;
    let topo = BoneTopology::standard();
    let gt = match &a.gt {
        Some(path) => Some(read_json_file(path, PoseSequence::from_json)?),
        None => None,
    };
    let mut estimator = ReferenceEstimator::new(p.dataset.ego_3d_init(), a.alpha)?;
    let result = in_pool(p.threads, || {
        bootstrap(&p.dataset, &mut estimator, &p.weights, &topo, p.prior.as_ref(), &p.pipeline, a.iters, gt.as_ref())
    })??;
    write_outputs(&result.labels, &a.run.out, a.run.trace.as_deref(), frame_rate_of(&a.run.dataset))?;
    let report = serde_json::json!({
        "iterations": result.iterations,
        "pa_mpjpe_trace": result.pa_mpjpe_trace,
    });
    fs::write(a.run.out.join("bootstrap.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{} iterations, labels written to {}", result.iterations, a.run.out.display());
    for (i, v) in result.pa_mpjpe_trace.iter().enumerate() {
        println!("iteration {i}: PA-MPJPE {v:.3} mm");
    }
    Ok(())
}

fn load_predictions(path: &Path, gt: &PoseSequence) -> Result<PoseSequence> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let rows = read_label_poses(&text).with_context(|| format!("parsing {}", path.display()))?;
        if rows.len() != gt.len() {
            return Err(egolabel::Error::Schema(format!(
                "{} has {} frames, ground truth has {}",
                path.display(),
                rows.len(),
                gt.len()
            ))
            .into());
        }
        let mut seq = PoseSequence::new(rows.into_iter().map(|(_, p)| p).collect(), gt.frame_rate);
        seq.tags = gt.tags.clone();
        return Ok(seq);
    }
    PoseSequence::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let gt = read_json_file(&a.gt, PoseSequence::from_json)?;
    let pred = load_predictions(&a.pred, &gt)?;
    let topo = match &a.topo {
        Some(p) => read_json_file(p, BoneTopology::from_json)?,
        None => BoneTopology::standard(),
    };
    if a.per_action && gt.tags.is_none() {
        bail!(egolabel::Error::Schema("--per-action needs tags in the ground-truth file".into()));
    }
    let report = evaluate(&pred, &gt, &topo, a.per_action)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("PA-MPJPE {:.3} mm (median {:.3})", report.pa_mpjpe, report.pa_mpjpe_median);
    println!("BA-MPJPE {:.3} mm (median {:.3})", report.ba_mpjpe, report.ba_mpjpe_median);
    println!("frames used {}, skipped {}", report.frames_used, report.frames_skipped);
    if let Some(actions) = &report.per_action {
        for (name, b) in actions {
            println!("  {name}: PA {:.3} mm, BA {:.3} mm over {} frames", b.pa_mpjpe, b.ba_mpjpe, b.frames);
        }
    }
    Ok(())
}
