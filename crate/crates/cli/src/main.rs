//! `grip`: calibrate, synchronize, estimate, simulate and score motion captures.
//!
//! Exit status is 0 on success, 1 when the data loads but violates an invariant
//! (a flat sync stream, numerical divergence) and 2 for missing or malformed input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grip_core::dynamics::{HumanoidModel, Terrain};
use grip_core::fixture::{generate, FixtureKind, FixtureSpec};
use grip_core::insole::ImuSite;
use grip_core::io::{
    checkpoint_from_jsonl, metrics_to_jsonl, model_from_jsonl, peek_format, sync_to_jsonl, terrain_from_jsonl,
    EstimateFile, PipelineConfig, RawBundle, RolloutFile, SequenceFile, ROLLOUT_FORMAT, SEQUENCE_FORMAT,
};
use grip_core::metrics::{segments, MetricReport};
use grip_core::par::{self, Exec};
use grip_core::pipeline::{
    calibrate_bundle, estimate_sequence, evaluate_motion, simulate_sequence, sync_sequence, EstimateSource, PolicyKind,
};
use grip_core::{GripError, Result};

#[derive(Parser, Debug)]
#[command(name = "grip", version, about = "Motion reconstruction from wearable IMUs and pressure insoles")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline configuration (TOML); flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// IMU count 2..6, optionally with `+pressure`.
    #[arg(long, global = true)]
    sensors: Option<String>,
    /// OA, OAV, OAVJglo or OAVJrel.
    #[arg(long, global = true)]
    ablation: Option<String>,
    #[arg(long, global = true)]
    segment_frames: Option<usize>,
    /// Process inputs one after another.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct Output {
    /// Output file (single input only).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Directory receiving one output per input, named after the input.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate raw device bundles into sequence files.
    Calibrate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Estimate per-device offsets against the motion labels.
    Sync {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
        /// Also write the shifted, trimmed sequence (single input only).
        #[arg(long)]
        aligned: Option<PathBuf>,
    },
    /// Run the kinematic estimator over sequences.
    Estimate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Use the stored ground truth (plus configured noise).
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        oracle: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Track estimates with the simulated humanoid.
    Simulate {
        #[arg(long = "seq", required = true)]
        seqs: Vec<PathBuf>,
        /// One estimate file per `--seq`, in the same order.
        #[arg(long = "estimate", required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides the terrain stored in the sequence.
        #[arg(long)]
        terrain: Option<PathBuf>,
        /// `fixture` (PD tracking) or `limp` (zero torques).
        #[arg(long, default_value = "fixture")]
        policy: String,
        #[command(flatten)]
        output: Output,
    },
    /// Score predicted motion (sequence or rollout) against ground truth.
    Evaluate {
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        /// One ground-truth sequence per `--pred`, in the same order.
        #[arg(long = "gt", required = true)]
        gts: Vec<PathBuf>,
        #[arg(long)]
        terrain: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Generate a synthetic capture: `<kind>.raw.jsonl` and `<kind>.seq.jsonl`.
    Fixture {
        /// standing, walking or jump.
        kind: String,
        #[arg(long)]
        frames: Option<usize>,
        /// Per-device lag in frames, comma separated (jump default: 10,-5,0,25).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        offsets: Option<Vec<i64>>,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| GripError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| GripError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| GripError::Io(format!("{}: {e}", path.display())))
}

/// Prefix load errors with the file they came from, keeping the variant.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        GripError::Format(m) => GripError::Format(format!("{}: {m}", path.display())),
        GripError::MissingContext(m) => GripError::MissingContext(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_toml(&read(path)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &common.sensors {
        cfg.sensors = s.clone();
    }
    if let Some(a) = &common.ablation {
        cfg.ablation = a.clone();
    }
    if let Some(n) = common.segment_frames {
        cfg.segment_frames = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().filter(|s| !s.is_empty()).unwrap_or("out").to_string()
}

/// One destination per input: `--out` for a single input, else `<out-dir>/<stem><suffix>`.
fn destinations(inputs: &[PathBuf], output: &Output, suffix: &str) -> Result<Vec<PathBuf>> {
    let bad = |reason: &str| GripError::InvalidConfig { key: "out".into(), reason: reason.into() };
    match (&output.out, &output.out_dir) {
        (Some(_), Some(_)) => Err(bad("give either --out or --out-dir")),
        (Some(out), None) if inputs.len() == 1 => Ok(vec![out.clone()]),
        (Some(_), None) => Err(bad("--out takes a single input; use --out-dir")),
        (None, Some(dir)) => {
            let dests: Vec<PathBuf> = inputs.iter().map(|p| dir.join(format!("{}{suffix}", stem(p)))).collect();
            for (i, d) in dests.iter().enumerate() {
                if dests[..i].contains(d) {
                    return Err(bad(&format!("two inputs map to {}", d.display())));
                }
            }
            Ok(dests)
        }
        (None, None) => Err(bad("missing --out or --out-dir")),
    }
}

fn paired(a: &[PathBuf], b: &[PathBuf], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(GripError::InvalidConfig { key: what.into(), reason: format!("{} inputs for {} sequences", b.len(), a.len()) });
    }
    Ok(())
}

/// Run one job per input and report the first failure in input order.
fn run_jobs<T: Sync>(exec: Exec, jobs: &[T], f: impl Fn(&T) -> Result<()> + Sync + Send) -> Result<()> {
    par::map(exec, jobs, f).into_iter().collect()
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn calibrate(cfg: &PipelineConfig, exec: Exec, inputs: &[PathBuf], output: &Output) -> Result<()> {
    let dests = destinations(inputs, output, ".seq.jsonl")?;
    let jobs: Vec<_> = inputs.iter().zip(&dests).collect();
    run_jobs(exec, &jobs, |(input, dest)| {
        let raw = in_file(input, RawBundle::from_jsonl(&read(input)?))?;
        let seq = in_file(input, calibrate_bundle(&raw, &cfg.insole, Exec::Sequential))?;
        write(dest, &seq.to_jsonl()?)
    })
}

fn sync(cfg: &PipelineConfig, exec: Exec, inputs: &[PathBuf], output: &Output, aligned: Option<&Path>) -> Result<()> {
    let dests = destinations(inputs, output, ".sync.jsonl")?;
    let aligned_dests: Vec<Option<PathBuf>> = match (aligned, &output.out_dir) {
        (Some(_), _) if inputs.len() > 1 => {
            return Err(GripError::InvalidConfig { key: "aligned".into(), reason: "takes a single input; use --out-dir".into() })
        }
        (Some(p), _) => vec![Some(p.to_path_buf())],
        (None, Some(dir)) => inputs.iter().map(|p| Some(dir.join(format!("{}.aligned.jsonl", stem(p))))).collect(),
        (None, None) => vec![None; inputs.len()],
    };
    let jobs: Vec<_> = inputs.iter().zip(&dests).zip(&aligned_dests).collect();
    let flat: Vec<Result<Vec<(ImuSite, f64)>>> = par::map(exec, &jobs, |((input, dest), aligned)| {
        let seq = in_file(input, SequenceFile::from_jsonl(&read(input)?))?;
        let (report, synced) = in_file(input, sync_sequence(&seq, cfg.max_lag, Exec::Sequential))?;
        write(dest, &sync_to_jsonl(&report)?)?;
        if let Some(path) = aligned {
            write(path, &synced.to_jsonl()?)?;
        }
        report.flat.iter().map(|&site| Ok((site, variance(&seq.stream(site)?.vertical_accel())))).collect()
    });
    let mut worst = None;
    for (input, r) in inputs.iter().zip(flat) {
        for (site, var) in r? {
            eprintln!("warning: {}: {site:?} stream is flat, offset left at 0", input.display());
            worst.get_or_insert(var);
        }
    }
    match worst {
        Some(variance) => Err(GripError::FlatSignal { variance }),
        None => Ok(()),
    }
}

fn estimate(
    cfg: &PipelineConfig,
    exec: Exec,
    seed: u64,
    inputs: &[PathBuf],
    checkpoint: Option<&Path>,
    output: &Output,
) -> Result<()> {
    let dests = destinations(inputs, output, ".est.jsonl")?;
    let net = match checkpoint {
        Some(path) => Some(in_file(path, checkpoint_from_jsonl(&read(path)?))?),
        None => None,
    };
    let jobs: Vec<_> = inputs.iter().zip(&dests).collect();
    run_jobs(exec, &jobs, |(input, dest)| {
        let seq = in_file(input, SequenceFile::from_jsonl(&read(input)?))?;
        let source = match &net {
            Some(est) => EstimateSource::Checkpoint(est),
            None => EstimateSource::Oracle { seed },
        };
        let file = in_file(input, estimate_sequence(&seq, source, cfg))?;
        write(dest, &file.to_jsonl()?)
    })
}

struct SimulateArgs<'a> {
    seqs: &'a [PathBuf],
    estimates: &'a [PathBuf],
    model: Option<&'a Path>,
    terrain: Option<&'a Path>,
    policy: &'a str,
}

fn simulate(cfg: &PipelineConfig, exec: Exec, seed: u64, args: SimulateArgs, output: &Output) -> Result<()> {
    paired(args.seqs, args.estimates, "estimate")?;
    let policy = PolicyKind::parse(args.policy)?;
    let dests = destinations(args.seqs, output, ".rollout.jsonl")?;
    let model = match args.model {
        Some(path) => in_file(path, model_from_jsonl(&read(path)?))?,
        None => HumanoidModel::smpl_default(),
    };
    let terrain = match args.terrain {
        Some(path) => Some(in_file(path, terrain_from_jsonl(&read(path)?))?),
        None => None,
    };
    let jobs: Vec<_> = args.seqs.iter().zip(args.estimates).zip(&dests).collect();
    run_jobs(exec, &jobs, |((seq_path, est_path), dest)| {
        let seq = in_file(seq_path, SequenceFile::from_jsonl(&read(seq_path)?))?;
        let est = in_file(est_path, EstimateFile::from_jsonl(&read(est_path)?))?;
        let terrain = terrain.clone().or_else(|| seq.header.terrain.clone()).unwrap_or_else(Terrain::flat);
        let rollout = simulate_sequence(&seq, &est.estimates(), model.clone(), terrain.clone(), cfg, policy, seed)?;
        write(dest, &RolloutFile::from_rollout(&rollout, policy.name(), Some(terrain)).to_jsonl()?)
    })
}

fn evaluate(
    cfg: &PipelineConfig,
    exec: Exec,
    preds: &[PathBuf],
    gts: &[PathBuf],
    terrain: Option<&Path>,
    output: &Output,
) -> Result<()> {
    paired(preds, gts, "gt")?;
    let dests = destinations(preds, output, ".metrics.jsonl")?;
    let terrain = match terrain {
        Some(path) => Some(in_file(path, terrain_from_jsonl(&read(path)?))?),
        None => None,
    };
    let jobs: Vec<_> = preds.iter().zip(gts).zip(&dests).collect();
    let reports = par::map(exec, &jobs, |((pred_path, gt_path), dest)| -> Result<MetricReport> {
        let text = read(pred_path)?;
        let no_motion = |p: &Path| GripError::MissingContext(format!("{}: sequence has no motion labels", p.display()));
        let (pred, falls) = match in_file(pred_path, peek_format(&text))?.as_str() {
            ROLLOUT_FORMAT => {
                let r = in_file(pred_path, RolloutFile::from_jsonl(&text))?;
                (r.motion(cfg.insole.contact_threshold)?, Some(r.header.falls))
            }
            SEQUENCE_FORMAT => {
                let s = in_file(pred_path, SequenceFile::from_jsonl(&text))?;
                (s.motion()?.ok_or_else(|| no_motion(pred_path))?, None)
            }
            other => {
                return Err(GripError::Format(format!(
                    "{}: expected a {SEQUENCE_FORMAT} or {ROLLOUT_FORMAT} file, got {other}",
                    pred_path.display()
                )))
            }
        };
        let gt_seq = in_file(gt_path, SequenceFile::from_jsonl(&read(gt_path)?))?;
        let gt = gt_seq.motion()?.ok_or_else(|| no_motion(gt_path))?;
        let terrain = terrain.clone().or_else(|| gt_seq.header.terrain.clone()).unwrap_or_else(Terrain::flat);
        let falls = falls.map(|f| [f]);
        let report = evaluate_motion(
            &pred,
            &gt,
            &terrain,
            cfg.segment_frames,
            falls.is_some(),
            falls.as_ref().map(|f| &f[..]),
            Exec::Sequential,
        )?;
        let n = segments(gt.len(), cfg.segment_frames).len();
        write(dest, &metrics_to_jsonl(&report, cfg.segment_frames, n)?)?;
        Ok(report)
    });
    for (pred, report) in preds.iter().zip(reports) {
        let report = report?;
        let values = serde_json::to_value(&report).map_err(GripError::from)?;
        let cells: Vec<String> = MetricReport::COLUMNS
            .iter()
            .filter_map(|(name, unit)| values.get(*name).and_then(|v| v.as_f64()).map(|v| format!("{name} {v:.3} {unit}")))
            .collect();
        println!("{}: {}", pred.display(), cells.join(", "));
    }
    Ok(())
}

fn fixture(seed: u64, kind: &str, frames: Option<usize>, offsets: Option<Vec<i64>>, out_dir: &Path) -> Result<()> {
    let kind: FixtureKind = kind.parse()?;
    let mut spec = FixtureSpec::new(kind, seed);
    if let Some(n) = frames {
        spec.frames = n;
    }
    if let Some(o) = offsets {
        spec.offsets = o;
    }
    let f = generate(&spec)?;
    write(&out_dir.join(format!("{}.raw.jsonl", kind.name())), &f.raw.to_jsonl()?)?;
    write(&out_dir.join(format!("{}.seq.jsonl", kind.name())), &f.sequence.to_jsonl()?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let exec = if cli.common.sequential { Exec::Sequential } else { Exec::Parallel };
    let seed = cli.common.seed;
    match &cli.command {
        Command::Calibrate { inputs, output } => calibrate(&cfg, exec, inputs, output),
        Command::Sync { inputs, output, aligned } => sync(&cfg, exec, inputs, output, aligned.as_deref()),
        Command::Estimate { inputs, oracle: _, checkpoint, output } => {
            estimate(&cfg, exec, seed, inputs, checkpoint.as_deref(), output)
        }
        Command::Simulate { seqs, estimates, model, terrain, policy, output } => {
            let args =
                SimulateArgs { seqs, estimates, model: model.as_deref(), terrain: terrain.as_deref(), policy };
            simulate(&cfg, exec, seed, args, output)
        }
        Command::Evaluate { preds, gts, terrain, output } => evaluate(&cfg, exec, preds, gts, terrain.as_deref(), output),
        Command::Fixture { kind, frames, offsets, out_dir } => fixture(seed, kind, *frames, offsets.clone(), out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
