//! Commands behind the `hno` binary.

pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hno_core::pde::{
    generate_dataset, split_path, Array, Container, DiffusionReactionConfig, GrfSpec,
    NavierStokesConfig, NavierStokesData, PdeDataset, ProblemConfig, Split,
};
use hno_core::train::{
    evaluate, predict_samples, train, Checkpoint, EvalReport, Resume, TrainConfig, TrainOptions,
};
use hno_core::{Error, Result};

use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Exit code for an error: refusals 3, runtime divergence 4, everything else 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::WouldOverwrite(_) => EXIT_REFUSED,
        Error::Diverged { .. } | Error::NonFiniteGradient(_) | Error::Unstable { .. } => {
            EXIT_DIVERGED
        }
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hno",
    version,
    about = "Hyena neural operator: data generation, training, evaluation, figures"
)]
pub struct Cli {
    /// Worker threads (falls back to HNO_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for data generation, or an override of the training config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate train/test splits into container files.
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Relative L2 report of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Truth/prediction figures for one sample.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemArg {
    DiffusionReaction,
    NavierStokes,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub problem: ProblemArg,
    /// Diffusion coefficient or viscosity (defaults 0.5 / 1e-3).
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Output grid points per axis (defaults 256 / 32).
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub test_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Time steps of the diffusion-reaction solver.
    #[arg(long, default_value_t = 200)]
    pub nt: usize,
    /// Fourier modes of the 1D initial conditions.
    #[arg(long, default_value_t = 8)]
    pub modes: usize,
    /// Predicted snapshots (the time horizon T).
    #[arg(long = "T", default_value_t = 10)]
    pub horizon: usize,
    /// Stored snapshots per sample, inputs plus horizon.
    #[arg(long, default_value_t = 20)]
    pub snapshots: usize,
    /// Solver grid per axis before striding (Navier-Stokes).
    #[arg(long, default_value_t = 64)]
    pub fine_resolution: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub dt: f64,
    /// Time between snapshots.
    #[arg(long, default_value_t = 1.0)]
    pub record_interval: f64,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a `last.ckpt`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs; the schedule keeps its full length.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or container file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Split to read when `--data` is a directory.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sample_index: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

/// `--threads`, else `HNO_THREADS`.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return if t == 0 {
            Err(Error::invalid("--threads must be positive"))
        } else {
            Ok(Some(t))
        };
    }
    match std::env::var("HNO_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| Error::invalid(format!("HNO_THREADS={v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command line; `args` is recorded in the manifest.
pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    if let Some(t) = threads {
        // a pool may already exist when several commands run in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, cli.seed.unwrap_or(0), threads, args),
        Command::Train(a) => cmd_train(&a, cli.seed, threads, args),
        Command::Eval(a) => cmd_eval(&a, threads, args),
        Command::Plot(a) => cmd_plot(&a, threads, args),
    }
}

pub fn problem_config(a: &GenerateArgs) -> Result<ProblemConfig> {
    if a.samples == 0 || a.test_samples == 0 {
        return Err(Error::invalid(
            "--samples and --test-samples must be positive",
        ));
    }
    let cfg = match a.problem {
        ProblemArg::DiffusionReaction => ProblemConfig::DiffusionReaction {
            solver: DiffusionReactionConfig {
                nu: a.nu.unwrap_or(0.5),
                rho: a.rho,
                nx: a.resolution.unwrap_or(256),
                nt: a.nt,
                t_final: 1.0,
            },
            modes: a.modes,
        },
        ProblemArg::NavierStokes => {
            if a.horizon == 0 || a.horizon >= a.snapshots {
                return Err(Error::invalid(format!(
                    "--T {} must be positive and below --snapshots {}",
                    a.horizon, a.snapshots
                )));
            }
            ProblemConfig::NavierStokes(
                NavierStokesData {
                    solver: NavierStokesConfig {
                        nu: a.nu.unwrap_or(1e-3),
                        n: a.fine_resolution,
                        dt: a.dt,
                        record_interval: a.record_interval,
                        ..Default::default()
                    },
                    grf: GrfSpec::default(),
                    resolution: a.resolution.unwrap_or(32),
                    steps_in: a.snapshots - a.horizon,
                    horizon: a.horizon,
                }
                .normalized(),
            )
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(
    a: &GenerateArgs,
    seed: u64,
    threads: Option<usize>,
    args: &[String],
) -> Result<()> {
    let cfg = problem_config(a)?;
    let paths = generate_dataset(&cfg, a.samples, a.test_samples, seed, &a.out, a.force)?;
    let mut m = RunManifest::new("generate", args, seed, threads);
    m.config = serde_json::to_value(&cfg)?;
    for p in &paths {
        let ds = PdeDataset::read(p)?;
        println!(
            "{}: {} samples, input {:?}, target {:?} -> {}",
            ds.meta.split.name(),
            ds.len(),
            ds.input.shape,
            ds.target.shape,
            p.display()
        );
        m.hash_dataset(p)?;
        m.outputs.push(p.display().to_string());
    }
    m.write(&a.out)
}

fn read_split(data: &Path, split: &str) -> Result<(PathBuf, PdeDataset)> {
    let path = if data.is_dir() {
        let s = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::invalid(format!(
                    "unknown split {other:?} (train or test)"
                )))
            }
        };
        split_path(data, s)
    } else {
        data.to_path_buf()
    };
    if !path.is_file() {
        return Err(Error::invalid(format!(
            "dataset file {} not found",
            path.display()
        )));
    }
    let ds = PdeDataset::read(&path)?;
    Ok((path, ds))
}

fn cmd_train(
    a: &TrainArgs,
    seed: Option<u64>,
    threads: Option<usize>,
    args: &[String],
) -> Result<()> {
    let (train_path, tr) = read_split(&a.data, "train")?;
    let (test_path, te) = read_split(&a.data, "test")?;
    let mut cfg = TrainConfig::from_file(&a.config).map_err(|e| match e {
        Error::Io(io) => Error::invalid(format!("config {}: {io}", a.config.display())),
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let resume = match &a.resume {
        Some(p) => {
            let last = Checkpoint::read(p)?;
            let best = Checkpoint::read(&p.with_file_name("best.ckpt")).ok();
            Some(Resume { last, best })
        }
        None => None,
    };
    let out = train(
        &tr,
        &te,
        &cfg,
        TrainOptions {
            resume,
            out: Some(&a.out),
            stop_after: a.stop_after,
        },
    )?;
    if let Some(e) = out.log.epochs.last() {
        println!(
            "trained {} epochs ({} steps, {} parameters): train {:.6} val {:.6}",
            e.epoch + 1,
            e.step,
            out.model.num_params(),
            e.train_rel_l2,
            e.val_rel_l2
        );
    }
    let mut m = RunManifest::new("train", args, cfg.seed, threads);
    m.config = serde_json::json!({ "train": cfg, "model": out.model.config });
    m.hash_dataset(&train_path)?;
    m.hash_dataset(&test_path)?;
    for f in ["last.ckpt", "best.ckpt", "log.csv", "steps.csv"] {
        let p = a.out.join(f);
        if p.exists() {
            m.outputs.push(p.display().to_string());
        }
    }
    m.write(&a.out)
}

fn cmd_eval(a: &EvalArgs, threads: Option<usize>, args: &[String]) -> Result<()> {
    let ckpt = Checkpoint::read(&a.checkpoint)?;
    let (path, ds) = read_split(&a.data, &a.split)?;
    let model = ckpt.build_model()?;
    let report = evaluate(&model, &ckpt.manifest.normalization, &ds, a.batch_size)?;
    println!(
        "relative L2 over {} samples: mean {:.6} std {:.6}",
        report.samples, report.mean, report.std
    );
    if let Some(curve) = &report.per_step {
        let steps: Vec<String> = curve.iter().map(|v| format!("{v:.5}")).collect();
        println!("per step: {}", steps.join(" "));
    }
    std::fs::create_dir_all(&a.out)?;
    let file = a.out.join("eval.json");
    std::fs::write(&file, report.to_json()?)?;
    let mut m = RunManifest::new("eval", args, ckpt.manifest.train.seed, threads);
    m.config =
        serde_json::json!({ "checkpoint": a.checkpoint.display().to_string(), "split": a.split });
    m.hash_dataset(&path)?;
    m.outputs.push(file.display().to_string());
    m.write(&a.out)
}

/// Reads back a report written by `eval`.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    EvalReport::from_json(&std::fs::read_to_string(path)?)
}

fn cmd_plot(a: &PlotArgs, threads: Option<usize>, args: &[String]) -> Result<()> {
    let ckpt = Checkpoint::read(&a.checkpoint)?;
    let (path, ds) = read_split(&a.data, &a.split)?;
    if a.sample_index >= ds.len() {
        return Err(Error::invalid(format!(
            "--sample-index {} out of range for {} samples",
            a.sample_index,
            ds.len()
        )));
    }
    let model = ckpt.build_model()?;
    let pred: Vec<f64> = predict_samples(
        &model,
        &ckpt.manifest.normalization,
        &ds,
        &[a.sample_index],
        1,
    )?
    .into_iter()
    .map(f64::from)
    .collect();
    let (p, steps) = (ds.points(), ds.target.shape[2]);
    let truth: Vec<f64> = ds.target.data
        [a.sample_index * p * steps..(a.sample_index + 1) * p * steps]
        .iter()
        .map(|&v| v as f64)
        .collect();
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    if ds.grid.shape[1] == 1 {
        let x: Vec<f64> = ds.grid.data.iter().map(|&v| v as f64).collect();
        let file = a.out.join(format!("sample{}.csv", a.sample_index));
        std::fs::write(&file, plot::series_csv(&x, &truth, &pred))?;
        outputs.push(file);
    } else {
        let n = (p as f64).sqrt().round() as usize;
        let pick = |buf: &[f64], s: usize| -> Vec<f64> {
            buf.iter().skip(s).step_by(steps).copied().collect()
        };
        let mut fields = Vec::new();
        for s in 0..steps {
            let (t, y) = (pick(&truth, s), pick(&pred, s));
            let err: Vec<f64> = t.iter().zip(&y).map(|(a, b)| (a - b).abs()).collect();
            let limit = plot::max_abs(&t);
            for (name, field, lim) in [
                ("truth", &t, limit),
                ("prediction", &y, limit),
                ("error", &err, plot::max_abs(&err)),
            ] {
                let file = a.out.join(format!("{name}_t{s:02}.ppm"));
                std::fs::write(&file, plot::ppm(field, n, n, lim))?;
                outputs.push(file);
            }
            fields.push((t, y, err));
        }
        let stack = |k: usize| -> Vec<f32> {
            fields
                .iter()
                .flat_map(|f| [&f.0, &f.1, &f.2][k].iter().map(|&v| v as f32))
                .collect()
        };
        let arrays = ["truth", "prediction", "error"]
            .iter()
            .enumerate()
            .map(|(k, name)| Array::new(name, &[steps, n, n], stack(k)))
            .collect::<Result<Vec<_>>>()?;
        let meta = serde_json::json!({ "sample_index": a.sample_index, "dataset": path.display().to_string() });
        let file = a.out.join(format!("sample{}.hno", a.sample_index));
        Container::new(&meta, arrays)?.write(&file)?;
        outputs.push(file);
    }
    println!("wrote {} files to {}", outputs.len(), a.out.display());
    let mut m = RunManifest::new("plot", args, ckpt.manifest.train.seed, threads);
    m.config = serde_json::json!({ "checkpoint": a.checkpoint.display().to_string(), "sample_index": a.sample_index });
    m.hash_dataset(&path)?;
    m.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    m.write(&a.out)
}
