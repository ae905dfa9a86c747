use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use isl_core::data::{gen_manifold, ManifoldKind};
use isl_core::pipeline::{load_splits, write_embeddings, write_sweep, Splits};
use isl_core::{run_eval, run_sweep, Checkpoint, Dataset, RunConfig, SweepAxis, Trainer};

#[derive(Parser)]
#[command(name = "isl", version, about = "Instance similarity learning on toy manifolds and CIFAR-10")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the wide-network preset instead of desk-scale defaults.
    #[arg(long, conflicts_with = "config")]
    paper_scale: bool,
    /// Override any config field, e.g. `--set mining.h=0.7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None if self.paper_scale => RunConfig::paper_scale(),
            None => RunConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full protocol and write metrics, logs and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print the report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled training CSV (`x0,...,label`) replacing the config's dataset.
        #[arg(long, requires = "test_data")]
        data: Option<PathBuf>,
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one extra mining pass on a checkpoint.
    Mine {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mining overrides such as `--set mining.r=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per point of a parameter grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// `param=v1,v2,...`; repeat for a cartesian grid.
        #[arg(long, required = true, value_name = "PARAM=VALUES")]
        grid: Vec<String>,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Write the encoder's train-split embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic manifold dataset as CSV.
    GenData {
        #[arg(long, default_value = "two_moons")]
        kind: String,
        #[arg(long, default_value_t = 1000)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0.08)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_axis(spec: &str) -> Result<SweepAxis> {
    let Some((param, values)) = spec.split_once('=') else {
        bail!("grid spec `{spec}` is not param=v1,v2,...");
    };
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("grid spec `{spec}` lists no values");
    }
    Ok(SweepAxis::new(param.trim(), &values))
}

fn train(cfg: &ConfigArgs, out: &Path, resume: Option<&Path>) -> Result<()> {
    let mut trainer = match resume {
        Some(ck) => {
            if !cfg.overrides.is_empty() || cfg.seed.is_some() {
                bail!("--set and --seed cannot change a resumed run");
            }
            Trainer::resume(ck).with_context(|| format!("resuming from {}", ck.display()))?
        }
        None => Trainer::new(cfg.resolve()?)?,
    };
    trainer.run_to_completion(Some(out))?;
    if let Some(r) = trainer.ck.reports.last() {
        println!("{}", serde_json::to_string_pretty(r)?);
    }
    eprintln!("artifacts written to {}", out.display());
    Ok(())
}

fn eval(checkpoint: &Path, data: Option<&Path>, test_data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let splits = match (data, test_data) {
        (Some(d), Some(t)) => Some(Splits { train: Dataset::read_csv(d)?, test: Dataset::read_csv(t)? }),
        _ => None,
    };
    let report = run_eval(checkpoint, splits)?;
    if let Some(p) = out {
        report.write_json(p)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn mine(checkpoint: &Path, overrides: &[String], out: &Path) -> Result<()> {
    let mut trainer = Trainer::resume(checkpoint)?;
    let cfg = trainer.ck.config.with_overrides(overrides)?;
    cfg.mining.validate()?;
    let report = trainer.mine_once(&cfg.mining)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("mining.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    trainer.ck.state.write_jsonl(&out.join("positives.jsonl"))?;
    trainer.ck.save(&out.join("checkpoint.json"))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Train { config, out, resume } => train(&config, &out, resume.as_deref()),
        Command::Eval { checkpoint, data, test_data, out } => eval(&checkpoint, data.as_deref(), test_data.as_deref(), out.as_deref()),
        Command::Mine { checkpoint, overrides, out } => mine(&checkpoint, &overrides, &out),
        Command::Sweep { config, grid, out } => {
            let base = config.resolve()?;
            let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>>>()?;
            let rows = run_sweep(&base, &axes, Some(&out))?;
            write_sweep(&out, &rows)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} cells, {failed} failed; table in {}", rows.len(), out.join("sweep.csv").display());
            Ok(())
        }
        Command::ExportEmbeddings { checkpoint, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let splits = load_splits(&ck.config.dataset, ck.config.seed)?;
            let trainer = Trainer::from_checkpoint(ck, splits)?;
            write_embeddings(&out, &trainer.embeddings()?)?;
            Ok(())
        }
        Command::GenData { kind, n_per_class, noise, seed, out } => {
            let kind: ManifoldKind = kind.parse()?;
            gen_manifold(kind, n_per_class, noise, seed)?.write_csv(&out)?;
            Ok(())
        }
    }
}
