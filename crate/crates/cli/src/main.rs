//! `ldrlab` command line: one subcommand per experiment stage, each writing
//! its artifacts and a manifest into the output directory.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{DistSpec, ExperimentConfig, Generator, ProbeMethod};
use output::Output;

#[derive(Parser)]
#[command(name = "ldrlab", version, about = "Local dependency ratio experiments on symbolic distributions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config, TOML or JSON by extension.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Distribution as KIND:ARG, e.g. `parity:8`, `dyck:4`, `sum_rule:10`, `file:dist.json`.
    #[arg(long, global = true)]
    dist: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the distribution and its summary.
    Dist,
    /// Low-order Fourier coefficients and whether orders one and two vanish.
    Fourier,
    /// Train one network per target noise level.
    Train,
    /// Probe the local dependency ratio of a checkpoint.
    Ldr {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated input indices; repeat for several regions.
        #[arg(long)]
        region: Vec<String>,
        /// Target `√ᾱ_t`; the nearest timestep is used.
        #[arg(long = "t-by-alphabar")]
        t_by_alphabar: Vec<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_parser = ["exact", "zeroth_order"])]
        method: Option<String>,
    },
    /// K function, optimal ray and single-neuron growth replay.
    Theory {
        #[arg(long)]
        alpha_bar: Option<f64>,
        #[arg(long)]
        coord: Option<usize>,
    },
    /// Generate samples.
    Sample {
        #[arg(long, value_parser = ["exact", "marginal", "checkpoint", "random"])]
        generator: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Classify generations of checkpoints into hallucination categories.
    Eval {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Also write per-sample decodes.
        #[arg(long)]
        dump: bool,
    },
    /// Stair-loss run and hallucination rates on parity.
    Replicate {
        /// Reduced run (d=6, m=512).
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dist => "dist",
            Command::Fourier => "fourier",
            Command::Train => "train",
            Command::Ldr { .. } => "ldr",
            Command::Theory { .. } => "theory",
            Command::Sample { .. } => "sample",
            Command::Eval { .. } => "eval",
            Command::Replicate { .. } => "replicate",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        match self {
            Command::Ldr { checkpoint, region, t_by_alphabar, n, method } => {
                let p = &mut cfg.probe;
                if checkpoint.is_some() {
                    p.checkpoint.clone_from(checkpoint);
                }
                if !region.is_empty() {
                    p.regions.clone_from(region);
                }
                if !t_by_alphabar.is_empty() {
                    p.sqrt_alpha_bars.clone_from(t_by_alphabar);
                }
                if let Some(n) = n {
                    p.n = *n;
                }
                match method.as_deref() {
                    Some("exact") => p.method = ProbeMethod::Exact,
                    Some(_) => p.method = ProbeMethod::ZerothOrder,
                    None => {}
                }
            }
            Command::Theory { alpha_bar, coord } => {
                if let Some(a) = alpha_bar {
                    cfg.theory.alpha_bar = *a;
                }
                if let Some(c) = coord {
                    cfg.theory.coord = *c;
                }
            }
            Command::Sample { generator, checkpoint, n } => {
                let s = &mut cfg.sample;
                match generator.as_deref() {
                    Some("exact") => s.generator = Generator::Exact,
                    Some("marginal") => s.generator = Generator::Marginal,
                    Some("random") => s.generator = Generator::Random,
                    Some(_) => s.generator = Generator::Checkpoint,
                    None => {}
                }
                if checkpoint.is_some() {
                    s.checkpoint.clone_from(checkpoint);
                    if generator.is_none() {
                        s.generator = Generator::Checkpoint;
                    }
                }
                if let Some(n) = n {
                    s.n = *n;
                }
            }
            Command::Eval { checkpoint, n, .. } => {
                if !checkpoint.is_empty() {
                    cfg.eval.checkpoints.clone_from(checkpoint);
                }
                if let Some(n) = n {
                    cfg.eval.n_samples = *n;
                }
            }
            Command::Replicate { quick } => cfg.replicate.quick |= quick,
            Command::Dist | Command::Fourier | Command::Train => {}
        }
        Ok(())
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.out.clone_from(o);
    }
    if let Some(t) = cli.common.threads {
        cfg.threads = t;
    }
    if let Some(d) = &cli.common.dist {
        cfg.distribution = DistSpec::parse(d)?;
    }
    cli.command.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e:#}");
            return ExitCode::from(2);
        }
    };
    let hash = match cfg.hash() {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let mut out = match Output::create(&cfg.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::Dist => commands::dist(&cfg, &mut out),
        Command::Fourier => commands::fourier(&cfg, &mut out),
        Command::Train => commands::train_cmd(&cfg, &mut out),
        Command::Ldr { .. } => commands::ldr(&cfg, &mut out),
        Command::Theory { .. } => commands::theory(&cfg, &mut out),
        Command::Sample { .. } => commands::sample(&cfg, &mut out),
        Command::Eval { dump, .. } => commands::eval(&cfg, *dump, &mut out),
        Command::Replicate { .. } => commands::replicate(&cfg, &mut out),
    };
    let name = cli.command.name();
    match out.finish(name, &hash, cfg.seed, cfg.threads, &outcome) {
        Ok(manifest) => eprintln!("{name}: manifest {}", manifest.display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
