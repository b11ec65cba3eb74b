use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{ExperimentConfig, ObjectiveKind};

#[derive(Debug, Parser)]
#[command(name = "fsrfm", version, about = "Factorization machine annealing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// TOML experiment config; absent keys take the preset values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Smoothing strength of the surrogate (bench-h2: the only lambda swept).
    #[arg(long)]
    pub lambda_sr: Option<f64>,
    /// Start each step's training from the previous surrogate.
    #[arg(long)]
    pub warm_start: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Surrogate surfaces of a 2-variable objective after selected steps.
    Surface(RunArgs),
    /// Generalization sweep on the 4-variable norm objective.
    BenchH2 {
        #[command(flatten)]
        run: RunArgs,
        /// Report the conventional R^2 instead of the prediction-centred form.
        #[arg(long)]
        standard_r2: bool,
    },
    /// Multi-trial optimization, smoothed and naive.
    Optimize(RunArgs),
    /// Exhaustive minimum of a QUBO file.
    Oracle { qubo: PathBuf },
    /// Simulated annealing reads of a QUBO file, as CSV.
    Anneal {
        qubo: PathBuf,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long, default_value_t = 16)]
        reads: usize,
        #[arg(long)]
        beta_start: Option<f64>,
        #[arg(long)]
        beta_end: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write samples.csv and a manifest here instead of stdout.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Radius trajectory of a driven bubble.
    SimulateBubble(RunArgs),
}

/// Loads the config and applies command line overrides.
pub fn resolve(args: &RunArgs, default_objective: ObjectiveKind, command: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path, default_objective)?,
        None => ExperimentConfig::preset(default_objective),
    };
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(lambda) = args.lambda_sr {
        config.fmqa.train.lambda_sr = lambda;
        config.bench_h2.lambdas = vec![lambda];
    }
    if args.warm_start {
        config.fmqa.train.warm_start = true;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    config.validate()?;
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(command));
    Ok((config, out))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Surface(args) => {
            let (config, out) = resolve(&args, ObjectiveKind::H1, "surface")?;
            commands::surface(&config, &out)
        }
        Command::BenchH2 { run, standard_r2 } => {
            let (config, out) = resolve(&run, ObjectiveKind::H2, "bench-h2")?;
            commands::bench_h2_cmd(&config, &out, standard_r2)
        }
        Command::Optimize(args) => {
            let (config, out) = resolve(&args, ObjectiveKind::H3, "optimize")?;
            commands::optimize_cmd(&config, &out)
        }
        Command::Oracle { qubo } => {
            print!("{}", commands::oracle(&qubo)?);
            Ok(())
        }
        Command::Anneal {
            qubo,
            sweeps,
            reads,
            beta_start,
            beta_end,
            seed,
            out,
        } => {
            let schedule = commands::anneal_schedule(&qubo, sweeps, reads, beta_start, beta_end, seed)?;
            let csv = commands::anneal(&qubo, &schedule)?;
            match out {
                Some(dir) => {
                    let mut run = crate::output::RunDir::create(&dir)?;
                    run.write("samples.csv", &csv)?;
                    let echo = format!(
                        "qubo = {:?}\nsweeps = {}\nreads = {}\nbeta_start = {}\nbeta_end = {}\nseed = {}\n",
                        qubo.display().to_string(),
                        schedule.sweeps,
                        schedule.reads,
                        schedule.beta_start,
                        schedule.beta_end,
                        schedule.seed
                    );
                    run.finish("anneal", &[seed], &echo)?;
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::SimulateBubble(args) => {
            let (config, out) = resolve(&args, ObjectiveKind::H3, "simulate-bubble")?;
            commands::simulate_bubble(&config, &out)
        }
    }
}
