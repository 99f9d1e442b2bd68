//! `cmiknn`: conditional mutual information estimation from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{EstimatorChoice, Preset, RunConfig, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "cmiknn", version, about = "Neural CMI estimation with isolated k-NN resampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Gaussian-chain data for a preset and estimate its CMI.
    Synth {
        #[command(flatten)]
        common: Common,
        /// d3, zero, dim, tanh, dpi, or custom.
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        /// Per-variable dimension for the dim and custom presets.
        #[arg(long)]
        d: Option<usize>,
        /// Off-diagonal of the covariance shape (dpi and custom presets).
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Estimate I(X;Y|Z) on a CSV file with x_*, y_*, z_* columns.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Expected dimensions as dx,dy,dz.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
    },
    /// Directed-information graph over three series of a CSV file.
    Digraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Three column names.
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<String>>,
        /// Markov order l.
        #[arg(long)]
        lag: Option<usize>,
    },
    /// Sweep a grid of sample sizes, neighbor counts, and dimensions.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Compare the first two methods with a Mann-Whitney U test.
        #[arg(long)]
        mwu: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated subset of dv, nwj, ldr, midiff.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorChoice>>,
    /// Also write the concentration-bound diagnostic table.
    #[arg(long)]
    diagnostics: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown preset `{s}`"))
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = commands::load_config(self.config.as_deref())?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.tau {
            cfg.net.tau = v;
        }
        if let Some(v) = self.epochs {
            cfg.net.epochs = v;
        }
        if let Some(v) = self.trials {
            cfg.schedule.trials = v;
        }
        if let Some(v) = self.k {
            cfg.schedule.k = v;
            cfg.bench.k = vec![v];
        }
        if let Some(v) = self.n {
            cfg.data.n = v;
            cfg.bench.n = vec![v];
        }
        if let Some(v) = &self.estimators {
            cfg.estimators = v.clone();
        }
        cfg.diagnostics |= self.diagnostics;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (cfg, which): (RunConfig, fn(&RunConfig) -> Result<commands::Outcome>) = match cli.command {
        Command::Synth { common, preset, d, rho } => {
            let mut cfg = common.resolve()?;
            if let Some(p) = preset {
                cfg.data.preset = p;
            }
            if let Some(d) = d {
                cfg.data.d = d;
            }
            if let Some(r) = rho {
                cfg.data.rho = r;
            }
            (cfg, commands::synth)
        }
        Command::Estimate { common, input, dims } => {
            let mut cfg = common.resolve()?;
            if input.is_some() {
                cfg.estimate.input = input;
            }
            if let Some(d) = dims {
                anyhow::ensure!(d.len() == 3, "--dims takes three values dx,dy,dz, got {}", d.len());
                cfg.estimate.dims = Some([d[0], d[1], d[2]]);
            }
            (cfg, commands::estimate)
        }
        Command::Digraph { common, input, nodes, lag } => {
            let mut cfg = common.resolve()?;
            if input.is_some() {
                cfg.digraph.input = input;
            }
            if let Some(n) = nodes {
                cfg.digraph.nodes = n;
            }
            if let Some(l) = lag {
                cfg.digraph.lag = l;
            }
            (cfg, commands::digraph)
        }
        Command::Bench { common, mwu } => {
            let mut cfg = common.resolve()?;
            cfg.bench.mwu |= mwu;
            (cfg, commands::bench)
        }
    };

    output::check_out_dir(&cfg.out_dir)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("starting the worker pool")?;

    let outcome = which(&cfg)?;
    let written = outcome.staged.commit(&cfg.out_dir)?;
    print!("{}", outcome.summary);
    for p in written {
        println!("wrote {}", p.display());
    }
    if let Some(msg) = outcome.partial_failure {
        eprintln!("error: some computations failed:\n{msg}");
        return Ok(false);
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
