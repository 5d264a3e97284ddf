use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use fedreplay::harness::{load_config, run, sweep};
use fedreplay::{AllocationMode, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Dynamic,
    Fixed,
}

impl From<Mode> for AllocationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Dynamic => AllocationMode::Dynamic,
            Mode::Fixed => AllocationMode::FixedEqual,
        }
    }
}

/// Federated continual-learning simulator with a shared exemplar replay pool.
#[derive(Debug, Parser)]
#[command(name = "fedreplay", version)]
struct Cli {
    /// Flat `key = value` config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the allocation mode from the config.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Run dynamic and fixed allocation on the same seeds and report deltas.
    #[arg(long, conflicts_with_all = ["mode", "sweep"])]
    compare: bool,
    /// Sweep one key: a, lambda, delta, m_max, dirichlet_alpha, M.
    #[arg(long, requires = "values")]
    sweep: Option<String>,
    /// Comma-separated values for --sweep.
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    values: Vec<f64>,
    /// Base seed; seeds run as N, N+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory (overrides the config and FEDREPLAY_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var("FEDREPLAY_OUT_DIR") {
        if !dir.is_empty() {
            config.output_dir = dir.into();
        }
    }
    if let Some(dir) = &cli.out {
        config.output_dir = dir.clone();
    }
    if let Some(s) = cli.seed {
        config.federation.seed = s;
    }
    if let Some(k) = cli.seeds {
        config.num_seeds = k;
    }
    if let Some(m) = cli.mode {
        config.federation.allocation_mode = m.into();
    }
    config.validate()?;
    Ok(config)
}

fn fmt_stats(s: &fedreplay::harness::MeanStd) -> String {
    match s.std {
        Some(sd) => format!("{:.4} ± {:.4}", s.mean, sd),
        None => format!("{:.4}", s.mean),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    if let Some(key) = &cli.sweep {
        if cli.values.is_empty() {
            bail!("--sweep needs --values");
        }
        let rows = sweep(&config, key, &cli.values)?;
        for r in rows {
            println!(
                "{}={}  A_avg {}  A_last {}",
                r.key,
                r.value,
                fmt_stats(&r.summary.a_avg_stats),
                fmt_stats(&r.summary.a_last_stats)
            );
        }
    } else {
        let summary = run(&config, cli.mode.map(Into::into), cli.compare)?;
        for m in &summary.modes {
            println!(
                "{:<12} runs {}  A_avg {}  A_last {}",
                m.mode.name(),
                m.seeds.len(),
                fmt_stats(&m.a_avg_stats),
                fmt_stats(&m.a_last_stats)
            );
        }
        if let Some(d) = &summary.delta {
            println!(
                "{:<12} A_avg {}  A_last {}",
                "delta",
                fmt_stats(&d.a_avg_stats),
                fmt_stats(&d.a_last_stats)
            );
        }
    }
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
