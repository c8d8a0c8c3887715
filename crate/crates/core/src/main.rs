use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use apg_bandit::harness::{self, Config, HarnessError};

/// Kernelized bandit experiments via Newton-basis approximation.
#[derive(Debug, Parser)]
#[command(name = "apg-bandit", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration (benchmark, benchmark-rq-d1, reduced, smoke); applied
    /// when no --config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. `basis` and `design` print to stdout without it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the P-greedy Newton basis and print the selected points.
    Basis,
    /// Compute the G-optimal design on the Newton features.
    Design,
    /// Run one algorithm on one environment.
    Run,
    /// Run the full kernel x dimension x environment x algorithm matrix.
    Bench,
    /// Run APG-EXP3 on drifting adversarial sequences.
    Adv,
}

fn load_config(cli: &Cli) -> Result<Config, HarnessError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(name)) => Config::preset(name)?,
        (None, None) => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn emit(out_dir: Option<&Path>, name: &str, text: &str) -> Result<(), HarnessError> {
    match out_dir {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(dir) => {
            let path = dir.join(name);
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&path, text))
                .map_err(|source| HarnessError::Io { path, source })?;
            println!("wrote {}", dir.join(name).display());
            Ok(())
        }
    }
}

fn execute(cli: &Cli) -> Result<ExitCode, HarnessError> {
    let cfg = load_config(cli)?;
    let hash = cfg.hash();
    let default_out = PathBuf::from("out");
    let out_dir = cli.out_dir.as_deref();
    match cli.command {
        Command::Basis => {
            let (basis, _) = harness::configured_basis(&cfg)?;
            eprintln!("{} points; {}", basis.len(), harness::decay_summary(&basis));
            emit(out_dir, "basis.csv", &harness::basis_csv(&hash, &basis))?;
        }
        Command::Design => {
            let (design, features) = harness::configured_design(&cfg)?;
            eprintln!(
                "D = {}, leverage max = {:.6}, support = {}",
                features.ncols(),
                design.leverage_max,
                design.support().len()
            );
            emit(out_dir, "design.csv", &harness::design_csv(&hash, &design, &features))?;
        }
        Command::Run => {
            let run = harness::run_single(&cfg)?;
            let path = harness::write_single(&hash, &run, out_dir.unwrap_or(&default_out))?;
            let rec = &run.record;
            println!(
                "{} on {} d={} env {}: final regret {:.6}, normalized {}, basis {}, total {:.3}s",
                rec.meta.algorithm.label(),
                rec.meta.kernel,
                rec.meta.dim,
                rec.meta.env_index,
                rec.curve.final_regret(),
                rec.curve
                    .normalized
                    .as_ref()
                    .and_then(|c| c.last())
                    .map_or("n/a".to_string(), |v| format!("{v:.4}")),
                rec.trace.basis_size,
                rec.trace.total_secs()
            );
            for w in &rec.trace.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", path.display());
        }
        Command::Bench => {
            let result = harness::run_bench(&cfg)?;
            let dir = out_dir.unwrap_or(&default_out);
            harness::write_bench(&result, dir)?;
            for case in &result.cases {
                for &alg in &result.algorithms {
                    println!(
                        "{:<24} d={} {:<8} normalized regret {:>10} total {:>10}s",
                        case.kernel.label(),
                        case.dim,
                        alg.label(),
                        case.mean_final_normalized(alg).map_or("n/a".into(), |v| format!("{v:.4}")),
                        case.mean_total_secs(alg).map_or("n/a".into(), |v| format!("{v:.3}"))
                    );
                }
            }
            println!("wrote {}", dir.display());
            if result.failures() > 0 {
                error!("{} run(s) failed; see results/failures.txt", result.failures());
                return Ok(ExitCode::from(1));
            }
        }
        Command::Adv => {
            let report = harness::run_adversarial(&cfg)?;
            let dir = out_dir.unwrap_or(&default_out);
            harness::write_adversarial(&hash, &report, dir)?;
            println!(
                "last {} rounds: regret per round {:.5} vs uniform {:.5} (full-information leader {:.5})",
                report.tail, report.tail_regret, report.tail_uniform, report.tail_leader
            );
            println!("wrote {}", dir.display());
            if !report.failures.is_empty() {
                for f in &report.failures {
                    error!("{f}");
                }
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
