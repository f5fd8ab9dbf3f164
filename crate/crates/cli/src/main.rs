use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cran_core::conic::{Evaluator, SolverTolerances};
use cran_core::error::Error;
use cran_core::harness::{run_scheme, run_sweep, ExperimentConfig, Scheme, SweepOptions};
use cran_core::model::{to_db, ChannelState, NetworkConfig};
use cran_core::oracle::exhaustive_best;

/// Worker count for `sweep` when `--threads` is not given.
const THREADS_ENV: &str = "CRAN_THREADS";

#[derive(Parser)]
#[command(name = "cran", version, about = "Fronthaul-constrained C-RAN max-min SINR simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one topology and channel realisation and write it as JSON.
    GenChannels {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scheme on a channel file and print its iteration trace.
    Solve {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long)]
        channels: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte-Carlo sweep over the configured fronthaul capacities.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Fill the runtime_ms column (makes output machine dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Best association by exhaustive search (small networks only).
    Oracle {
        #[arg(long)]
        channels: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also consider associations that leave a user unserved.
        #[arg(long)]
        allow_unserved: bool,
    },
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    Scheme::parse(s).ok_or_else(|| format!("unknown scheme `{s}` (expected alg1, bench1, bench2 or bench3)"))
}

fn exit_code(err: &Error) -> u8 {
    if err.is_indeterminate() {
        2
    } else {
        1
    }
}

/// Network for a single channel file; the file's noise power wins.
fn instance(
    channels: &Path,
    config: &Path,
) -> Result<(ChannelState, NetworkConfig, SolverTolerances), Error> {
    let cfg = ExperimentConfig::read(config)?;
    let ch = ChannelState::read_json(channels)?;
    let mut net = cfg.single_network()?;
    net.noise_power_w = ch.noise_power_w;
    ch.check_against(&net)?;
    Ok((ch, net, cfg.tolerances))
}

fn threads_from_env() -> Result<Option<usize>, Error> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config {
                field: THREADS_ENV.into(),
                reason: format!("expected a positive integer, got `{v}`"),
            }),
        },
        Err(_) => Ok(None),
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::GenChannels { config, seed, out } => {
            let mut cfg = ExperimentConfig::read(&config)?;
            cfg.seed = seed;
            let (_, ch) = cfg.trial_instance(0)?;
            ch.write_json(&out)
        }
        Command::Solve {
            scheme,
            channels,
            config,
        } => {
            let (ch, net, tol) = instance(&channels, &config)?;
            let eval = Evaluator::new(&ch, &net.power_cap_w, net.noise_power_w, tol);
            match run_scheme(scheme, &eval, &net, None) {
                Ok(report) => {
                    println!("{}", report.trace_json());
                    Ok(())
                }
                Err(Error::IndeterminateRun { reason, partial }) => {
                    println!("{}", partial.trace_json());
                    Err(Error::IndeterminateRun { reason, partial })
                }
                Err(e) => Err(e),
            }
        }
        Command::Sweep {
            config,
            out,
            threads,
            timing,
        } => {
            let cfg = ExperimentConfig::read(&config)?;
            let threads = match threads {
                Some(0) => {
                    return Err(Error::Config {
                        field: "--threads".into(),
                        reason: "must be at least 1".into(),
                    })
                }
                Some(n) => Some(n),
                None => threads_from_env()?,
            };
            let table = run_sweep(&cfg, SweepOptions { timing, threads })?;
            table.write_csv(&out)
        }
        Command::Oracle {
            channels,
            config,
            allow_unserved,
        } => {
            let (ch, net, tol) = instance(&channels, &config)?;
            let best = exhaustive_best(&ch, &net, &tol, !allow_unserved)?;
            let doc = serde_json::json!({
                "gamma_opt": best.gamma,
                "gamma_opt_db": to_db(best.gamma),
                "assoc_opt": best.association.sets(),
                "evaluated": best.evaluated,
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("json output"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
