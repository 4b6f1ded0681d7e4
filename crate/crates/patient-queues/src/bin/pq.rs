//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use patient_queues::acceptance;
use patient_queues::cli::{self, NashArgs, PoaArgs, SimulateArgs};
use patient_queues::equilibrium::{CostModel, NashSearchConfig, UpdateOrder};
use patient_queues::poa::MarginSweepConfig;
use patient_queues::sim::SimConfig;

/// Exact aging rates, equilibria, and capacity bounds for strategic queuing
/// systems, with a seeded simulator to validate them.
#[derive(Parser)]
#[command(name = "pq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonIo {
    /// Instance file (JSON with "lambda", "mu", optional "profile").
    #[arg(long)]
    instance: PathBuf,
    /// Directory for result files; stdout always gets the result JSON.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the exact aging-rate partition of a profile.
    Rates {
        #[command(flatten)]
        io: CommonIo,
        /// Profile file (JSON array of rows); defaults to the instance's
        /// embedded profile, then to uniform.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Search for a Nash equilibrium by damped best-response dynamics.
    Nash {
        #[command(flatten)]
        io: CommonIo,
        #[arg(long, default_value_t = 100)]
        max_rounds: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0.5)]
        damping: f64,
        /// Update order: round_robin or simultaneous.
        #[arg(long, default_value = "round_robin")]
        order: String,
        /// Cost model: aging_rate or descent_speed.
        #[arg(long, default_value = "aging_rate")]
        cost: String,
        /// Seed for a random initial profile (uniform start when omitted).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Water-filling table and the equilibrium stability bound.
    Poa {
        #[command(flatten)]
        io: CommonIo,
        /// Also sweep equilibrium searches and check they are all stable.
        #[arg(long)]
        verify: bool,
        /// Scale arrivals down by this factor first.
        #[arg(long)]
        margin: Option<f64>,
        /// Seeds for random sweep starts (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Number of initial profiles (uniform plus seeded random ones).
        #[arg(long)]
        inits: Option<usize>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run the seeded simulator and compare against the analytic rates.
    Simulate {
        #[command(flatten)]
        io: CommonIo,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint stride; must divide the horizon.
        #[arg(long, default_value_t = 10_000)]
        stride: u64,
        /// Fraction of the horizon discarded before slope fitting.
        #[arg(long, default_value_t = 0.2)]
        burn_in: f64,
        /// Gate the exit code on the convergence comparison.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value_t = 0.015)]
        tol: f64,
    },
    /// Run the acceptance suite and print one line per criterion.
    Selftest {
        /// Run only these criteria (comma separated, e.g. 1,3,12).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
    },
}

fn parse_order(s: &str) -> Result<UpdateOrder, String> {
    match s {
        "round_robin" => Ok(UpdateOrder::RoundRobin),
        "simultaneous" => Ok(UpdateOrder::Simultaneous),
        other => Err(format!("unknown order '{other}'")),
    }
}

fn parse_cost(s: &str) -> Result<CostModel, String> {
    match s {
        "aging_rate" => Ok(CostModel::AgingRate),
        "descent_speed" => Ok(CostModel::DescentSpeed),
        other => Err(format!("unknown cost model '{other}'")),
    }
}

fn main() -> ExitCode {
    // PQ_THREADS caps the worker count for simulation trials and sweeps.
    if let Ok(value) = std::env::var("PQ_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build_global();
        }
    }

    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Rates { io, profile } => {
            cli::cmd_rates(&io.instance, profile.as_deref(), io.out_dir.as_deref())
        }
        Command::Nash {
            io,
            max_rounds,
            tol,
            damping,
            order,
            cost,
            seed,
        } => {
            let (order, cost_model) = match (parse_order(&order), parse_cost(&cost)) {
                (Ok(o), Ok(c)) => (o, c),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(cli::EXIT_INPUT as u8);
                }
            };
            let args = NashArgs {
                config: NashSearchConfig {
                    max_rounds,
                    tol,
                    damping,
                    order,
                    cost_model,
                },
                init_seed: seed,
            };
            cli::cmd_nash(&io.instance, &args, io.out_dir.as_deref())
        }
        Command::Poa {
            io,
            verify,
            margin,
            seeds,
            inits,
            tol,
        } => {
            let init_seeds = match inits {
                // --inits N derives N-1 seeds after the uniform start.
                Some(n) => (1..n as u64).collect(),
                None => seeds,
            };
            let args = PoaArgs {
                verify,
                margin,
                sweep: MarginSweepConfig {
                    init_seeds,
                    nash: NashSearchConfig {
                        tol,
                        ..NashSearchConfig::default()
                    },
                },
            };
            cli::cmd_poa(&io.instance, &args, io.out_dir.as_deref())
        }
        Command::Simulate {
            io,
            profile,
            horizon,
            trials,
            seed,
            stride,
            burn_in,
            check,
            tol,
        } => {
            let args = SimulateArgs {
                cfg: SimConfig {
                    horizon,
                    trials,
                    seed,
                    checkpoint_stride: stride,
                },
                burn_in,
                check,
                tol,
            };
            cli::cmd_simulate(&io.instance, profile.as_deref(), &args, io.out_dir.as_deref())
        }
        Command::Selftest { only } => {
            let bin = std::env::current_exe().expect("own path");
            let results = acceptance::run(only.as_deref(), &bin);
            let mut all_ok = true;
            for r in &results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                println!("criterion {:02} ({}): {} — {}", r.id, r.name, verdict, r.details);
                all_ok &= r.passed;
            }
            Ok(if all_ok { cli::EXIT_OK } else { cli::EXIT_VALIDATION })
        }
    };

    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code_for(&err) as u8)
        }
    }
}
