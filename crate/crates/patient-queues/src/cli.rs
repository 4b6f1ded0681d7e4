//! Command implementations behind the `pq` binary.
//!
//! Every command is a pure function of its input files, flags, and seed:
//! structured results print to stdout as JSON (byte-identical across
//! repeated invocations) and, with `--out-dir`, are also written to disk
//! next to bulk trajectory CSVs. A run manifest capturing the exact
//! invocation goes to the out dir (or stderr) — it carries the only
//! wall-clock timestamp, so result files stay reproducible.
//!
//! Exit codes are a stable contract: 0 success, 2 input error, 3
//! non-convergence, 4 validation failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{load_instance, Instance, StrategyProfile};
use crate::poa::{nash_lower_bound, verify_stability_margin, waterfill_bound, MarginSweepConfig};
use crate::rates::compute_rates;
use crate::sim::{convergence_report, simulate, SimConfig, Trajectory};
use crate::{equilibrium, poa};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

/// Maps an error to the exit-code contract.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonConvergence(_) => EXIT_NO_CONVERGENCE,
        Error::DeformationStall { .. } => EXIT_VALIDATION,
        _ => EXIT_INPUT,
    }
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

/// Everything needed to reproduce a run, plus the wall clock.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Exact argument vector of the invocation.
    pub argv: Vec<String>,
    pub instance: Option<String>,
    /// Where the profile came from: a path, "embedded", or
    /// "uniform (default)".
    pub profile_source: Option<String>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub version: String,
    pub wall_clock_unix_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            instance: None,
            profile_source: None,
            seed: None,
            tol: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_unix_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        }
    }
}

/// Prints the result JSON to stdout and mirrors result + manifest into the
/// out dir when given; without one the manifest goes to stderr.
fn emit<T: Serialize>(name: &str, result: &T, manifest: &RunManifest, out_dir: Option<&Path>) -> Result<()> {
    let mut json = serde_json::to_string_pretty(result)?;
    json.push('\n');
    print!("{json}");
    let mut manifest_json = serde_json::to_string_pretty(manifest)?;
    manifest_json.push('\n');
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{name}.json")), json)?;
            fs::write(dir.join("manifest.json"), manifest_json)?;
        }
        None => eprint!("{manifest_json}"),
    }
    Ok(())
}

/// Resolves the profile: explicit file beats the one embedded in the
/// instance file beats the uniform default.
fn resolve_profile(
    inst: &Instance,
    embedded: Option<StrategyProfile>,
    profile_path: Option<&Path>,
) -> Result<(StrategyProfile, String)> {
    if let Some(path) = profile_path {
        let rows: Vec<Vec<f64>> = serde_json::from_str(&fs::read_to_string(path)?)?;
        let profile = StrategyProfile::new(rows)?;
        profile.check_dims(inst)?;
        return Ok((profile, path.display().to_string()));
    }
    if let Some(profile) = embedded {
        return Ok((profile, "embedded".to_string()));
    }
    Ok((
        StrategyProfile::uniform(inst.n_queues(), inst.n_servers()),
        "uniform (default)".to_string(),
    ))
}

// ---------------------------------------------------------------------------
// rates
// ---------------------------------------------------------------------------

pub fn cmd_rates(
    instance_path: &Path,
    profile_path: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<i32> {
    let loaded = load_instance(instance_path)?;
    let (profile, source) = resolve_profile(&loaded.instance, loaded.profile, profile_path)?;
    let part = compute_rates(&profile, &loaded.instance)?;

    let mut manifest = RunManifest::new("rates");
    manifest.instance = Some(instance_path.display().to_string());
    manifest.profile_source = Some(source);
    emit("rates", &part, &manifest, out_dir)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// nash
// ---------------------------------------------------------------------------

pub struct NashArgs {
    pub config: equilibrium::NashSearchConfig,
    /// Seed for a random initial profile; uniform start when absent.
    pub init_seed: Option<u64>,
}

pub fn cmd_nash(instance_path: &Path, args: &NashArgs, out_dir: Option<&Path>) -> Result<i32> {
    let loaded = load_instance(instance_path)?;
    let inst = &loaded.instance;
    let init = match args.init_seed {
        Some(seed) => StrategyProfile::random(inst.n_queues(), inst.n_servers(), seed, 0.0),
        None => StrategyProfile::uniform(inst.n_queues(), inst.n_servers()),
    };
    let outcome = equilibrium::find_nash(inst, init, &args.config)?;

    let mut manifest = RunManifest::new("nash");
    manifest.instance = Some(instance_path.display().to_string());
    manifest.seed = args.init_seed;
    manifest.tol = Some(args.config.tol);
    emit("nash", &outcome, &manifest, out_dir)?;
    Ok(if outcome.converged { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

// ---------------------------------------------------------------------------
// poa
// ---------------------------------------------------------------------------

pub struct PoaArgs {
    /// Run the equilibrium sweep after printing the bound table.
    pub verify: bool,
    /// Scale arrivals down by this factor before verifying.
    pub margin: Option<f64>,
    pub sweep: MarginSweepConfig,
}

#[derive(Serialize)]
struct PoaReport {
    per_k: Vec<poa::WaterfillSolution>,
    bound: f64,
    feasibility_margin: f64,
    critical_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<poa::MarginSweepReport>,
}

pub fn cmd_poa(instance_path: &Path, args: &PoaArgs, out_dir: Option<&Path>) -> Result<i32> {
    let loaded = load_instance(instance_path)?;
    let inst = match args.margin {
        Some(alpha) => loaded.instance.scale(alpha)?,
        None => loaded.instance,
    };
    let per_k = (1..=inst.n_queues())
        .map(|k| waterfill_bound(k, &inst))
        .collect::<Result<Vec<_>>>()?;
    let report = PoaReport {
        bound: nash_lower_bound(&inst)?,
        feasibility_margin: inst.feasibility_margin(),
        critical_margin: poa::CRITICAL_MARGIN,
        sweep: if args.verify {
            Some(verify_stability_margin(&inst, &args.sweep)?)
        } else {
            None
        },
        per_k,
    };

    let mut manifest = RunManifest::new("poa");
    manifest.instance = Some(instance_path.display().to_string());
    emit("poa", &report, &manifest, out_dir)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub struct SimulateArgs {
    pub cfg: SimConfig,
    pub burn_in: f64,
    /// Compare against analytic rates and gate the exit code.
    pub check: bool,
    pub tol: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    horizon: u64,
    trials: usize,
    checkpoint_stride: u64,
    burn_in_fraction: f64,
    per_trial_slopes: Vec<Vec<f64>>,
    #[serde(flatten)]
    convergence: crate::sim::ConvergenceReport,
}

pub fn cmd_simulate(
    instance_path: &Path,
    profile_path: Option<&Path>,
    args: &SimulateArgs,
    out_dir: Option<&Path>,
) -> Result<i32> {
    let loaded = load_instance(instance_path)?;
    let (profile, source) = resolve_profile(&loaded.instance, loaded.profile, profile_path)?;
    let part = compute_rates(&profile, &loaded.instance)?;
    let trajectories = simulate(&profile, &loaded.instance, &args.cfg)?;
    let per_trial_slopes = trajectories
        .iter()
        .map(|t| crate::sim::empirical_rates(t, args.burn_in))
        .collect::<Result<Vec<_>>>()?;
    let convergence = convergence_report(&part, &trajectories, args.tol, args.burn_in)?;
    let passed = convergence.pass;

    let summary = SimulateSummary {
        seed: args.cfg.seed,
        horizon: args.cfg.horizon,
        trials: args.cfg.trials,
        checkpoint_stride: args.cfg.checkpoint_stride,
        burn_in_fraction: args.burn_in,
        per_trial_slopes,
        convergence,
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        for traj in &trajectories {
            write_trajectory_csv(&trajectory_path(dir, traj.trial), traj)?;
        }
    }
    let mut manifest = RunManifest::new("simulate");
    manifest.instance = Some(instance_path.display().to_string());
    manifest.profile_source = Some(source);
    manifest.seed = Some(args.cfg.seed);
    manifest.tol = Some(args.tol);
    emit("summary", &summary, &manifest, out_dir)?;

    Ok(if args.check && !passed { EXIT_VALIDATION } else { EXIT_OK })
}

pub fn trajectory_path(dir: &Path, trial: usize) -> PathBuf {
    dir.join(format!("trial_{trial:04}.csv"))
}

/// CSV schema: header `t,T_1,...,T_n`, one row per checkpoint.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = String::new();
    out.push('t');
    for i in 1..=traj.n_queues() {
        out.push_str(&format!(",T_{i}"));
    }
    out.push('\n');
    for (t, ages) in &traj.checkpoints {
        out.push_str(&t.to_string());
        for a in ages {
            out.push(',');
            out.push_str(&a.to_string());
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
