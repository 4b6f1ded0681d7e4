//! Seeded Monte Carlo engine for the deferred-decisions queuing process.
//!
//! Only the timestamp of each queue's oldest unprocessed packet is tracked.
//! A queue whose timestamp is at most the current step holds a packet and
//! sends it to a server drawn from its fixed distribution; each server
//! attempts only the oldest packet it receives (ties to the lowest queue
//! index) and succeeds with its service probability, advancing the winning
//! queue's timestamp by a fresh geometric arrival gap. The age of a queue at
//! step `t` is `max(0, t - timestamp)`.
//!
//! Randomness comes from three ChaCha streams per trial, keyed by
//! `(master seed, trial index, role)` with roles for arrival gaps, server
//! choices, and service coins. Draws are lazy: a server choice is drawn only
//! for queues that currently hold a packet, a service coin only for servers
//! that received one, and an arrival gap only on success. Trials are
//! embarrassingly parallel and merge in trial order, so output is
//! byte-identical regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, StrategyProfile};
use crate::mask::SubsetMask;
use crate::rates::{compute_rates, RatePartition};

/// Default fraction of the horizon discarded before slope fitting.
pub const DEFAULT_BURN_IN: f64 = 0.2;

// ---------------------------------------------------------------------------
// Configuration and trajectories
// ---------------------------------------------------------------------------

/// Simulation shape: steps, repetition count, master seed, checkpoint grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub trials: usize,
    pub seed: u64,
    /// Ages are recorded every `checkpoint_stride` steps; must divide the
    /// horizon.
    pub checkpoint_stride: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.checkpoint_stride == 0 || self.horizon % self.checkpoint_stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "stride {} must be positive and divide the horizon {}",
                self.checkpoint_stride, self.horizon
            )));
        }
        Ok(())
    }
}

/// One sample path, recorded at checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    /// `(t, age of every queue at t)`, in increasing `t`.
    pub checkpoints: Vec<(u64, Vec<u64>)>,
    /// Oldest-packet timestamps at the end of the run.
    pub timestamps_final: Vec<u64>,
    /// Master seed the trial streams were derived from.
    pub seed: u64,
    /// Trial index under that seed.
    pub trial: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> u64 {
        self.checkpoints.last().map(|c| c.0).unwrap_or(0)
    }

    pub fn n_queues(&self) -> usize {
        self.timestamps_final.len()
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Receives every successful clear; lets tests count conservation exactly
/// without a second simulation path.
trait StepSink {
    fn cleared(&mut self, queue: usize, server: usize, advance: u64);
}

struct NoopSink;
impl StepSink for NoopSink {
    fn cleared(&mut self, _: usize, _: usize, _: u64) {}
}

const STREAM_ROLES: u64 = 3;

struct Engine<'a> {
    profile: &'a StrategyProfile,
    inst: &'a Instance,
    /// Oldest-packet timestamp per queue.
    timestamps: Vec<u64>,
    t: u64,
    arrival_rng: ChaCha8Rng,
    choice_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    gaps: Vec<Geometric>,
    // Per-step scratch: oldest (timestamp, queue) seen by each server.
    best_ts: Vec<u64>,
    best_queue: Vec<usize>,
}

impl<'a> Engine<'a> {
    fn new(profile: &'a StrategyProfile, inst: &'a Instance, seed: u64, trial: usize) -> Self {
        let stream = |role: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64 * STREAM_ROLES + role);
            rng
        };
        let mut arrival_rng = stream(0);
        let gaps: Vec<Geometric> = inst
            .arrival_rates()
            .iter()
            .map(|&l| Geometric::new(l).expect("rate in (0,1)"))
            .collect();
        // First arrival at step G - 1 with G a geometric gap.
        let timestamps = gaps
            .iter()
            .map(|g| g.sample(&mut arrival_rng))
            .collect();
        let m = inst.n_servers();
        Engine {
            profile,
            inst,
            timestamps,
            t: 0,
            arrival_rng,
            choice_rng: stream(1),
            service_rng: stream(2),
            gaps,
            best_ts: vec![u64::MAX; m],
            best_queue: vec![usize::MAX; m],
        }
    }

    /// One step of the process. Draws happen in queue order, then server
    /// order, keeping trials reproducible.
    fn step(&mut self, sink: &mut impl StepSink) {
        let n = self.inst.n_queues();
        let m = self.inst.n_servers();
        self.best_ts.fill(u64::MAX);
        self.best_queue.fill(usize::MAX);

        for i in 0..n {
            if self.timestamps[i] > self.t {
                continue; // next packet still in the future
            }
            let j = self.pick_server(i);
            // Oldest timestamp wins; ties to the lowest queue index, which
            // queue order already guarantees.
            if self.timestamps[i] < self.best_ts[j] {
                self.best_ts[j] = self.timestamps[i];
                self.best_queue[j] = i;
            }
        }

        for j in 0..m {
            let q = self.best_queue[j];
            if q == usize::MAX {
                continue;
            }
            if self.service_rng.random::<f64>() < self.inst.service_rate(j) {
                let advance = self.gaps[q].sample(&mut self.arrival_rng) + 1;
                self.timestamps[q] += advance;
                sink.cleared(q, j, advance);
            }
        }
        self.t += 1;
    }

    fn pick_server(&mut self, queue: usize) -> usize {
        let u: f64 = self.choice_rng.random();
        let row = self.profile.row(queue);
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.len() - 1
    }

    fn ages(&self) -> Vec<u64> {
        self.timestamps
            .iter()
            .map(|&ts| self.t.saturating_sub(ts))
            .collect()
    }
}

fn run_trial(
    profile: &StrategyProfile,
    inst: &Instance,
    seed: u64,
    trial: usize,
    checkpoints: &[u64],
) -> Trajectory {
    let mut engine = Engine::new(profile, inst, seed, trial);
    let mut recorded = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    while next < checkpoints.len() && checkpoints[next] == 0 {
        recorded.push((0, engine.ages()));
        next += 1;
    }
    let horizon = *checkpoints.last().expect("at least one checkpoint");
    let mut sink = NoopSink;
    for t in 1..=horizon {
        engine.step(&mut sink);
        while next < checkpoints.len() && checkpoints[next] == t {
            recorded.push((t, engine.ages()));
            next += 1;
        }
    }
    Trajectory {
        checkpoints: recorded,
        timestamps_final: engine.timestamps,
        seed,
        trial,
    }
}

/// Runs `cfg.trials` independent sample paths of the process, recording ages
/// every `cfg.checkpoint_stride` steps. Deterministic in `(seed, trial)`
/// regardless of trial-level parallelism.
pub fn simulate(
    profile: &StrategyProfile,
    inst: &Instance,
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>> {
    profile.check_dims(inst)?;
    cfg.validate()?;
    let checkpoints: Vec<u64> = (0..=horizon_steps(cfg))
        .map(|k| k * cfg.checkpoint_stride)
        .collect();
    Ok((0..cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(profile, inst, cfg.seed, trial, &checkpoints))
        .collect())
}

fn horizon_steps(cfg: &SimConfig) -> u64 {
    cfg.horizon / cfg.checkpoint_stride
}

// ---------------------------------------------------------------------------
// Empirical rates
// ---------------------------------------------------------------------------

/// Least-squares slope of each queue's age against time over the
/// post-burn-in checkpoints, clamped below at zero.
pub fn empirical_rates(traj: &Trajectory, burn_in_fraction: f64) -> Result<Vec<f64>> {
    if !(0.0..=0.9).contains(&burn_in_fraction) {
        return Err(Error::InvalidArgument(format!(
            "burn-in fraction {burn_in_fraction} outside [0, 0.9]"
        )));
    }
    let cutoff = (traj.horizon() as f64 * burn_in_fraction).ceil() as u64;
    let used: Vec<&(u64, Vec<u64>)> = traj
        .checkpoints
        .iter()
        .filter(|(t, _)| *t >= cutoff)
        .collect();
    if used.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {} checkpoints after burn-in; need at least 2",
            used.len()
        )));
    }
    let n = traj.n_queues();
    let count = used.len() as f64;
    let t_mean = used.iter().map(|(t, _)| *t as f64).sum::<f64>() / count;
    let t_var: f64 = used
        .iter()
        .map(|(t, _)| {
            let d = *t as f64 - t_mean;
            d * d
        })
        .sum();
    let mut slopes = Vec::with_capacity(n);
    for i in 0..n {
        let y_mean = used.iter().map(|(_, a)| a[i] as f64).sum::<f64>() / count;
        let cov: f64 = used
            .iter()
            .map(|(t, a)| (*t as f64 - t_mean) * (a[i] as f64 - y_mean))
            .sum();
        slopes.push((cov / t_var).max(0.0));
    }
    Ok(slopes)
}

// ---------------------------------------------------------------------------
// Convergence check
// ---------------------------------------------------------------------------

/// Comparison of trial-mean empirical slopes against the analytic rates.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub analytic: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    pub max_abs_deviation: f64,
    pub tol: f64,
    /// True iff every queue's mean slope is within `tol` of its rate.
    pub pass: bool,
    /// Analytic groups, fastest first.
    pub groups: Vec<SubsetMask>,
    /// Per trial: at the final checkpoint, does every faster group's
    /// youngest queue exceed every slower group's oldest queue?
    pub separation_per_trial: Vec<bool>,
    pub separated_trials: usize,
    pub trials: usize,
    pub burn_in_fraction: f64,
}

/// Simulates and compares empirical slopes against [`compute_rates`],
/// componentwise at tolerance `tol`, with the default 20% burn-in. The
/// report also counts how many trials show the analytic group separation at
/// the final checkpoint.
pub fn check_convergence(
    profile: &StrategyProfile,
    inst: &Instance,
    cfg: &SimConfig,
    tol: f64,
) -> Result<ConvergenceReport> {
    let part = compute_rates(profile, inst)?;
    let trajectories = simulate(profile, inst, cfg)?;
    convergence_report(&part, &trajectories, tol, DEFAULT_BURN_IN)
}

/// Report assembly split out so callers with existing trajectories (e.g. the
/// command line) can reuse it.
pub fn convergence_report(
    part: &RatePartition,
    trajectories: &[Trajectory],
    tol: f64,
    burn_in_fraction: f64,
) -> Result<ConvergenceReport> {
    let n = part.n_queues();
    let mut mean = vec![0.0; n];
    for traj in trajectories {
        for (i, s) in empirical_rates(traj, burn_in_fraction)?.iter().enumerate() {
            mean[i] += s / trajectories.len() as f64;
        }
    }
    let max_abs_deviation = part
        .per_queue
        .iter()
        .zip(&mean)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max);

    let separation_per_trial: Vec<bool> = trajectories
        .iter()
        .map(|traj| {
            let (_, ages) = traj.checkpoints.last().expect("nonempty checkpoints");
            part.groups.windows(2).all(|pair| {
                let older_min = pair[0].iter().map(|i| ages[i]).min().unwrap_or(0);
                let younger_max = pair[1].iter().map(|i| ages[i]).max().unwrap_or(0);
                older_min > younger_max
            })
        })
        .collect();
    let separated_trials = separation_per_trial.iter().filter(|&&b| b).count();

    Ok(ConvergenceReport {
        analytic: part.per_queue.clone(),
        empirical_mean: mean,
        max_abs_deviation,
        tol,
        pass: max_abs_deviation <= tol,
        groups: part.groups.clone(),
        separation_per_trial,
        separated_trials,
        trials: trajectories.len(),
        burn_in_fraction,
    })
}

// ---------------------------------------------------------------------------
// Strong-stability probe
// ---------------------------------------------------------------------------

/// Moment trend estimates for a strictly stable system.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityProbeReport {
    pub orders: Vec<u32>,
    /// Geometrically spaced observation times.
    pub checkpoints: Vec<u64>,
    /// `estimates[order][queue][checkpoint]` = trial-mean of age^order.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// Per order and queue: final estimate at most twice the median across
    /// checkpoints.
    pub pass: bool,
    pub trials: usize,
}

/// Estimates `E[age^r]` at geometrically spaced checkpoints for every
/// requested order `r`, across trials, and checks the estimates show no
/// upward trend. Requires the system to be strictly stable analytically:
/// every group's clearing ratio above 1.
pub fn probe_strong_stability(
    profile: &StrategyProfile,
    inst: &Instance,
    cfg: &SimConfig,
    orders: &[u32],
) -> Result<StabilityProbeReport> {
    profile.check_dims(inst)?;
    cfg.validate()?;
    let part = compute_rates(profile, inst)?;
    if let Some(k) = part.ratios.iter().position(|&f| f <= 1.0) {
        return Err(Error::Precondition(format!(
            "group {k} has clearing ratio {} <= 1; not strictly stable",
            part.ratios[k]
        )));
    }

    // Late-start geometric grid horizon/2^7 .. horizon, so the baseline
    // median sits past the initial transient.
    let mut checkpoints: Vec<u64> = (0..=7).rev().map(|s| cfg.horizon >> s).collect();
    checkpoints.retain(|&t| t > 0);
    checkpoints.dedup();

    let trajectories: Vec<Trajectory> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(profile, inst, cfg.seed, trial, &checkpoints))
        .collect();

    let n = inst.n_queues();
    let mut estimates = vec![vec![vec![0.0; checkpoints.len()]; n]; orders.len()];
    for traj in &trajectories {
        for (c, (_, ages)) in traj.checkpoints.iter().enumerate() {
            for (o, &r) in orders.iter().enumerate() {
                for i in 0..n {
                    estimates[o][i][c] += (ages[i] as f64).powi(r as i32) / cfg.trials as f64;
                }
            }
        }
    }

    let pass = estimates.iter().all(|per_queue| {
        per_queue.iter().all(|series| {
            let mut sorted = series.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted[sorted.len() / 2];
            *series.last().unwrap() <= 2.0 * median + 1e-12
        })
    });

    Ok(StabilityProbeReport {
        orders: orders.to_vec(),
        checkpoints,
        estimates,
        pass,
        trials: cfg.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn small_cfg(horizon: u64, trials: usize) -> SimConfig {
        SimConfig {
            horizon,
            trials,
            seed: 20_240_901,
            checkpoint_stride: horizon / 100,
        }
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg(1000, 2).validate().is_ok());
        for bad in [
            SimConfig { horizon: 0, trials: 1, seed: 0, checkpoint_stride: 1 },
            SimConfig { horizon: 10, trials: 0, seed: 0, checkpoint_stride: 1 },
            SimConfig { horizon: 10, trials: 1, seed: 0, checkpoint_stride: 3 },
            SimConfig { horizon: 10, trials: 1, seed: 0, checkpoint_stride: 0 },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn quiet_system_never_ages() {
        // Arrivals so sparse that nothing backs up over a short horizon.
        let inst = Instance::new(vec![0.01], vec![1.0]).unwrap();
        let p = StrategyProfile::uniform(1, 1);
        let cfg = SimConfig { horizon: 200, trials: 4, seed: 9, checkpoint_stride: 20 };
        for traj in simulate(&p, &inst, &cfg).unwrap() {
            for (_, ages) in &traj.checkpoints {
                assert!(ages[0] <= 1);
            }
        }
    }

    #[test]
    fn age_identity_holds_at_checkpoints() {
        let (inst, p) = fixtures::two_group_chain();
        let cfg = small_cfg(2000, 2);
        for traj in simulate(&p, &inst, &cfg).unwrap() {
            // Re-run the trial step-by-step and compare the invariant
            // max(0, t - timestamp) at each checkpoint.
            let mut engine = Engine::new(&p, &inst, cfg.seed, traj.trial);
            let mut sink = NoopSink;
            let mut idx = 0;
            for t in 0..=cfg.horizon {
                if idx < traj.checkpoints.len() && traj.checkpoints[idx].0 == t {
                    let expect: Vec<u64> = engine
                        .timestamps
                        .iter()
                        .map(|&ts| t.saturating_sub(ts))
                        .collect();
                    assert_eq!(traj.checkpoints[idx].1, expect);
                    idx += 1;
                }
                if t < cfg.horizon {
                    engine.step(&mut sink);
                }
            }
            assert_eq!(idx, traj.checkpoints.len());
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let (inst, p) = fixtures::two_group_chain();
        let cfg = small_cfg(5000, 6);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate(&p, &inst, &cfg).unwrap());
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| simulate(&p, &inst, &cfg).unwrap());
        for (a, b) in single.iter().zip(&multi) {
            assert_eq!(a.checkpoints, b.checkpoints);
            assert_eq!(a.timestamps_final, b.timestamps_final);
        }
    }

    struct Counting {
        per_server: Vec<u64>,
        advances: Vec<Vec<u64>>,
        step_clears: Vec<u64>,
    }
    impl StepSink for Counting {
        fn cleared(&mut self, queue: usize, server: usize, advance: u64) {
            self.per_server[server] += 1;
            self.advances[queue].push(advance);
            self.step_clears[server] += 1;
        }
    }

    #[test]
    fn server_conservation_and_gap_distribution() {
        let (inst, p) = fixtures::two_group_chain();
        let mut engine = Engine::new(&p, &inst, 77, 0);
        let mut sink = Counting {
            per_server: vec![0; 2],
            advances: vec![Vec::new(), Vec::new()],
            step_clears: vec![0; 2],
        };
        let steps = 200_000;
        for _ in 0..steps {
            sink.step_clears.fill(0);
            engine.step(&mut sink);
            // At most one packet cleared per server per step.
            assert!(sink.step_clears.iter().all(|&c| c <= 1));
        }
        // Both servers saw work in an overloaded system.
        assert!(sink.per_server.iter().all(|&c| c > 0));
        // Successful clears advance timestamps by geometric gaps with mean
        // 1/lambda; check within three standard errors.
        for (i, gaps) in sink.advances.iter().enumerate() {
            let lambda = inst.arrival_rate(i);
            let count = gaps.len() as f64;
            let mean = gaps.iter().sum::<u64>() as f64 / count;
            let expect = 1.0 / lambda;
            let sd = (1.0 - lambda).sqrt() / lambda;
            let tol = 3.0 * sd / count.sqrt();
            assert!(
                (mean - expect).abs() <= tol,
                "queue {i}: mean gap {mean} vs {expect} (tol {tol})"
            );
            assert!(gaps.iter().all(|&g| g >= 1));
        }
    }

    #[test]
    fn slopes_track_analytic_rates() {
        let (inst, p) = fixtures::single_unstable();
        let cfg = SimConfig { horizon: 200_000, trials: 6, seed: 3, checkpoint_stride: 2000 };
        let report = check_convergence(&p, &inst, &cfg, 0.02).unwrap();
        assert!(report.pass, "max dev {}", report.max_abs_deviation);
        assert!((report.analytic[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_group_separation() {
        let (inst, p) = fixtures::two_group_chain();
        let cfg = SimConfig { horizon: 100_000, trials: 6, seed: 5, checkpoint_stride: 1000 };
        let report = check_convergence(&p, &inst, &cfg, 0.02).unwrap();
        assert!(report.pass, "max dev {}", report.max_abs_deviation);
        assert_eq!(report.separated_trials, report.trials);
    }

    #[test]
    fn stable_system_stays_flat() {
        let (inst, p) = fixtures::single_stable();
        let cfg = SimConfig { horizon: 50_000, trials: 4, seed: 1, checkpoint_stride: 500 };
        let report = check_convergence(&p, &inst, &cfg, 0.01).unwrap();
        assert!(report.pass);
        assert!(report.empirical_mean[0] < 0.001);
    }

    #[test]
    fn empirical_rates_input_validation() {
        let (inst, p) = fixtures::single_stable();
        let cfg = SimConfig { horizon: 1000, trials: 1, seed: 0, checkpoint_stride: 100 };
        let traj = &simulate(&p, &inst, &cfg).unwrap()[0];
        assert!(empirical_rates(traj, 0.95).is_err());
        assert!(empirical_rates(traj, -0.1).is_err());
        assert!(empirical_rates(traj, 0.0).is_ok());

        // Constant-zero ages fit slope zero.
        let flat = Trajectory {
            checkpoints: (0..=10).map(|k| (k * 100, vec![0u64])).collect(),
            timestamps_final: vec![1000],
            seed: 0,
            trial: 0,
        };
        assert_eq!(empirical_rates(&flat, 0.2).unwrap(), vec![0.0]);
    }

    #[test]
    fn probe_requires_strict_stability() {
        let (inst, p) = fixtures::single_unstable();
        let cfg = small_cfg(1000, 2);
        assert!(matches!(
            probe_strong_stability(&p, &inst, &cfg, &[1]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn probe_bounded_moments() {
        let (inst, p) = fixtures::single_stable();
        let cfg = SimConfig { horizon: 100_000, trials: 8, seed: 11, checkpoint_stride: 100_000 };
        let report = probe_strong_stability(&p, &inst, &cfg, &[1, 2, 4]).unwrap();
        assert!(report.pass);
        assert_eq!(report.checkpoints.len(), 8);
    }
}
