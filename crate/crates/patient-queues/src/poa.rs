//! Price-of-anarchy machinery: the water-filling lower bound on the top
//! group's clearing ratio at any Nash equilibrium, the `e/(e-1)` capacity
//! threshold, and the mass-deformation diagnostic behind the bound.
//!
//! For any Nash profile whose top group has `k` queues, the clearing ratio
//! of that group is at least
//!
//! ```text
//! min{ 1, min_{k <= n} max_{x >= 0, sum x_j = k}
//!        sum_j mu_j (1 - (1 - x_j/k)^k) / sum_{i <= k} lambda_i }
//! ```
//!
//! The inner maximization is a concave water-filling problem: at the optimum
//! all servers receiving mass equalize the marginal value
//! `mu_j (1 - x_j/k)^(k-1)` and every idle server's `mu_j` sits below it.
//! Plugging `x_j = 1` shows that a capacity margin above `e/(e-1)` forces
//! the bound to 1, i.e. every queue is stable in every equilibrium, and the
//! symmetric uniform family shows that threshold is exact.
//!
//! [`deform_to_saturation`] walks the argument's deformation: queues of the
//! level partition, top level first, continuously move mass from
//! oversaturated to undersaturated servers. Launched from a certified Nash
//! profile this never increases the top group's clearing ratio, which is
//! precisely what the test suites check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    certify_nash, find_nash, level_partition, CostModel, NashSearchConfig, NashSearchOutcome,
};
use crate::error::{Error, Result};
use crate::instance::{Instance, StrategyProfile};
use crate::mask::SubsetMask;
use crate::rates::{clearing_ratio, compute_rates};

/// Capacity scaling threshold beyond which every equilibrium is stable:
/// `e / (e - 1)`, roughly 1.582.
pub const CRITICAL_MARGIN: f64 = std::f64::consts::E / (std::f64::consts::E - 1.0);

/// Bisection tolerance on the water-filling mass budget.
const MASS_TOL: f64 = 1e-9;

/// Mass moved per deformation sub-step, between stopping events.
const DEFORM_STEP: f64 = 1e-3;

/// Saturation slack: column sums within this of the target count as met.
const SAT_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Water-filling
// ---------------------------------------------------------------------------

/// Optimal saturation vector for one group size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaterfillSolution {
    /// Group size the bound is computed for.
    pub k: usize,
    /// Per-server mass, nonnegative, summing to `k`.
    pub x: Vec<f64>,
    /// The bound: maximized expected clears over the top-`k` arrival mass.
    pub value: f64,
}

/// Solves `max_x sum_j mu_j (1 - (1 - x_j/k)^k)` subject to `sum x_j = k`,
/// `x >= 0`, divided by the top-`k` arrival mass. Concavity reduces this to
/// a bisection on the common marginal value `t`: active servers take
/// `x_j = k (1 - (t/mu_j)^(1/(k-1)))`, idle ones have `mu_j <= t`.
pub fn waterfill_bound(k: usize, inst: &Instance) -> Result<WaterfillSolution> {
    if k == 0 || k > inst.n_queues() {
        return Err(Error::InvalidArgument(format!(
            "group size {k} outside 1..={}",
            inst.n_queues()
        )));
    }
    let mus = inst.service_rates();
    let m = mus.len();
    let denom: f64 = inst.arrival_rates()[..k].iter().sum();
    let kf = k as f64;

    if mus[0] <= 0.0 {
        // No live server: any split is optimal and clears nothing.
        return Ok(WaterfillSolution {
            k,
            x: vec![kf / m as f64; m],
            value: 0.0,
        });
    }

    if k == 1 {
        // Linear objective: the whole unit goes to the best server.
        let mut x = vec![0.0; m];
        x[0] = 1.0;
        return Ok(WaterfillSolution {
            k,
            x,
            value: mus[0] / denom,
        });
    }

    let exponent = 1.0 / (kf - 1.0);
    let mass_at = |t: f64| -> f64 {
        mus.iter()
            .filter(|&&mu| mu > t)
            .map(|&mu| kf * (1.0 - (t / mu).powf(exponent)))
            .sum()
    };

    // mass_at decreases from k * (live servers) at t=0 to 0 at t=mu_max.
    let (mut lo, mut hi) = (0.0, mus[0]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass_at(mid) >= kf {
            lo = mid;
        } else {
            hi = mid;
        }
        if (mass_at(lo) - kf).abs() <= MASS_TOL {
            break;
        }
    }
    let t = lo;
    let x: Vec<f64> = mus
        .iter()
        .map(|&mu| {
            if mu > t {
                kf * (1.0 - (t / mu).powf(exponent))
            } else {
                0.0
            }
        })
        .collect();
    let value = mus
        .iter()
        .zip(&x)
        .map(|(&mu, &xj)| mu * (1.0 - (1.0 - xj / kf).powi(k as i32)))
        .sum::<f64>()
        / denom;

    Ok(WaterfillSolution { k, x, value })
}

/// The instance-wide lower bound on the top group's clearing ratio at any
/// Nash equilibrium: `min(1, min_k waterfill_bound(k))`.
pub fn nash_lower_bound(inst: &Instance) -> Result<f64> {
    let mut bound = 1.0f64;
    for k in 1..=inst.n_queues() {
        bound = bound.min(waterfill_bound(k, inst)?.value);
    }
    Ok(bound)
}

/// Checks the bound on a Nash profile: the top group's clearing ratio,
/// clamped to 1 when the stable branch fired, must reach
/// [`nash_lower_bound`] up to `tol`. The profile must certify as Nash under
/// the aging-rate cost; anything else is rejected.
pub fn check_poa_bound(profile: &StrategyProfile, inst: &Instance, tol: f64) -> Result<bool> {
    let cert = certify_nash(profile, inst, tol, CostModel::AgingRate)?;
    if !cert.is_nash {
        return Err(Error::Precondition(format!(
            "profile is not a Nash equilibrium ({} violations)",
            cert.violations.len()
        )));
    }
    let part = compute_rates(profile, inst)?;
    Ok(part.top_ratio_clamped() >= nash_lower_bound(inst)? - tol)
}

// ---------------------------------------------------------------------------
// Stability-margin sweep
// ---------------------------------------------------------------------------

/// Configuration for [`verify_stability_margin`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginSweepConfig {
    /// Seeds for random initial profiles; the uniform profile always runs as
    /// an additional first trial.
    pub init_seeds: Vec<u64>,
    pub nash: NashSearchConfig,
}

impl Default for MarginSweepConfig {
    fn default() -> Self {
        MarginSweepConfig {
            init_seeds: vec![1, 2, 3],
            nash: NashSearchConfig::default(),
        }
    }
}

/// One equilibrium search in the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct MarginTrial {
    pub init_seed: Option<u64>,
    pub converged: bool,
    pub rounds: usize,
    pub all_stable: bool,
    /// Clearing ratio of the top group at the final profile.
    pub top_ratio: f64,
}

/// Report of [`verify_stability_margin`].
#[derive(Debug, Clone, Serialize)]
pub struct MarginSweepReport {
    /// Whether the capacity hypothesis holds: every prefix margin exceeds
    /// [`CRITICAL_MARGIN`].
    pub hypothesis_met: bool,
    /// The instance's smallest prefix capacity margin.
    pub feasibility_margin: f64,
    pub critical_margin: f64,
    pub trials: Vec<MarginTrial>,
    /// True iff the hypothesis holds and every certified equilibrium found
    /// has all queues stable.
    pub pass: bool,
}

/// Sweeps equilibrium searches from several initial profiles and checks that
/// every certified equilibrium is fully stable, as the capacity threshold
/// guarantees whenever every prefix margin exceeds `e/(e-1)`. A failed
/// hypothesis is reported, not an error.
pub fn verify_stability_margin(inst: &Instance, cfg: &MarginSweepConfig) -> Result<MarginSweepReport> {
    let margin = inst.feasibility_margin();
    let hypothesis_met = margin > CRITICAL_MARGIN;
    let (n, m) = (inst.n_queues(), inst.n_servers());

    let mut inits: Vec<(Option<u64>, StrategyProfile)> =
        vec![(None, StrategyProfile::uniform(n, m))];
    for &s in &cfg.init_seeds {
        inits.push((Some(s), StrategyProfile::random(n, m, s, 0.0)));
    }

    // Trials are independent; results merge in init order.
    let trials: Vec<MarginTrial> = inits
        .into_par_iter()
        .map(|(init_seed, init)| -> Result<MarginTrial> {
            let out: NashSearchOutcome = find_nash(inst, init, &cfg.nash)?;
            let part = compute_rates(&out.profile, inst)?;
            Ok(MarginTrial {
                init_seed,
                converged: out.converged,
                rounds: out.rounds,
                all_stable: part.all_stable(),
                top_ratio: part.ratios[0],
            })
        })
        .collect::<Result<_>>()?;

    let pass = hypothesis_met
        && trials
            .iter()
            .filter(|t| t.converged)
            .all(|t| t.all_stable);

    Ok(MarginSweepReport {
        hypothesis_met,
        feasibility_margin: margin,
        critical_margin: CRITICAL_MARGIN,
        trials,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Deformation
// ---------------------------------------------------------------------------

/// The sampled path of a saturation deformation: one entry per sub-step.
#[derive(Debug, Clone, Serialize)]
pub struct DeformationTrace {
    /// Profile snapshots after each sub-step; empty when already saturated.
    pub profiles: Vec<StrategyProfile>,
    /// Clearing ratio of the (fixed) top group after each sub-step.
    pub f_values: Vec<f64>,
    /// The top group the path deforms.
    pub top_group: SubsetMask,
}

/// Continuously moves top-group mass from oversaturated to undersaturated
/// servers until the column sums over the top group equal `x`. Queues are
/// processed by level, top level first, in increasing index order; transfer
/// pairs take the lowest oversaturated and lowest undersaturated server
/// indices first. Sub-steps are clipped at saturation boundaries and at
/// coordinate zero crossings.
///
/// The caller supplies a certified Nash profile whose top group is unstable;
/// along such a path the top group's clearing ratio never increases. A stall
/// (an oversaturated server this process cannot drain) is reported loudly as
/// an error since it cannot happen for a genuine equilibrium.
pub fn deform_to_saturation(
    profile: &StrategyProfile,
    inst: &Instance,
    x: &[f64],
) -> Result<DeformationTrace> {
    profile.check_dims(inst)?;
    let part = compute_rates(profile, inst)?;
    if part.ratios[0] >= 1.0 {
        return Err(Error::Precondition(format!(
            "top group is stable (ratio {}); nothing to deform",
            part.ratios[0]
        )));
    }
    let top = part.groups[0];
    let k = top.len();
    let m = inst.n_servers();
    if x.len() != m {
        return Err(Error::InvalidArgument(format!(
            "target vector has {} entries for {m} servers",
            x.len()
        )));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("target mass must be nonnegative".into()));
    }
    let total: f64 = x.iter().sum();
    if (total - k as f64).abs() > MASS_TOL {
        return Err(Error::InvalidArgument(format!(
            "target mass sums to {total}, expected the top group size {k}"
        )));
    }

    let lp = level_partition(profile, inst)?;
    let mut work = profile.clone();
    let mut col: Vec<f64> = (0..m)
        .map(|j| top.iter().map(|i| work.prob(i, j)).sum())
        .collect();

    let mut trace = DeformationTrace {
        profiles: Vec::new(),
        f_values: Vec::new(),
        top_group: top,
    };

    // Top level first; inside a level, queues in increasing index order.
    for level in lp.levels.iter().rev() {
        let mut queues: Vec<usize> = level.iter().flat_map(|s| s.iter()).collect();
        queues.sort_unstable();
        for &i in &queues {
            loop {
                let over = (0..m)
                    .find(|&j| col[j] > x[j] + SAT_TOL && work.prob(i, j) > 1e-15);
                let Some(j_over) = over else { break };
                let Some(j_under) = (0..m).find(|&j| col[j] < x[j] - SAT_TOL) else {
                    return Err(Error::DeformationStall {
                        server: j_over,
                        excess: col[j_over] - x[j_over],
                    });
                };
                let step = DEFORM_STEP
                    .min(work.prob(i, j_over))
                    .min(col[j_over] - x[j_over])
                    .min(x[j_under] - col[j_under]);
                let row = work.row_mut(i);
                row[j_over] -= step;
                if row[j_over] < 1e-15 {
                    row[j_over] = 0.0;
                }
                row[j_under] += step;
                col[j_over] -= step;
                col[j_under] += step;
                trace.f_values.push(clearing_ratio(
                    top,
                    SubsetMask::EMPTY,
                    &work,
                    inst.service_rates(),
                    inst.arrival_rates(),
                )?);
                trace.profiles.push(work.clone());
            }
        }
    }

    if let Some(j) = (0..m).find(|&j| col[j] > x[j] + SAT_TOL) {
        return Err(Error::DeformationStall {
            server: j,
            excess: col[j] - x[j],
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::instance::symmetric_instance;

    #[test]
    fn waterfill_single_unit() {
        let inst = fixtures::fast_slow_pair();
        let w = waterfill_bound(1, &inst).unwrap();
        assert_eq!(w.x, vec![1.0, 0.0]);
        assert!((w.value - 1.0 / 0.51).abs() < 1e-12);
    }

    #[test]
    fn waterfill_symmetric_spreads_evenly() {
        let (inst, _) = symmetric_instance(4, 0.05).unwrap();
        let w = waterfill_bound(4, &inst).unwrap();
        for &xj in &w.x {
            assert!((xj - 1.0).abs() < 1e-6, "x = {:?}", w.x);
        }
        let lambda = inst.arrival_rate(0);
        let expect = (1.0 - (0.75f64).powi(4)) / lambda;
        assert!((w.value - expect).abs() < 1e-9);
    }

    #[test]
    fn waterfill_two_servers_hand_value() {
        // For k=2 the marginal condition is linear: t = 0.49/1.49, giving
        // x = (2(1-t), 2(1-t/0.49)) and value 1.1383734...
        let inst = fixtures::fast_slow_pair();
        let w = waterfill_bound(2, &inst).unwrap();
        let t = 0.49 / 1.49;
        assert!((w.x[0] - 2.0 * (1.0 - t)).abs() < 1e-7);
        assert!((w.x[1] - 2.0 * (1.0 - t / 0.49)).abs() < 1e-7);
        let expect = (1.0 * (1.0 - t * t) + 0.49 * (1.0 - (t / 0.49).powi(2))) / 1.02;
        assert!((w.value - expect).abs() < 1e-9);
        assert!((w.x[0] + w.x[1] - 2.0).abs() < 1e-9);
        // KKT equalization across the active servers.
        let m0 = 1.0 * (1.0 - w.x[0] / 2.0);
        let m1 = 0.49 * (1.0 - w.x[1] / 2.0);
        assert!((m0 - m1).abs() < 1e-7);
    }

    #[test]
    fn waterfill_rejects_bad_k() {
        let inst = fixtures::fast_slow_pair();
        assert!(waterfill_bound(0, &inst).is_err());
        assert!(waterfill_bound(3, &inst).is_err());
    }

    #[test]
    fn lower_bound_values() {
        // min(1, min(1.96.., 1.138..)) clamps to 1: every Nash of this
        // instance is stable.
        let inst = fixtures::fast_slow_pair();
        assert_eq!(nash_lower_bound(&inst).unwrap(), 1.0);

        let (sym8, _) = symmetric_instance(8, 0.05).unwrap();
        let lambda = sym8.arrival_rate(0);
        let expect = (1.0 - (1.0 - 1.0 / 8.0f64).powi(8)) / lambda;
        assert!((nash_lower_bound(&sym8).unwrap() - expect).abs() < 1e-9);
        assert!(expect < 1.0);

        let single = crate::instance::Instance::new(vec![0.5], vec![0.9]).unwrap();
        assert_eq!(nash_lower_bound(&single).unwrap(), 1.0);
    }

    #[test]
    fn bound_holds_with_equality_on_symmetric_family() {
        let (inst, p) = symmetric_instance(8, 0.05).unwrap();
        assert!(check_poa_bound(&p, &inst, 1e-6).unwrap());
        let part = compute_rates(&p, &inst).unwrap();
        let bound = nash_lower_bound(&inst).unwrap();
        assert!((part.ratios[0] - bound).abs() < 1e-9);
    }

    #[test]
    fn bound_trivial_for_stable_nash() {
        let inst = crate::instance::Instance::new(vec![0.5], vec![0.9]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        assert!(check_poa_bound(&p, &inst, 1e-6).unwrap());
    }

    #[test]
    fn bound_rejects_non_nash_input() {
        let inst = fixtures::fast_slow_pair();
        assert!(matches!(
            check_poa_bound(&fixtures::both_on_fast(), &inst, 1e-6),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn margin_sweep_on_scaled_symmetric() {
        let (inst, _) = symmetric_instance(8, 0.05).unwrap();
        let alpha = CRITICAL_MARGIN * 1.01 / inst.feasibility_margin();
        let scaled = inst.scale(alpha.max(1.0)).unwrap();
        let report = verify_stability_margin(&scaled, &MarginSweepConfig::default()).unwrap();
        assert!(report.hypothesis_met);
        assert!(report.pass, "trials: {:?}", report.trials);
    }

    #[test]
    fn margin_sweep_reports_unmet_hypothesis() {
        let inst = fixtures::fast_slow_pair();
        let report = verify_stability_margin(&inst, &MarginSweepConfig::default()).unwrap();
        assert!(!report.hypothesis_met);
        assert!(!report.pass);
    }

    #[test]
    fn deform_noop_when_saturated() {
        // Uniform symmetric play already has unit column sums.
        let (inst, p) = symmetric_instance(8, 0.05).unwrap();
        let trace = deform_to_saturation(&p, &inst, &vec![1.0; 8]).unwrap();
        assert!(trace.profiles.is_empty());
        assert!(trace.f_values.is_empty());
    }

    #[test]
    fn deform_nested_fixture_monotone() {
        let (inst, p) = fixtures::inner_outer();
        let w = waterfill_bound(4, &inst).unwrap();
        let start = compute_rates(&p, &inst).unwrap().ratios[0];
        let trace = deform_to_saturation(&p, &inst, &w.x).unwrap();
        assert!(!trace.f_values.is_empty());
        let mut prev = start;
        for &f in &trace.f_values {
            assert!(f <= prev + 1e-9, "ratio rose from {prev} to {f}");
            prev = f;
        }
        // Terminates saturated.
        let last = trace.profiles.last().unwrap();
        for j in 0..inst.n_servers() {
            let col: f64 = trace.top_group.iter().map(|i| last.prob(i, j)).sum();
            assert!(col <= w.x[j] + 1e-9, "server {j}: {col} > {}", w.x[j]);
        }
        // The end of the path lower-bounds the Nash value.
        assert!(*trace.f_values.last().unwrap() >= w.value / 2.0);
    }

    #[test]
    fn deform_rejects_bad_targets() {
        let (inst, p) = fixtures::inner_outer();
        assert!(deform_to_saturation(&p, &inst, &[1.0, 1.0]).is_err());
        assert!(deform_to_saturation(&p, &inst, &[5.0, -0.5, -0.5]).is_err());
        let (stable, sp) = fixtures::single_stable();
        assert!(matches!(
            deform_to_saturation(&sp, &stable, &[1.0]),
            Err(Error::Precondition(_))
        ));
    }
}
