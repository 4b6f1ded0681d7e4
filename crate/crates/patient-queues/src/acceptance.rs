//! The validation suite behind `pq selftest` and the `acceptance`
//! integration test target: one runner per criterion, each returning a
//! pass/fail verdict with a one-line summary.
//!
//! Expected values are frozen from hand derivations; randomized corpora are
//! seeded and fixed. Independent oracles (grid search for the water-filling
//! bound, exhaustive enumeration against the parametric route, the analytic
//! rates against simulated slopes) live here rather than in the modules they
//! check.

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibrium::{
    certify_nash, find_nash, CostModel, NashSearchConfig, UpdateOrder,
};
use crate::error::Result;
use crate::fixtures;
use crate::instance::{
    canonical_instance_json, random_feasible, symmetric_instance, Instance, StrategyProfile,
};
use crate::mask::SubsetMask;
use crate::poa::{deform_to_saturation, nash_lower_bound, waterfill_bound};
use crate::rates::{
    clearing_ratio, compute_rates, expected_clears, tight_family, tight_family_parametric,
};
use crate::sim::{check_convergence, probe_strong_stability, SimConfig};

/// Verdict for one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

pub const CRITERIA: [(usize, &str); 12] = [
    (1, "rate-algorithm exactness"),
    (2, "stabilizing deviation"),
    (3, "structural property suite"),
    (4, "line structure"),
    (5, "parametric oracle equivalence"),
    (6, "water-filling"),
    (7, "equilibrium bound"),
    (8, "capacity threshold"),
    (9, "deformation monotonicity"),
    (10, "simulation convergence"),
    (11, "strong-stability probe"),
    (12, "determinism"),
];

/// Runs the selected criteria (all twelve by default). `bin` is the path to
/// the `pq` binary, exercised by the determinism criterion.
pub fn run(only: Option<&[usize]>, bin: &Path) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .filter(|(id, _)| only.is_none_or(|ids| ids.contains(id)))
        .map(|&(id, name)| {
            let outcome = std::panic::catch_unwind(|| dispatch(id, bin));
            let (passed, details) = match outcome {
                Ok(Ok(pair)) => pair,
                Ok(Err(e)) => (false, format!("error: {e}")),
                Err(_) => (false, "panicked".to_string()),
            };
            CriterionResult { id, name, passed, details }
        })
        .collect()
}

fn dispatch(id: usize, bin: &Path) -> Result<(bool, String)> {
    match id {
        1 => rate_exactness(),
        2 => stabilizing_deviation(),
        3 => structural_suite(),
        4 => line_structure(),
        5 => parametric_equivalence(),
        6 => water_filling(),
        7 => equilibrium_bound(),
        8 => capacity_threshold(),
        9 => deformation_monotonicity(),
        10 => simulation_convergence(),
        11 => strong_stability(),
        12 => determinism(bin),
        _ => Ok((false, format!("unknown criterion {id}"))),
    }
}

// ---------------------------------------------------------------------------
// 1–2: exact rate values
// ---------------------------------------------------------------------------

fn rate_exactness() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut check = |actual: f64, expect: f64| {
        worst = worst.max((actual - expect).abs());
    };

    let (inst, p) = fixtures::single_unstable();
    check(compute_rates(&p, &inst)?.per_queue[0], 0.5);

    let inst = fixtures::fast_slow_pair();
    let part = compute_rates(&fixtures::both_on_fast(), &inst)?;
    check(part.per_queue[0], 1.0 - 1.0 / 1.02);
    check(part.per_queue[1], 1.0 - 1.0 / 1.02);

    let (inst, p) = fixtures::two_group_chain();
    let part = compute_rates(&p, &inst)?;
    check(part.per_queue[0], 1.0 - 0.6 / 0.9);
    check(part.per_queue[1], 0.6);

    Ok((worst <= 1e-12, format!("max |rate error| = {worst:.2e}")))
}

fn stabilizing_deviation() -> Result<(bool, String)> {
    let inst = fixtures::fast_slow_pair();
    let part = compute_rates(&fixtures::tilted_deviation(), &inst)?;
    let pass = part.per_queue == vec![0.0, 0.0] && part.ratios[0] > 1.0;
    Ok((
        pass,
        format!("rates {:?}, top ratio {:.6}", part.per_queue, part.ratios[0]),
    ))
}

// ---------------------------------------------------------------------------
// 3: structural properties on a random corpus
// ---------------------------------------------------------------------------

fn random_nonempty_subset(rng: &mut ChaCha8Rng, of: SubsetMask) -> SubsetMask {
    let members = of.indices();
    loop {
        let picked: Vec<usize> = members
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < 0.5)
            .collect();
        if !picked.is_empty() {
            return SubsetMask::from_indices(&picked);
        }
    }
}

fn alpha_or_zero(
    s: SubsetMask,
    priority: SubsetMask,
    p: &StrategyProfile,
    services: &[f64],
) -> f64 {
    if s.is_empty() {
        0.0
    } else {
        expected_clears(s, priority, p, services).expect("disjoint by construction")
    }
}

fn corpus_pair(rng: &mut ChaCha8Rng, n_max: usize, m_max: usize) -> (Instance, StrategyProfile) {
    let n = rng.random_range(1..=n_max);
    let m = rng.random_range(1..=m_max);
    let margin = rng.random_range(0.9..1.7f64).max(1.0);
    let inst = random_feasible(n, m, margin, rng.random()).expect("generator succeeds");
    let profile = StrategyProfile::random(n, m, rng.random(), 0.3);
    (inst, profile)
}

fn structural_suite() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5u64);
    let mut violations = Vec::new();
    const TOL: f64 = 1e-9;

    for case in 0..500 {
        // Sprinkle in exact-tie systems so closure and disjoint mixing are
        // exercised on degenerate families too.
        let (inst, profile) = if case % 25 == 0 {
            let k = 2 + case % 3;
            let inst = Instance::new(vec![0.5; k], vec![0.2; k]).unwrap();
            let rows = (0..k)
                .map(|i| {
                    let mut row = vec![0.0; k];
                    row[i] = 1.0;
                    row
                })
                .collect();
            (inst, StrategyProfile::new(rows).unwrap())
        } else {
            corpus_pair(&mut rng, 6, 4)
        };
        let n = inst.n_queues();
        let full = SubsetMask::full(n);
        let services = inst.service_rates();
        let arrivals = inst.arrival_rates();

        // Submodularity of expected clears under a random priority set.
        for _ in 0..20 {
            let priority = if n > 1 && rng.random::<f64>() < 0.3 {
                random_nonempty_subset(&mut rng, full).remove(n - 1)
            } else {
                SubsetMask::EMPTY
            };
            let rest = full.difference(priority);
            if rest.is_empty() {
                continue;
            }
            let s = random_nonempty_subset(&mut rng, rest);
            let t = random_nonempty_subset(&mut rng, rest);
            let lhs = alpha_or_zero(s.intersection(t), priority, &profile, services)
                + alpha_or_zero(s.union(t), priority, &profile, services);
            let rhs = alpha_or_zero(s, priority, &profile, services)
                + alpha_or_zero(t, priority, &profile, services);
            if lhs > rhs + TOL {
                violations.push(format!("case {case}: submodularity {lhs} > {rhs}"));
            }
        }

        // Closure of the minimizer family; disjoint co-minimizers must use
        // disjoint server supports.
        let fam = tight_family(full, SubsetMask::EMPTY, &profile, services, arrivals)?;
        let cutoff = fam.value + TOL * (1.0 + fam.value);
        let ratio = |s: SubsetMask| {
            clearing_ratio(s, SubsetMask::EMPTY, &profile, services, arrivals)
                .expect("nonempty subset")
        };
        for (a_idx, &a) in fam.minimizers.iter().enumerate() {
            for &b in fam.minimizers.iter().skip(a_idx + 1) {
                if ratio(a.union(b)) > cutoff {
                    violations.push(format!("case {case}: union {}∪{} not tight", a, b));
                }
                let meet = a.intersection(b);
                if !meet.is_empty() && ratio(meet) > cutoff {
                    violations.push(format!("case {case}: intersection {} not tight", meet));
                }
                if meet.is_empty() {
                    let sup = |s: SubsetMask| {
                        let mut servers = SubsetMask::EMPTY;
                        for i in s.iter() {
                            for j in 0..profile.n_servers() {
                                if profile.prob(i, j) > 1e-12 {
                                    servers = servers.insert(j);
                                }
                            }
                        }
                        servers
                    };
                    if !sup(a).is_disjoint(sup(b)) {
                        violations
                            .push(format!("case {case}: disjoint minimizers {a},{b} share servers"));
                    }
                }
            }
        }

        // Strict rate monotonicity across groups.
        let part = compute_rates(&profile, &inst)?;
        for w in part.rates.windows(2) {
            if w[0] > 0.0 && w[0] - w[1] <= TOL {
                violations.push(format!("case {case}: rates {} then {}", w[0], w[1]));
            }
        }

        // Fractional-sum decomposition and sandwich.
        if n >= 2 {
            for _ in 0..20 {
                let t_set = if rng.random::<f64>() < 0.4 {
                    random_nonempty_subset(&mut rng, full)
                } else {
                    SubsetMask::EMPTY
                };
                let rest = full.difference(t_set);
                if rest.len() < 2 {
                    continue;
                }
                let s = random_nonempty_subset(&mut rng, rest);
                let s2 = rest.difference(s);
                if s2.is_empty() || s == rest {
                    continue;
                }
                let f_s = clearing_ratio(s, t_set, &profile, services, arrivals)?;
                let f_s2_cond = clearing_ratio(s2, s.union(t_set), &profile, services, arrivals)?;
                let f_union = clearing_ratio(s.union(s2), t_set, &profile, services, arrivals)?;
                let mass =
                    |x: SubsetMask| x.iter().map(|i| arrivals[i]).sum::<f64>();
                let rebuilt = (alpha_or_zero(s, t_set, &profile, services)
                    + alpha_or_zero(s2, s.union(t_set), &profile, services))
                    / (mass(s) + mass(s2));
                if (f_union - rebuilt).abs() > 1e-12 * (1.0 + f_union.abs()) {
                    violations.push(format!("case {case}: decomposition {f_union} vs {rebuilt}"));
                }
                if f_union < f_s.min(f_s2_cond) - TOL || f_union > f_s.max(f_s2_cond) + TOL {
                    violations.push(format!(
                        "case {case}: sandwich {f_s} / {f_union} / {f_s2_cond}"
                    ));
                }
            }
        }
    }

    let pass = violations.is_empty();
    let details = if pass {
        "500 systems, zero violations".to_string()
    } else {
        format!("{} violations; first: {}", violations.len(), violations[0])
    };
    Ok((pass, details))
}

// ---------------------------------------------------------------------------
// 4: no interior strict local maxima along single-queue lines
// ---------------------------------------------------------------------------

fn line_structure() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11e5u64);
    let mut lines = Vec::new();
    for _ in 0..200 {
        let n = rng.random_range(2..=6usize);
        let m = rng.random_range(2..=4usize);
        let inst = random_feasible(n, m, 1.0, rng.random()).expect("generator succeeds");
        let profile = StrategyProfile::random(n, m, rng.random(), 0.2);
        let i = rng.random_range(0..n);
        let other = crate::instance::StrategyProfile::random(n, m, rng.random(), 0.2)
            .row(i)
            .to_vec();
        lines.push((inst, profile, i, other));
    }

    let violations: usize = lines
        .par_iter()
        .map(|(inst, profile, i, other)| {
            let a = profile.row(*i).to_vec();
            let mut work = profile.clone();
            let mut values = Vec::with_capacity(1001);
            for k in 0..=1000 {
                let t = k as f64 / 1000.0;
                let row: Vec<f64> = a
                    .iter()
                    .zip(other)
                    .map(|(x, y)| t * x + (1.0 - t) * y)
                    .collect();
                *work.row_mut(*i) = row;
                let part = compute_rates(&work, inst).expect("valid inputs");
                values.push(part.per_queue[*i]);
            }
            values
                .windows(3)
                .filter(|w| w[1] > w[0] + 1e-9 && w[1] > w[2] + 1e-9)
                .count()
        })
        .sum();

    Ok((
        violations == 0,
        format!("200 lines x 1001 points, {violations} interior strict maxima"),
    ))
}

// ---------------------------------------------------------------------------
// 5: enumeration vs parametric search
// ---------------------------------------------------------------------------

fn parametric_equivalence() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1_4bu64);
    let mut cases = Vec::new();
    for _ in 0..200 {
        let n = rng.random_range(1..=12usize);
        let m = rng.random_range(1..=4usize);
        let inst = random_feasible(n, m, 1.0, rng.random()).expect("generator succeeds");
        let profile = StrategyProfile::random(n, m, rng.random(), 0.25);
        cases.push((inst, profile));
    }
    let mut worst = 0.0f64;
    let mut mismatches = 0usize;
    for (inst, profile) in &cases {
        let full = SubsetMask::full(inst.n_queues());
        let brute = tight_family(
            full,
            SubsetMask::EMPTY,
            profile,
            inst.service_rates(),
            inst.arrival_rates(),
        )?;
        let param = tight_family_parametric(
            full,
            SubsetMask::EMPTY,
            profile,
            inst.service_rates(),
            inst.arrival_rates(),
        )?;
        worst = worst.max((brute.value - param.value).abs());
        if brute.maximal != param.maximal {
            mismatches += 1;
        }
    }
    Ok((
        worst <= 1e-9 && mismatches == 0,
        format!("200 systems, max |Δvalue| = {worst:.2e}, {mismatches} set mismatches"),
    ))
}

// ---------------------------------------------------------------------------
// 6: water-filling against a grid oracle
// ---------------------------------------------------------------------------

/// Independent maximization of the water-filling objective on a simplex
/// lattice with normalized step 1e-3 (hierarchically refined for m = 4,
/// which concavity makes safe).
fn waterfill_grid_value(mus: &[f64], k: usize, denom: f64) -> f64 {
    let kf = k as f64;
    let objective = |x: &[f64]| -> f64 {
        mus.iter()
            .zip(x)
            .map(|(&mu, &xj)| mu * (1.0 - (1.0 - xj / kf).powi(k as i32)))
            .sum::<f64>()
            / denom
    };
    match mus.len() {
        1 => objective(&[kf]),
        2 => {
            let mut best = f64::NEG_INFINITY;
            for a in 0..=1000 {
                let x0 = kf * a as f64 / 1000.0;
                best = best.max(objective(&[x0, kf - x0]));
            }
            best
        }
        3 => {
            let mut best = f64::NEG_INFINITY;
            for a in 0..=1000 {
                let x0 = kf * a as f64 / 1000.0;
                for b in 0..=(1000 - a) {
                    let x1 = kf * b as f64 / 1000.0;
                    best = best.max(objective(&[x0, x1, kf - x0 - x1]));
                }
            }
            best
        }
        4 => {
            // Coarse-to-fine: 1/20 then 1/200 then 1/2000 normalized steps,
            // starting from a window that covers the whole box. Concavity
            // keeps the optimum within one coarse cell of each level's best.
            let mut center = [kf / 2.0; 3];
            let mut half_width = kf / 2.0;
            let mut best = f64::NEG_INFINITY;
            for _ in 0..3 {
                let step = half_width / 10.0;
                let mut next = center;
                for a in -10..=10i64 {
                    let x0 = (center[0] + a as f64 * step).clamp(0.0, kf);
                    for b in -10..=10i64 {
                        let x1 = (center[1] + b as f64 * step).clamp(0.0, kf);
                        for c in -10..=10i64 {
                            let x2 = (center[2] + c as f64 * step).clamp(0.0, kf);
                            let x3 = kf - x0 - x1 - x2;
                            if x3 < 0.0 {
                                continue;
                            }
                            let v = objective(&[x0, x1, x2, x3]);
                            if v > best {
                                best = v;
                                next = [x0, x1, x2];
                            }
                        }
                    }
                }
                center = next;
                half_width = step;
            }
            best
        }
        _ => unreachable!("oracle supports m <= 4"),
    }
}

fn water_filling() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3a7eu64);
    let mut failures = Vec::new();
    let mut grid_gap = 0.0f64;

    for case in 0..50 {
        let n = rng.random_range(1..=6usize);
        let m = rng.random_range(1..=4usize);
        let inst = random_feasible(n, m, 1.0, rng.random()).expect("generator succeeds");

        // k = 1 is the closed-form special case.
        let w1 = waterfill_bound(1, &inst)?;
        if (w1.value - inst.service_rate(0) / inst.arrival_rate(0)).abs() > 1e-15 {
            failures.push(format!("case {case}: k=1 value {}", w1.value));
        }

        for k in 1..=n {
            let w = waterfill_bound(k, &inst)?;
            let kf = k as f64;
            if (w.x.iter().sum::<f64>() - kf).abs() > 1e-9 {
                failures.push(format!("case {case}: k={k} mass {}", w.x.iter().sum::<f64>()));
            }
            // KKT: active servers equalize the marginal value; idle servers
            // sit below it.
            if k > 1 {
                let marginals: Vec<f64> = inst
                    .service_rates()
                    .iter()
                    .zip(&w.x)
                    .map(|(&mu, &xj)| mu * (1.0 - xj / kf).powi(k as i32 - 1))
                    .collect();
                let active: Vec<f64> = marginals
                    .iter()
                    .zip(&w.x)
                    .filter(|(_, &xj)| xj > 1e-9)
                    .map(|(&t, _)| t)
                    .collect();
                if let (Some(max), Some(min)) = (
                    active.iter().copied().reduce(f64::max),
                    active.iter().copied().reduce(f64::min),
                ) {
                    if max - min > 1e-7 {
                        failures.push(format!("case {case}: k={k} KKT spread {}", max - min));
                    }
                    for (j, (&mu, &xj)) in inst.service_rates().iter().zip(&w.x).enumerate() {
                        if xj <= 1e-9 && mu > max + 1e-7 {
                            failures.push(format!("case {case}: k={k} idle server {j} above cut"));
                        }
                    }
                }
            }
            let denom: f64 = inst.arrival_rates()[..k].iter().sum();
            let grid = waterfill_grid_value(inst.service_rates(), k, denom);
            if w.value < grid - 1e-6 {
                failures.push(format!("case {case}: k={k} below grid by {}", grid - w.value));
            }
            // The grid undershoots the true maximum by at most its
            // discretization error; a larger gap means the oracle is broken.
            if w.value > grid + 1e-4 {
                failures.push(format!("case {case}: k={k} grid oracle off by {}", w.value - grid));
            }
            grid_gap = grid_gap.max((w.value - grid).abs());
        }
    }

    let pass = failures.is_empty();
    let details = if pass {
        format!("50 systems, KKT met, max |value - grid| = {grid_gap:.2e}")
    } else {
        format!("{} failures; first: {}", failures.len(), failures[0])
    };
    Ok((pass, details))
}

// ---------------------------------------------------------------------------
// 7 & 9: equilibria on a random corpus
// ---------------------------------------------------------------------------

fn nash_corpus_config() -> NashSearchConfig {
    NashSearchConfig {
        max_rounds: 60,
        tol: 1e-6,
        damping: 0.5,
        order: UpdateOrder::RoundRobin,
        cost_model: CostModel::AgingRate,
    }
}

/// A randomized variant of the nested two-level system: inner queues 0,1
/// split between the middle server and their own outer server with weight
/// `b`, outer queues 2,3 are exclusive. Arrival rates are chosen so every
/// union of the inner pair with outer singletons is tight at `f_star < 1`,
/// and the marginal server values make the profile a Nash equilibrium.
fn nested_system(rng: &mut ChaCha8Rng) -> (Instance, StrategyProfile) {
    loop {
        let b: f64 = rng.random_range(0.5..0.58);
        let mu_outer_floor = (b * b / (1.0 - b)).max(b) + 0.03;
        let mu_outer = rng.random_range(mu_outer_floor..0.98);
        let f_star = rng.random_range(0.78..0.96);
        let lambda_outer = mu_outer * (1.0 - b) / f_star;
        let lambda_inner = (2.0 * mu_outer * b + (1.0 - b * b)) / (2.0 * f_star);
        if lambda_inner >= 0.999 || lambda_outer >= lambda_inner {
            continue;
        }
        let inst = Instance::new(
            vec![lambda_inner, lambda_inner, lambda_outer, lambda_outer],
            vec![1.0, mu_outer, mu_outer],
        )
        .expect("rates in range by construction");
        let profile = StrategyProfile::new(vec![
            vec![1.0 - b, b, 0.0],
            vec![1.0 - b, 0.0, b],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .expect("rows are distributions");
        return (inst, profile);
    }
}

/// The deterministic corpus shared by criteria 7 and 9: 100 feasible
/// systems with up to 4 queues and 3 servers, paired with the initial
/// profile the equilibrium search starts from. Generic systems start
/// uniform and tend to stabilize; symmetric and nested ones carry
/// equilibria whose top group genuinely ages, which criterion 9 deforms.
fn equilibrium_corpus() -> Vec<(Instance, StrategyProfile)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0_97u64);
    (0..100)
        .map(|idx| match idx % 5 {
            // Symmetric overloaded mixing: uniform play is an equilibrium
            // and ages whenever the margin sits below the threshold.
            0 => {
                let n = 3 + (idx / 5) % 2;
                let m = 2.min(n - 1);
                let margin = 1.02 + 0.25 * rng.random::<f64>();
                let lambda = (m as f64 / margin / n as f64).min(0.95);
                let inst = Instance::new(vec![lambda; n], vec![1.0; m]).expect("valid rates");
                (inst, StrategyProfile::uniform(n, m))
            }
            // Nested two-level systems started at their designed profile.
            1 => nested_system(&mut rng),
            // Generic spread of sizes and margins from the uniform start.
            _ => {
                let n = 1 + idx % 4;
                let m = 1 + (idx / 4) % 3;
                let margin = 1.02 + 0.68 * rng.random::<f64>();
                let inst =
                    random_feasible(n, m, margin, rng.random()).expect("generator succeeds");
                let uniform = StrategyProfile::uniform(inst.n_queues(), inst.n_servers());
                (inst, uniform)
            }
        })
        .collect()
}

fn equilibrium_bound() -> Result<(bool, String)> {
    let corpus = equilibrium_corpus();
    let cfg = nash_corpus_config();
    let outcomes: Vec<Result<Option<(f64, f64)>>> = corpus
        .par_iter()
        .map(|(inst, init)| -> Result<Option<(f64, f64)>> {
            let out = find_nash(inst, init.clone(), &cfg)?;
            if !out.converged {
                return Ok(None);
            }
            let part = compute_rates(&out.profile, inst)?;
            Ok(Some((part.top_ratio_clamped(), nash_lower_bound(inst)?)))
        })
        .collect();

    let mut converged = 0usize;
    let mut violations = 0usize;
    let mut aging = 0usize;
    let mut worst_slack = f64::INFINITY;
    for out in outcomes {
        if let Some((f_top, bound)) = out? {
            converged += 1;
            worst_slack = worst_slack.min(f_top - bound);
            if f_top < 1.0 {
                aging += 1;
            }
            if f_top < bound - 1e-6 {
                violations += 1;
            }
        }
    }

    // The clamp-degenerate regression, committed with its observed outcome:
    // the shared-fast-server profile fails certification under BOTH cost
    // variants (either queue can reach cost zero alone), so the bound's
    // Nash precondition excludes it rather than falsifying the theorem.
    let inst = fixtures::fast_slow_pair();
    let p = fixtures::both_on_fast();
    let mut regression_ok = true;
    for model in [CostModel::AgingRate, CostModel::DescentSpeed] {
        let cert = certify_nash(&p, &inst, 1e-6, model)?;
        regression_ok &= !cert.is_nash;
    }

    let pass = violations == 0 && regression_ok && converged >= 60 && aging >= 10;
    Ok((
        pass,
        format!(
            "{converged}/100 converged ({aging} with an aging top group), {violations} bound \
             violations, min slack {worst_slack:.2e}, clamp regression (non-Nash under both \
             costs): {regression_ok}"
        ),
    ))
}

fn deformation_monotonicity() -> Result<(bool, String)> {
    let mut corpus = equilibrium_corpus();
    corpus.push(fixtures::inner_outer());
    let cfg = nash_corpus_config();
    let results: Vec<Result<Option<(bool, bool)>>> = corpus
        .par_iter()
        .map(|(inst, init)| -> Result<Option<(bool, bool)>> {
            let out = find_nash(inst, init.clone(), &cfg)?;
            if !out.converged {
                return Ok(None);
            }
            let part = compute_rates(&out.profile, inst)?;
            if part.ratios[0] >= 1.0 {
                return Ok(None);
            }
            let w = waterfill_bound(part.groups[0].len(), inst)?;
            let trace = match deform_to_saturation(&out.profile, inst, &w.x) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("deformation stalled: {e}");
                    return Ok(Some((false, false)));
                }
            };
            let mut prev = part.ratios[0];
            let mut monotone = true;
            for &f in &trace.f_values {
                if f > prev + 1e-9 {
                    monotone = false;
                }
                prev = f;
            }
            Ok(Some((monotone, true)))
        })
        .collect();

    let mut paths = 0usize;
    let mut bad = 0usize;
    for r in results {
        if let Some((monotone, finished)) = r? {
            paths += 1;
            if !monotone || !finished {
                bad += 1;
            }
        }
    }
    Ok((
        bad == 0 && paths > 0,
        format!("{paths} unstable equilibria deformed, {bad} failures"),
    ))
}

// ---------------------------------------------------------------------------
// 8: the e/(e-1) capacity threshold
// ---------------------------------------------------------------------------

fn capacity_threshold() -> Result<(bool, String)> {
    // Random systems with margin 1.60 > e/(e-1): every certified equilibrium
    // must be fully stable.
    let mut rng = ChaCha8Rng::seed_from_u64(0xe_e1u64);
    let sweeps: Vec<(Instance, u64)> = (0..50)
        .map(|idx| {
            let n = 2 + idx % 3;
            let m = 2 + idx % 2;
            let seed: u64 = rng.random();
            (random_feasible(n, m, 1.60, seed).expect("generator succeeds"), seed)
        })
        .collect();
    let sweep_results: Vec<Result<(bool, usize)>> = sweeps
        .par_iter()
        .map(|(inst, seed)| -> Result<(bool, usize)> {
            let cfg = crate::poa::MarginSweepConfig {
                init_seeds: vec![seed.wrapping_add(1), seed.wrapping_add(2)],
                nash: nash_corpus_config(),
            };
            let report = crate::poa::verify_stability_margin(inst, &cfg)?;
            let converged = report.trials.iter().filter(|t| t.converged).count();
            Ok((report.hypothesis_met && report.pass, converged))
        })
        .collect();
    let mut sweep_failures = 0usize;
    let mut converged_total = 0usize;
    for r in sweep_results {
        let (ok, conv) = r?;
        if !ok {
            sweep_failures += 1;
        }
        converged_total += conv;
    }

    // Tightness direction: the symmetric family certifies as Nash, matches
    // the closed form exactly, and its gap to the bound shrinks to zero.
    let sizes = [2usize, 4, 8, 16];
    let tight: Vec<Result<(bool, f64)>> = sizes
        .par_iter()
        .map(|&n| -> Result<(bool, f64)> {
            let (inst, p) = symmetric_instance(n, 0.05)?;
            let cert = certify_nash(&p, &inst, 1e-6, CostModel::AgingRate)?;
            let part = compute_rates(&p, &inst)?;
            let lambda = inst.arrival_rate(0);
            let expect = (1.0 - (1.0 - 1.0 / n as f64).powi(n as i32)) / lambda;
            let exact = (part.ratios[0] - expect).abs() <= 1e-12;
            let gap = part.top_ratio_clamped() - nash_lower_bound(&inst)?.min(1.0);
            Ok((cert.is_nash && exact, gap.abs()))
        })
        .collect();
    let mut tight_ok = true;
    let mut gaps = Vec::new();
    for r in tight {
        let (ok, gap) = r?;
        tight_ok &= ok;
        gaps.push(gap);
    }
    let trending = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12) && gaps[3] <= 1e-9;

    let pass = sweep_failures == 0 && converged_total >= 100 && tight_ok && trending;
    Ok((
        pass,
        format!(
            "50 margin-1.60 sweeps: {sweep_failures} failures ({converged_total} converged trials); \
             symmetric family exact: {tight_ok}, gaps {gaps:?}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 10–11: simulation
// ---------------------------------------------------------------------------

fn simulation_convergence() -> Result<(bool, String)> {
    let (sym, symp) = symmetric_instance(4, 0.05)?;
    let fixtures: Vec<(&str, Instance, StrategyProfile)> = vec![
        ("single-unstable", fixtures::single_unstable().0, fixtures::single_unstable().1),
        ("shared-fast", fixtures::fast_slow_pair(), fixtures::both_on_fast()),
        ("two-group", fixtures::two_group_chain().0, fixtures::two_group_chain().1),
        ("symmetric-4", sym, symp),
    ];
    let mut lines = Vec::new();
    let mut pass = true;
    for (idx, (name, inst, profile)) in fixtures.iter().enumerate() {
        let cfg = SimConfig {
            horizon: 1_000_000,
            trials: 20,
            seed: 0x51u64.wrapping_mul(idx as u64 + 1),
            checkpoint_stride: 10_000,
        };
        let report = check_convergence(profile, inst, &cfg, 0.015)?;
        let ok = report.pass && report.separated_trials >= 18;
        pass &= ok;
        lines.push(format!(
            "{name}: dev {:.4}, separated {}/{}",
            report.max_abs_deviation, report.separated_trials, report.trials
        ));
    }
    Ok((pass, lines.join("; ")))
}

fn strong_stability() -> Result<(bool, String)> {
    let cases: Vec<(&str, Instance, StrategyProfile)> = vec![
        (
            "comfortable",
            Instance::new(vec![0.3], vec![0.9])?,
            StrategyProfile::uniform(1, 1),
        ),
        (
            "near-empty",
            Instance::new(vec![0.01], vec![1.0])?,
            StrategyProfile::uniform(1, 1),
        ),
        (
            "tilted-pair",
            fixtures::fast_slow_pair(),
            fixtures::tilted_deviation(),
        ),
    ];
    let mut pass = true;
    let mut lines = Vec::new();
    for (idx, (name, inst, profile)) in cases.iter().enumerate() {
        let cfg = SimConfig {
            horizon: 1_000_000,
            trials: 24,
            seed: 0x77u64.wrapping_mul(idx as u64 + 1),
            checkpoint_stride: 1_000_000,
        };
        let report = probe_strong_stability(profile, inst, &cfg, &[1, 2, 4])?;
        pass &= report.pass;
        lines.push(format!("{name}: trend ok = {}", report.pass));
    }
    Ok((pass, lines.join("; ")))
}

// ---------------------------------------------------------------------------
// 12: byte-level determinism of the command line
// ---------------------------------------------------------------------------

fn determinism(bin: &Path) -> Result<(bool, String)> {
    let scratch = std::env::temp_dir().join(format!("pq-determinism-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&scratch);
    std::fs::create_dir_all(&scratch)?;

    let (inst, profile) = fixtures::two_group_chain();
    let inst_path = scratch.join("system.json");
    std::fs::write(&inst_path, canonical_instance_json(&inst, Some(&profile)))?;

    let run = |args: &[&str]| -> Result<(Vec<u8>, i32)> {
        let out = Command::new(bin)
            .args(args)
            .output()
            .map_err(crate::error::Error::Io)?;
        Ok((out.stdout, out.status.code().unwrap_or(-1)))
    };
    let ip = inst_path.to_str().unwrap();

    let mut mismatches = Vec::new();

    // Analytic commands: identical stdout bytes.
    for args in [
        vec!["rates", "--instance", ip],
        vec!["poa", "--instance", ip],
        vec!["nash", "--instance", ip, "--max-rounds", "5"],
    ] {
        let (a, code_a) = run(&args)?;
        let (b, code_b) = run(&args)?;
        if a != b || code_a != code_b {
            mismatches.push(format!("{} stdout differs", args[0]));
        }
    }

    // Simulation: identical CSV and summary bytes across runs; manifests are
    // excluded from the comparison.
    let mut csv_ok = true;
    let dirs = [scratch.join("run-a"), scratch.join("run-b")];
    for dir in &dirs {
        let (_, code) = run(&[
            "simulate", "--instance", ip, "--horizon", "20000", "--trials", "3", "--seed",
            "41", "--stride", "1000", "--out-dir", dir.to_str().unwrap(),
        ])?;
        if code != 0 {
            mismatches.push(format!("simulate exited {code}"));
        }
    }
    for name in ["trial_0000.csv", "trial_0001.csv", "trial_0002.csv", "summary.json"] {
        let a = std::fs::read(dirs[0].join(name))?;
        let b = std::fs::read(dirs[1].join(name))?;
        if a != b {
            csv_ok = false;
            mismatches.push(format!("{name} differs"));
        }
    }

    let _ = std::fs::remove_dir_all(&scratch);
    let pass = mismatches.is_empty() && csv_ok;
    Ok((
        pass,
        if pass {
            "rates/poa/nash stdout and simulate CSV+summary byte-identical".to_string()
        } else {
            mismatches.join("; ")
        },
    ))
}
