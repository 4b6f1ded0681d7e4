//! Best responses, equilibrium certification, best-response dynamics, and
//! the level partition of the maximal tight set.
//!
//! Each queue picks a fixed distribution over servers to minimize its own
//! long-run aging rate given everyone else's distribution. Restricted to one
//! queue's strategy, the rate function is piecewise linear along any segment
//! and has no interior local maximum, so pairwise mass-transfer line
//! searches descend to a global best response and the set of best responses
//! is convex. Certification compares each queue's current cost against the
//! value such a search attains.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, StrategyProfile};
use crate::mask::SubsetMask;
use crate::rates::{compute_rates, tight_family, RatePartition};

/// Which cost the queues play against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// The long-run aging rate `max(0, 1 - ratio)`. Queues are indifferent
    /// among all strategies that already achieve rate zero.
    #[default]
    AgingRate,
    /// The unclamped descent speed `1 - ratio`, which keeps rewarding faster
    /// clearing below the stability threshold.
    DescentSpeed,
}

/// Cost of queue `i` under a computed partition.
pub fn queue_cost(part: &RatePartition, i: usize, model: CostModel) -> f64 {
    match model {
        CostModel::AgingRate => part.per_queue[i],
        CostModel::DescentSpeed => 1.0 - part.ratio_of(i),
    }
}

fn profile_cost(profile: &StrategyProfile, inst: &Instance, i: usize, model: CostModel) -> Result<f64> {
    Ok(queue_cost(&compute_rates(profile, inst)?, i, model))
}

// ---------------------------------------------------------------------------
// Marginal shift test
// ---------------------------------------------------------------------------

/// Whether an infinitesimal shift of queue `i`'s mass from `j_from` to
/// `j_to` strictly raises the clearing ratio of the tight set `s`, i.e.
/// relieves the aging pressure on `s`. Comparing the two marginal server
/// values after clearing denominators, this holds iff
///
/// ```text
/// mu[j_from] * prod_{r in S \ {i}} (1 - p[r][j_from])
///     < mu[j_to] * prod_{r in S \ {i}} (1 - p[r][j_to])
/// ```
pub fn shift_improves(
    i: usize,
    j_from: usize,
    j_to: usize,
    s: SubsetMask,
    profile: &StrategyProfile,
    inst: &Instance,
) -> Result<bool> {
    if !s.contains(i) {
        return Err(Error::Precondition(format!(
            "queue {i} is not a member of {s}"
        )));
    }
    let side = |j: usize| -> f64 {
        let mut v = inst.service_rate(j);
        for r in s.iter() {
            if r != i {
                v *= 1.0 - profile.prob(r, j);
            }
        }
        v
    };
    Ok(side(j_from) < side(j_to))
}

// ---------------------------------------------------------------------------
// One-dimensional search along a mass transfer
// ---------------------------------------------------------------------------

/// Absolute resolution in transferred mass to which slope changes are
/// localized.
const T_RESOLUTION: f64 = 1e-10;

/// Hard cap on descent passes; monotone descent with a finite improvement
/// quantum terminates far earlier.
const MAX_SWEEPS: usize = 1000;

struct LineSearch {
    /// Sampled (t, value) pairs, in evaluation order.
    samples: Vec<(f64, f64)>,
    lin_tol: f64,
}

impl LineSearch {
    /// Minimizes a piecewise-linear valley on `[0, t_max]`: coarse grid,
    /// then bisection wherever two probe points betray a slope change.
    fn run(eval: &mut impl FnMut(f64) -> f64, t_max: f64, value_tol: f64) -> Self {
        let mut search = LineSearch {
            samples: Vec::with_capacity(64),
            lin_tol: (value_tol / 8.0).max(1e-12),
        };
        const GRID: usize = 16;
        let mut grid = Vec::with_capacity(GRID + 1);
        for k in 0..=GRID {
            let t = t_max * k as f64 / GRID as f64;
            let v = eval(t);
            search.samples.push((t, v));
            grid.push((t, v));
        }
        for w in grid.windows(2) {
            search.refine(eval, w[0].0, w[0].1, w[1].0, w[1].1);
        }
        search
    }

    fn refine(&mut self, eval: &mut impl FnMut(f64) -> f64, a: f64, va: f64, b: f64, vb: f64) {
        if b - a < T_RESOLUTION {
            return;
        }
        let probes = [a + 0.381_966 * (b - a), a + 0.5 * (b - a)];
        let chord = |t: f64| va + (t - a) / (b - a) * (vb - va);
        let mut vals = [0.0; 2];
        let mut deviates = false;
        for (k, &t) in probes.iter().enumerate() {
            let v = eval(t);
            self.samples.push((t, v));
            vals[k] = v;
            if (v - chord(t)).abs() > self.lin_tol {
                deviates = true;
            }
        }
        if !deviates {
            return;
        }
        self.refine(eval, a, va, probes[0], vals[0]);
        self.refine(eval, probes[0], vals[0], probes[1], vals[1]);
        self.refine(eval, probes[1], vals[1], b, vb);
    }

    /// Best sampled point. Exact-tied values resolve to the largest or
    /// smallest `t` so callers can pick the lexicographically smaller row.
    fn best(&self, prefer_large_t: bool) -> (f64, f64) {
        let min = self
            .samples
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min);
        let tie = 1e-13 * (1.0 + min.abs());
        let mut best_t = None;
        for &(t, v) in &self.samples {
            if v <= min + tie {
                best_t = Some(match best_t {
                    None => t,
                    Some(bt) if prefer_large_t => t.max(bt),
                    Some(bt) => t.min(bt),
                });
            }
        }
        (best_t.unwrap(), min)
    }
}

// ---------------------------------------------------------------------------
// Best response
// ---------------------------------------------------------------------------

/// A best-response row and the cost it attains.
#[derive(Debug, Clone, Serialize)]
pub struct BestResponse {
    pub row: Vec<f64>,
    pub value: f64,
}

/// Minimizes queue `i`'s cost over its strategy simplex, holding the other
/// rows of `profile` fixed. Repeated pairwise mass-transfer line searches
/// run until a full sweep finds no improvement above `tol`; ties along the
/// way resolve to the lexicographically smallest row.
pub fn best_response(
    i: usize,
    profile: &StrategyProfile,
    inst: &Instance,
    tol: f64,
    model: CostModel,
) -> Result<BestResponse> {
    profile.check_dims(inst)?;
    if i >= inst.n_queues() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: inst.n_queues(),
        });
    }
    let m = inst.n_servers();
    let mut work = profile.clone();

    // Deterministic start: the best of the uniform row and the pure rows.
    let mut row = vec![1.0 / m as f64; m];
    let mut value = {
        *work.row_mut(i) = row.clone();
        profile_cost(&work, inst, i, model)?
    };
    for j in 0..m {
        let mut pure = vec![0.0; m];
        pure[j] = 1.0;
        *work.row_mut(i) = pure.clone();
        let v = profile_cost(&work, inst, i, model)?;
        if v < value - 1e-15 {
            row = pure;
            value = v;
        }
    }

    let mut sweeps = 0;
    loop {
        let mut improved = false;
        for from in 0..m {
            for to in 0..m {
                if from == to || row[from] <= 0.0 {
                    continue;
                }
                let budget = row[from];
                let mut eval = |t: f64| {
                    let r = work.row_mut(i);
                    r.clone_from_slice(&row);
                    r[from] = (row[from] - t).max(0.0);
                    r[to] = row[to] + t;
                    queue_cost(
                        &compute_rates(&work, inst).expect("dims already checked"),
                        i,
                        model,
                    )
                };
                let search = LineSearch::run(&mut eval, budget, tol);
                let (t_best, v_best) = search.best(from < to);
                if value - v_best > tol {
                    row[to] += t_best;
                    row[from] = (row[from] - t_best).max(0.0);
                    value = v_best;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
        sweeps += 1;
        if sweeps >= MAX_SWEEPS {
            break;
        }
    }

    Ok(BestResponse { row, value })
}

// ---------------------------------------------------------------------------
// Certification
// ---------------------------------------------------------------------------

/// One profitable unilateral deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashViolation {
    pub queue: usize,
    /// Server pair whose single transfer gains the most from the current row.
    pub from: usize,
    pub to: usize,
    /// Cost drop available to this queue (current cost minus best-response
    /// value); always above the certificate tolerance.
    pub improvement: f64,
}

/// Outcome of checking every queue's incentive to deviate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashCertificate {
    pub is_nash: bool,
    pub violations: Vec<NashViolation>,
    pub tol: f64,
    /// Current cost per queue.
    pub costs: Vec<f64>,
    /// Best-response value per queue.
    pub best_values: Vec<f64>,
}

/// Certifies whether `profile` is a Nash equilibrium within `tol`: for each
/// queue, the current cost may exceed its best-response value by at most
/// `tol`. Queues are independent, so their checks run in parallel and merge
/// in queue order; the certificate is deterministic either way.
pub fn certify_nash(
    profile: &StrategyProfile,
    inst: &Instance,
    tol: f64,
    model: CostModel,
) -> Result<NashCertificate> {
    profile.check_dims(inst)?;
    let part = compute_rates(profile, inst)?;
    let n = inst.n_queues();

    let per_queue: Vec<(f64, f64, Option<NashViolation>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let cost = queue_cost(&part, i, model);
            let br = best_response(i, profile, inst, tol / 10.0, model)?;
            let violation = if cost - br.value > tol {
                let (from, to) = best_single_transfer(i, profile, inst, model)?;
                Some(NashViolation {
                    queue: i,
                    from,
                    to,
                    improvement: cost - br.value,
                })
            } else {
                None
            };
            Ok((cost, br.value, violation))
        })
        .collect::<Result<_>>()?;

    let costs = per_queue.iter().map(|q| q.0).collect();
    let best_values = per_queue.iter().map(|q| q.1).collect();
    let violations: Vec<NashViolation> =
        per_queue.into_iter().filter_map(|q| q.2).collect();

    Ok(NashCertificate {
        is_nash: violations.is_empty(),
        violations,
        tol,
        costs,
        best_values,
    })
}

/// The single pairwise transfer from queue `i`'s current row with the
/// largest cost drop; used to annotate violations.
fn best_single_transfer(
    i: usize,
    profile: &StrategyProfile,
    inst: &Instance,
    model: CostModel,
) -> Result<(usize, usize)> {
    let m = inst.n_servers();
    let row = profile.row(i).to_vec();
    let mut work = profile.clone();
    let mut best = (0, 0, f64::INFINITY);
    for from in 0..m {
        for to in 0..m {
            if from == to || row[from] <= 0.0 {
                continue;
            }
            let mut eval = |t: f64| {
                let r = work.row_mut(i);
                r.clone_from_slice(&row);
                r[from] = (row[from] - t).max(0.0);
                r[to] = row[to] + t;
                queue_cost(
                    &compute_rates(&work, inst).expect("dims already checked"),
                    i,
                    model,
                )
            };
            let search = LineSearch::run(&mut eval, row[from], 1e-9);
            let (_, v) = search.best(from < to);
            if v < best.2 {
                best = (from, to, v);
            }
        }
    }
    Ok((best.0, best.1))
}

// ---------------------------------------------------------------------------
// Best-response dynamics
// ---------------------------------------------------------------------------

/// Player update order within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Queues update one at a time against the freshest profile.
    #[default]
    RoundRobin,
    /// All queues respond to the same snapshot; responses may be computed in
    /// parallel and are merged in queue order.
    Simultaneous,
}

/// Knobs for [`find_nash`], echoed in its output for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashSearchConfig {
    pub max_rounds: usize,
    pub tol: f64,
    /// Fraction of the step toward each best response, in `(0, 1]`.
    pub damping: f64,
    pub order: UpdateOrder,
    pub cost_model: CostModel,
}

impl Default for NashSearchConfig {
    fn default() -> Self {
        NashSearchConfig {
            max_rounds: 100,
            tol: 1e-6,
            damping: 0.5,
            order: UpdateOrder::RoundRobin,
            cost_model: CostModel::AgingRate,
        }
    }
}

/// Result of damped best-response dynamics. `converged` is false when the
/// round budget ran out; the last profile and its certificate are returned
/// either way.
#[derive(Debug, Clone, Serialize)]
pub struct NashSearchOutcome {
    pub profile: StrategyProfile,
    pub certificate: NashCertificate,
    pub converged: bool,
    pub rounds: usize,
    pub config: NashSearchConfig,
}

/// Iterates damped best responses from `init` until the profile certifies as
/// Nash or `max_rounds` is exhausted. Convergence of the dynamic is not
/// guaranteed; non-convergence is a reported outcome, not an error.
pub fn find_nash(
    inst: &Instance,
    init: StrategyProfile,
    config: &NashSearchConfig,
) -> Result<NashSearchOutcome> {
    init.check_dims(inst)?;
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "damping {} outside (0, 1]",
            config.damping
        )));
    }
    let n = inst.n_queues();
    let inner_tol = config.tol / 10.0;
    let mut profile = init;

    for round in 0..=config.max_rounds {
        let certificate = certify_nash(&profile, inst, config.tol, config.cost_model)?;
        if certificate.is_nash {
            return Ok(NashSearchOutcome {
                profile,
                certificate,
                converged: true,
                rounds: round,
                config: config.clone(),
            });
        }
        if round == config.max_rounds {
            return Ok(NashSearchOutcome {
                profile,
                certificate,
                converged: false,
                rounds: round,
                config: config.clone(),
            });
        }

        match config.order {
            UpdateOrder::RoundRobin => {
                for i in 0..n {
                    let br = best_response(i, &profile, inst, inner_tol, config.cost_model)?;
                    damp_row(&mut profile, i, &br.row, config.damping);
                }
            }
            UpdateOrder::Simultaneous => {
                let responses: Vec<BestResponse> = (0..n)
                    .into_par_iter()
                    .map(|i| best_response(i, &profile, inst, inner_tol, config.cost_model))
                    .collect::<Result<_>>()?;
                for (i, br) in responses.iter().enumerate() {
                    damp_row(&mut profile, i, &br.row, config.damping);
                }
            }
        }
    }
    unreachable!("loop returns at round == max_rounds");
}

fn damp_row(profile: &mut StrategyProfile, i: usize, target: &[f64], damping: f64) {
    let row = profile.row_mut(i);
    let mut sum = 0.0;
    for (p, &t) in row.iter_mut().zip(target) {
        *p = (1.0 - damping) * *p + damping * t;
        sum += *p;
    }
    for p in row.iter_mut() {
        *p /= sum;
    }
}

// ---------------------------------------------------------------------------
// Level partition
// ---------------------------------------------------------------------------

/// Decomposition of the maximal tight set into levels of minimal tight
/// subsets, each level conditioned on every lower level having priority.
/// Subsets within a level are pairwise disjoint and use pairwise-disjoint
/// server supports.
#[derive(Debug, Clone, Serialize)]
pub struct LevelPartition {
    /// Level 1 first.
    pub levels: Vec<Vec<SubsetMask>>,
    /// Union over all levels; equals the maximal tight set.
    pub covered: SubsetMask,
}

/// Builds the level partition of the maximal tight set. Requires the top
/// group to be genuinely unstable (clearing ratio below 1).
pub fn level_partition(profile: &StrategyProfile, inst: &Instance) -> Result<LevelPartition> {
    let part = compute_rates(profile, inst)?;
    if part.ratios[0] >= 1.0 {
        return Err(Error::Precondition(format!(
            "top group is stable (ratio {} >= 1); no level structure",
            part.ratios[0]
        )));
    }
    let maximal = part.groups[0];
    let mut covered = SubsetMask::EMPTY;
    let mut levels = Vec::new();

    while covered != maximal {
        let fam = tight_family(
            maximal.difference(covered),
            covered,
            profile,
            inst.service_rates(),
            inst.arrival_rates(),
        )?;
        let minimal = fam.minimal_members();
        // Disjoint minimal tight subsets must mix on disjoint servers.
        for (a, sa) in minimal.iter().enumerate() {
            for sb in minimal.iter().skip(a + 1) {
                if !support(*sa, profile).is_disjoint(support(*sb, profile)) {
                    return Err(Error::Precondition(format!(
                        "minimal tight subsets {sa} and {sb} share a server support"
                    )));
                }
            }
        }
        for s in &minimal {
            covered = covered.union(*s);
        }
        levels.push(minimal);
    }

    Ok(LevelPartition { levels, covered })
}

fn support(s: SubsetMask, profile: &StrategyProfile) -> SubsetMask {
    let mut servers = SubsetMask::EMPTY;
    for i in s.iter() {
        for j in 0..profile.n_servers() {
            if profile.prob(i, j) > 1e-12 {
                servers = servers.insert(j);
            }
        }
    }
    servers
}
