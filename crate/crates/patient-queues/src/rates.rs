//! The analytic core: set functions over queue subsets and the recursive
//! partition that yields exact long-run aging rates.
//!
//! For a subset `S` of queues with a priority set `S'` ahead of it, the
//! expected number of packets cleared collectively by `S` in one step is
//!
//! ```text
//! clears(S | S') = sum_j mu_j * prod_{i in S'} (1 - p_ij) * (1 - prod_{i in S} (1 - p_ij))
//! ```
//!
//! and the clearing ratio divides this by the total arrival rate of `S`.
//! The subsets minimizing the ratio ("tight" subsets) form a family closed
//! under union and non-disjoint intersection, because `clears` is submodular
//! and the arrival mass is modular; the union of all minimizers is therefore
//! the unique largest minimizer. The partition algorithm peels off that
//! largest minimizer, assigns its queues the aging rate `max(0, 1 - ratio)`,
//! discounts every server by the probability the peeled queues leave it
//! alone, and recurses on the rest. Once the minimum ratio reaches 1 the
//! remaining queues are all stable and come out as a single final group of
//! rate zero.
//!
//! Two routes compute the minimizing family: direct enumeration of all
//! nonempty subsets ([`tight_family`]) and a parametric search on `y` that
//! repeatedly minimizes the submodular form `clears(S) - y * arrivals(S)`
//! ([`tight_family_parametric`]). They must agree, and the test suites hold
//! them to that.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, StrategyProfile};
use crate::mask::SubsetMask;

/// Largest ground set the exhaustive enumeration accepts.
pub const ENUM_CAP: usize = 24;

/// Relative tolerance for counting a subset as a co-minimizer.
pub const TIGHT_REL_TOL: f64 = 1e-9;

/// Absolute floor for the co-minimizer tolerance.
pub const TIGHT_ABS_TOL: f64 = 1e-12;

const DINKELBACH_MAX_ITERS: usize = 64;

/// Tolerance window around a minimum ratio `value`.
pub fn tight_tolerance(value: f64) -> f64 {
    (TIGHT_REL_TOL * value).max(TIGHT_ABS_TOL)
}

// ---------------------------------------------------------------------------
// Set functions
// ---------------------------------------------------------------------------

fn check_sets(subset: SubsetMask, priority: SubsetMask, n: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if !subset.is_disjoint(priority) {
        return Err(Error::OverlappingSets);
    }
    if !subset.union(priority).is_subset_of(SubsetMask::full(n)) {
        return Err(Error::IndexOutOfRange {
            index: subset.union(priority).iter().last().unwrap_or(0),
            len: n,
        });
    }
    Ok(())
}

/// Per-server weights after the priority set has taken its share:
/// `w_j = mu_j * prod_{i in priority} (1 - p_ij)`.
fn priority_weights(priority: SubsetMask, profile: &StrategyProfile, services: &[f64]) -> Vec<f64> {
    let mut w = services.to_vec();
    for i in priority.iter() {
        for (j, wj) in w.iter_mut().enumerate() {
            *wj *= 1.0 - profile.prob(i, j);
        }
    }
    w
}

/// Expected packets cleared collectively by `subset` in one step, given that
/// `priority` is served first and everyone involved has a packet.
pub fn expected_clears(
    subset: SubsetMask,
    priority: SubsetMask,
    profile: &StrategyProfile,
    services: &[f64],
) -> Result<f64> {
    check_sets(subset, priority, profile.n_queues())?;
    let w = priority_weights(priority, profile, services);
    let mut total = 0.0;
    for (j, &wj) in w.iter().enumerate() {
        let mut miss = 1.0;
        for i in subset.iter() {
            miss *= 1.0 - profile.prob(i, j);
        }
        total += wj * (1.0 - miss);
    }
    Ok(total)
}

/// The clearing ratio: expected clears of `subset` divided by its total
/// arrival rate. Values below 1 mean the subset cannot keep up even with
/// priority over everyone outside `priority`.
pub fn clearing_ratio(
    subset: SubsetMask,
    priority: SubsetMask,
    profile: &StrategyProfile,
    services: &[f64],
    arrivals: &[f64],
) -> Result<f64> {
    let clears = expected_clears(subset, priority, profile, services)?;
    let mass: f64 = subset.iter().map(|i| arrivals[i]).sum();
    Ok(clears / mass)
}

// ---------------------------------------------------------------------------
// Subset enumeration
// ---------------------------------------------------------------------------

/// Visits every nonempty subset of `members` exactly once, passing
/// `(mask, clears, arrival_mass)`. Exclude-branches share product state so
/// the walk costs O(2^k * m) with O(k * m) scratch.
fn enumerate_subsets<F: FnMut(SubsetMask, f64, f64)>(
    members: &[usize],
    profile: &StrategyProfile,
    weights: &[f64],
    arrivals: &[f64],
    visit: &mut F,
) {
    let m = weights.len();
    let w_total: f64 = weights.iter().sum();
    let mut scratch = vec![vec![0.0f64; m]; members.len() + 1];
    scratch[0].copy_from_slice(weights);
    // dots[level] = sum_j w_j * prod_{i included} (1 - p_ij)
    let mut dots = vec![0.0f64; members.len() + 1];
    dots[0] = w_total;

    struct Ctx<'a, F> {
        members: &'a [usize],
        profile: &'a StrategyProfile,
        arrivals: &'a [f64],
        w_total: f64,
        visit: &'a mut F,
    }

    fn rec<F: FnMut(SubsetMask, f64, f64)>(
        ctx: &mut Ctx<'_, F>,
        scratch: &mut [Vec<f64>],
        dots: &mut [f64],
        d: usize,
        level: usize,
        mask: SubsetMask,
        mass: f64,
    ) {
        if d == ctx.members.len() {
            if !mask.is_empty() {
                (ctx.visit)(mask, ctx.w_total - dots[level], mass);
            }
            return;
        }
        // Exclude member d: product state untouched.
        rec(ctx, scratch, dots, d + 1, level, mask, mass);
        // Include member d: fold its miss probabilities into the next level.
        let i = ctx.members[d];
        let (head, tail) = scratch.split_at_mut(level + 1);
        let cur = &head[level];
        let next = &mut tail[0];
        let mut dot = 0.0;
        for j in 0..cur.len() {
            next[j] = cur[j] * (1.0 - ctx.profile.prob(i, j));
            dot += next[j];
        }
        dots[level + 1] = dot;
        rec(
            ctx,
            scratch,
            dots,
            d + 1,
            level + 1,
            mask.insert(i),
            mass + ctx.arrivals[i],
        );
    }

    let mut ctx = Ctx {
        members,
        profile,
        arrivals,
        w_total,
        visit,
    };
    rec(
        &mut ctx,
        &mut scratch,
        &mut dots,
        0,
        0,
        SubsetMask::EMPTY,
        0.0,
    );
}

// ---------------------------------------------------------------------------
// Tight families
// ---------------------------------------------------------------------------

/// All subsets attaining the minimum clearing ratio at one stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightFamily {
    /// The minimum ratio.
    pub value: f64,
    /// Every minimizer within [`tight_tolerance`] of the minimum, ordered by
    /// mask value.
    pub minimizers: Vec<SubsetMask>,
    /// Union of all minimizers; the unique minimizer of largest cardinality.
    pub maximal: SubsetMask,
}

impl TightFamily {
    pub fn is_tight(&self, s: SubsetMask) -> bool {
        self.minimizers.contains(&s)
    }

    /// Inclusion-minimal members of the family.
    pub fn minimal_members(&self) -> Vec<SubsetMask> {
        self.minimizers
            .iter()
            .copied()
            .filter(|&s| {
                self.minimizers
                    .iter()
                    .all(|&t| t == s || !t.is_subset_of(s))
            })
            .collect()
    }
}

fn check_family_inputs(
    ground: SubsetMask,
    priority: SubsetMask,
    profile: &StrategyProfile,
    services: &[f64],
    arrivals: &[f64],
) -> Result<()> {
    check_sets(ground, priority, profile.n_queues())?;
    if profile.n_servers() != services.len() {
        return Err(Error::DimensionMismatch {
            profile_queues: profile.n_queues(),
            profile_servers: profile.n_servers(),
            queues: arrivals.len(),
            servers: services.len(),
        });
    }
    if ground.len() > ENUM_CAP {
        return Err(Error::EnumerationCap {
            size: ground.len(),
            cap: ENUM_CAP,
        });
    }
    Ok(())
}

/// Finds the minimum clearing ratio over all nonempty subsets of `ground` by
/// exhaustive enumeration, along with every co-minimizer and their union.
pub fn tight_family(
    ground: SubsetMask,
    priority: SubsetMask,
    profile: &StrategyProfile,
    services: &[f64],
    arrivals: &[f64],
) -> Result<TightFamily> {
    check_family_inputs(ground, priority, profile, services, arrivals)?;
    let members = ground.indices();
    let weights = priority_weights(priority, profile, services);

    let mut min = f64::INFINITY;
    enumerate_subsets(&members, profile, &weights, arrivals, &mut |_, clears, mass| {
        let ratio = clears / mass;
        if ratio < min {
            min = ratio;
        }
    });

    let cutoff = min + tight_tolerance(min);
    let mut minimizers = Vec::new();
    let mut maximal = SubsetMask::EMPTY;
    enumerate_subsets(&members, profile, &weights, arrivals, &mut |mask, clears, mass| {
        if clears / mass <= cutoff {
            minimizers.push(mask);
            maximal = maximal.union(mask);
        }
    });
    minimizers.sort();

    Ok(TightFamily {
        value: min,
        minimizers,
        maximal,
    })
}

/// Same contract as [`tight_family`], reached through parametric search:
/// iterate `y -> min_S clears(S) - y * arrivals(S)` (a submodular minimum)
/// until the optimum hits zero, at which point `y` is the minimum ratio.
pub fn tight_family_parametric(
    ground: SubsetMask,
    priority: SubsetMask,
    profile: &StrategyProfile,
    services: &[f64],
    arrivals: &[f64],
) -> Result<TightFamily> {
    check_family_inputs(ground, priority, profile, services, arrivals)?;
    let members = ground.indices();
    let weights = priority_weights(priority, profile, services);

    // Scale-aware tolerance for deciding the linear form has reached zero.
    let w_total: f64 = weights.iter().sum();
    let mass_total: f64 = members.iter().map(|&i| arrivals[i]).sum();
    let q_tol = 1e-13 * (1.0 + w_total + mass_total);

    // Start from the ratio of the whole ground set; iterates only decrease.
    let mut y = {
        let clears = expected_clears(ground, priority, profile, services)?;
        clears / mass_total
    };

    for _ in 0..DINKELBACH_MAX_ITERS {
        // Minimize the submodular form at the current y; the union of its
        // minimizers is itself a minimizer of largest cardinality.
        let mut q_min = f64::INFINITY;
        enumerate_subsets(&members, profile, &weights, arrivals, &mut |_, clears, mass| {
            let q = clears - y * mass;
            if q < q_min {
                q_min = q;
            }
        });

        if q_min >= -q_tol {
            // No subset beats y: y is the minimum ratio. Collect the family
            // as the zero set of the linear form at the tolerance-shifted y.
            let y_cut = y + tight_tolerance(y);
            let mut minimizers = Vec::new();
            let mut maximal = SubsetMask::EMPTY;
            enumerate_subsets(&members, profile, &weights, arrivals, &mut |mask, clears, mass| {
                if clears - y_cut * mass <= 0.0 {
                    minimizers.push(mask);
                    maximal = maximal.union(mask);
                }
            });
            minimizers.sort();
            return Ok(TightFamily {
                value: y,
                minimizers,
                maximal,
            });
        }

        // Update y to the ratio of the largest-cardinality argmin: the union
        // of all minimizers of the submodular form is itself a minimizer.
        let mut best_mask = SubsetMask::EMPTY;
        enumerate_subsets(&members, profile, &weights, arrivals, &mut |mask, clears, mass| {
            if clears - y * mass <= q_min + q_tol {
                best_mask = best_mask.union(mask);
            }
        });
        let best_clears = expected_clears(best_mask, priority, profile, services)?;
        let best_mass: f64 = best_mask.iter().map(|i| arrivals[i]).sum();
        let y_next = best_clears / best_mass;
        debug_assert!(y_next <= y + q_tol);
        y = y_next;
    }

    Err(Error::NonConvergence(format!(
        "parametric ratio search did not settle after {DINKELBACH_MAX_ITERS} iterations"
    )))
}

// ---------------------------------------------------------------------------
// Rate partition
// ---------------------------------------------------------------------------

/// Output of the recursive rate computation: groups of queues aging at a
/// common rate, fastest first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatePartition {
    /// Disjoint groups covering all queues, in extraction order.
    pub groups: Vec<SubsetMask>,
    /// Clearing ratio of each group at its extraction stage.
    #[serde(rename = "f")]
    pub ratios: Vec<f64>,
    /// Aging rate `max(0, 1 - ratio)` of each group; strictly decreasing
    /// while positive.
    #[serde(rename = "g")]
    pub rates: Vec<f64>,
    /// Aging rate per queue.
    pub per_queue: Vec<f64>,
}

impl RatePartition {
    pub fn n_queues(&self) -> usize {
        self.per_queue.len()
    }

    /// Index of the group containing queue `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.groups
            .iter()
            .position(|g| g.contains(i))
            .expect("groups partition the queues")
    }

    /// Clearing ratio of the group containing queue `i`.
    pub fn ratio_of(&self, i: usize) -> f64 {
        self.ratios[self.group_of(i)]
    }

    /// The top group's ratio, clamped to 1 when the stable branch fired.
    pub fn top_ratio_clamped(&self) -> f64 {
        self.ratios[0].min(1.0)
    }

    /// True when every queue is stable (all rates zero).
    pub fn all_stable(&self) -> bool {
        self.per_queue.iter().all(|&r| r == 0.0)
    }
}

/// Runs the recursive partition: peel the largest minimizer, assign its rate,
/// discount the servers, recurse. Queues left when the minimum ratio reaches
/// 1 form one final stable group whose ratio is still recorded.
pub fn compute_rates(profile: &StrategyProfile, inst: &Instance) -> Result<RatePartition> {
    profile.check_dims(inst)?;
    let n = inst.n_queues();
    let arrivals = inst.arrival_rates();
    let mut services = inst.service_rates().to_vec();

    let mut groups = Vec::new();
    let mut ratios = Vec::new();
    let mut rates = Vec::new();
    let mut remaining = SubsetMask::full(n);

    while !remaining.is_empty() {
        let fam = tight_family(remaining, SubsetMask::EMPTY, profile, &services, arrivals)?;
        if fam.value >= 1.0 {
            groups.push(remaining);
            ratios.push(fam.value);
            rates.push(0.0);
            break;
        }
        groups.push(fam.maximal);
        ratios.push(fam.value);
        rates.push(1.0 - fam.value);
        for (j, s) in services.iter_mut().enumerate() {
            for i in fam.maximal.iter() {
                *s *= 1.0 - profile.prob(i, j);
            }
        }
        remaining = remaining.difference(fam.maximal);
    }

    let mut per_queue = vec![0.0; n];
    for (k, g) in groups.iter().enumerate() {
        for i in g.iter() {
            per_queue[i] = rates[k];
        }
    }

    Ok(RatePartition {
        groups,
        ratios,
        rates,
        per_queue,
    })
}

/// The long-run aging rate of queue `i`: the game's cost of queue `i` under
/// the given profile.
pub fn queue_rate(profile: &StrategyProfile, inst: &Instance, i: usize) -> Result<f64> {
    if i >= inst.n_queues() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: inst.n_queues(),
        });
    }
    Ok(compute_rates(profile, inst)?.per_queue[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::random_feasible;

    fn fast_slow() -> (Instance, StrategyProfile) {
        let inst = Instance::new(vec![0.51, 0.51], vec![1.0, 0.49]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        (inst, p)
    }

    #[test]
    fn clears_hand_values() {
        let (inst, p) = fast_slow();
        let both = SubsetMask::from_indices(&[0, 1]);
        // Server 0 saturated, server 1 untouched: exactly one clear expected.
        let a = expected_clears(both, SubsetMask::EMPTY, &p, inst.service_rates()).unwrap();
        assert!((a - 1.0).abs() < 1e-15);

        // Full blocking: the priority queue occupies the only server used.
        let a = expected_clears(
            SubsetMask::singleton(0),
            SubsetMask::singleton(1),
            &p,
            inst.service_rates(),
        )
        .unwrap();
        assert!(a.abs() < 1e-15);

        // Single queue mixing half-half over (1, 0.49).
        let solo = StrategyProfile::new(vec![vec![0.5, 0.5]]).unwrap();
        let a = expected_clears(
            SubsetMask::singleton(0),
            SubsetMask::EMPTY,
            &solo,
            &[1.0, 0.49],
        )
        .unwrap();
        assert!((a - 0.745).abs() < 1e-15);
    }

    #[test]
    fn clears_rejects_bad_sets() {
        let (inst, p) = fast_slow();
        assert!(matches!(
            expected_clears(SubsetMask::EMPTY, SubsetMask::EMPTY, &p, inst.service_rates()),
            Err(Error::EmptySubset)
        ));
        assert!(matches!(
            expected_clears(
                SubsetMask::singleton(0),
                SubsetMask::singleton(0),
                &p,
                inst.service_rates()
            ),
            Err(Error::OverlappingSets)
        ));
    }

    #[test]
    fn ratio_hand_values() {
        let (inst, p) = fast_slow();
        let both = SubsetMask::from_indices(&[0, 1]);
        let f = clearing_ratio(
            both,
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((f - 1.0 / 1.02).abs() < 1e-12);

        // Lone overloaded queue: ratio mu/lambda = 0.5.
        let inst = Instance::new(vec![0.6], vec![0.3]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        let f = clearing_ratio(
            SubsetMask::singleton(0),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((f - 0.5).abs() < 1e-15);

        // Dead servers clear nothing.
        let f = clearing_ratio(
            SubsetMask::singleton(0),
            SubsetMask::EMPTY,
            &p,
            &[0.0],
            inst.arrival_rates(),
        )
        .unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn family_on_shared_fast_server() {
        let (inst, p) = fast_slow();
        let fam = tight_family(
            SubsetMask::full(2),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((fam.value - 1.0 / 1.02).abs() < 1e-12);
        assert_eq!(fam.maximal, SubsetMask::from_indices(&[0, 1]));
        assert_eq!(fam.minimizers, vec![SubsetMask::from_indices(&[0, 1])]);
        // The singletons sit at 1/0.51, far from tight.
        let single = clearing_ratio(
            SubsetMask::singleton(0),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((single - 1.0 / 0.51).abs() < 1e-12);
    }

    #[test]
    fn family_with_disjoint_ties() {
        // Two queues on their own equal servers: everything ties at ratio 1,
        // exercising the union rule for disjointly-mixing minimizers.
        let inst = Instance::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let fam = tight_family(
            SubsetMask::full(2),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((fam.value - 1.0).abs() < 1e-12);
        assert_eq!(fam.minimizers.len(), 3);
        assert_eq!(fam.maximal, SubsetMask::full(2));
        assert_eq!(
            fam.minimal_members(),
            vec![SubsetMask::singleton(0), SubsetMask::singleton(1)]
        );
    }

    #[test]
    fn family_single_queue() {
        let inst = Instance::new(vec![0.4], vec![0.9]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        let fam = tight_family(
            SubsetMask::full(1),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert_eq!(fam.maximal, SubsetMask::singleton(0));
    }

    #[test]
    fn enumeration_cap_enforced() {
        let n = 25;
        let lambdas = (0..n).map(|i| 0.9 - 1e-3 * i as f64).collect();
        let inst = Instance::new(lambdas, vec![1.0]).unwrap();
        let p = StrategyProfile::uniform(n, 1);
        assert!(matches!(
            tight_family(
                SubsetMask::full(n),
                SubsetMask::EMPTY,
                &p,
                inst.service_rates(),
                inst.arrival_rates()
            ),
            Err(Error::EnumerationCap { size: 25, cap: ENUM_CAP })
        ));
    }

    #[test]
    fn parametric_agrees_with_enumeration() {
        let (inst, p) = fast_slow();
        let brute = tight_family(
            SubsetMask::full(2),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        let param = tight_family_parametric(
            SubsetMask::full(2),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((brute.value - param.value).abs() < 1e-9);
        assert_eq!(brute.maximal, param.maximal);

        // Single queue is trivial.
        let inst1 = Instance::new(vec![0.4], vec![0.9]).unwrap();
        let p1 = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        let fam = tight_family_parametric(
            SubsetMask::full(1),
            SubsetMask::EMPTY,
            &p1,
            inst1.service_rates(),
            inst1.arrival_rates(),
        )
        .unwrap();
        assert_eq!(fam.maximal, SubsetMask::singleton(0));

        // A larger random configuration.
        let inst10 = random_feasible(10, 4, 1.1, 3).unwrap();
        let p10 = StrategyProfile::random(10, 4, 3, 0.3);
        let brute = tight_family(
            SubsetMask::full(10),
            SubsetMask::EMPTY,
            &p10,
            inst10.service_rates(),
            inst10.arrival_rates(),
        )
        .unwrap();
        let param = tight_family_parametric(
            SubsetMask::full(10),
            SubsetMask::EMPTY,
            &p10,
            inst10.service_rates(),
            inst10.arrival_rates(),
        )
        .unwrap();
        assert!((brute.value - param.value).abs() < 1e-9);
        assert_eq!(brute.maximal, param.maximal);
    }

    #[test]
    fn partition_single_queue_overloaded() {
        let inst = Instance::new(vec![0.6], vec![0.3]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        let part = compute_rates(&p, &inst).unwrap();
        assert_eq!(part.groups, vec![SubsetMask::singleton(0)]);
        assert!((part.ratios[0] - 0.5).abs() < 1e-15);
        assert!((part.rates[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn partition_single_queue_stable() {
        let inst = Instance::new(vec![0.3], vec![0.6]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        let part = compute_rates(&p, &inst).unwrap();
        assert_eq!(part.per_queue, vec![0.0]);
        assert!((part.ratios[0] - 2.0).abs() < 1e-15);
        assert!(part.all_stable());
    }

    #[test]
    fn partition_shared_fast_server() {
        let (inst, p) = fast_slow();
        let part = compute_rates(&p, &inst).unwrap();
        assert_eq!(part.groups, vec![SubsetMask::from_indices(&[0, 1])]);
        let expect = 1.0 - 1.0 / 1.02;
        assert!((part.rates[0] - expect).abs() < 1e-12);
        assert!((part.per_queue[0] - expect).abs() < 1e-12);
        assert!((part.per_queue[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn partition_two_groups_with_discounting() {
        let inst = Instance::new(vec![0.9, 0.5], vec![0.6, 0.2]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let part = compute_rates(&p, &inst).unwrap();
        assert_eq!(
            part.groups,
            vec![SubsetMask::singleton(1), SubsetMask::singleton(0)]
        );
        assert!((part.rates[0] - 0.6).abs() < 1e-12);
        assert!((part.rates[1] - (1.0 - 0.6 / 0.9)).abs() < 1e-12);
        assert_eq!(part.per_queue[0], part.rates[1]);
        assert_eq!(part.per_queue[1], part.rates[0]);
        assert!(part.rates[0] > part.rates[1]);
    }

    #[test]
    fn partition_stabilizing_deviation() {
        // One queue keeps the fast server, the other tilts 5% to the slow
        // one: every subset's ratio climbs above 1 and the system stabilizes.
        let inst = Instance::new(vec![0.51, 0.51], vec![1.0, 0.49]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.95, 0.05]]).unwrap();
        let part = compute_rates(&p, &inst).unwrap();
        assert_eq!(part.groups, vec![SubsetMask::full(2)]);
        assert_eq!(part.per_queue, vec![0.0, 0.0]);
        let expect = (1.0 + 0.49 * 0.05) / 1.02;
        assert!((part.ratios[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn queue_rate_lookups() {
        let inst = Instance::new(vec![0.3], vec![0.6]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0]]).unwrap();
        assert_eq!(queue_rate(&p, &inst, 0).unwrap(), 0.0);
        assert!(matches!(
            queue_rate(&p, &inst, 1),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));

        let (inst, p) = fast_slow();
        let r = queue_rate(&p, &inst, 0).unwrap();
        assert!((r - (1.0 - 1.0 / 1.02)).abs() < 1e-12);

        let inst = Instance::new(vec![0.9, 0.5], vec![0.6, 0.2]).unwrap();
        let p = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((queue_rate(&p, &inst, 1).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn partition_dimension_mismatch() {
        let inst = Instance::new(vec![0.3], vec![0.6]).unwrap();
        let p = StrategyProfile::uniform(2, 1);
        assert!(matches!(
            compute_rates(&p, &inst),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn partition_json_shape() {
        let (inst, p) = fast_slow();
        let part = compute_rates(&p, &inst).unwrap();
        let js = serde_json::to_value(&part).unwrap();
        assert_eq!(js["groups"][0], serde_json::json!([0, 1]));
        assert!(js["f"][0].is_number());
        assert!(js["g"][0].is_number());
        assert_eq!(js["per_queue"].as_array().unwrap().len(), 2);
    }
}
