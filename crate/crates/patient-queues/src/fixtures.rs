//! Small named systems used across tests, examples, and the validation
//! suite.

use crate::instance::{Instance, StrategyProfile};

/// Two queues at rate 0.51 facing a unit-rate server and a 0.49 server.
/// With both queues on the fast server the pair ages at `1 - 1/1.02`; a 5%
/// tilt by either queue stabilizes the whole system.
pub fn fast_slow_pair() -> Instance {
    Instance::new(vec![0.51, 0.51], vec![1.0, 0.49]).expect("valid rates")
}

/// Both queues sending every packet to the fast server.
pub fn both_on_fast() -> StrategyProfile {
    StrategyProfile::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).expect("valid profile")
}

/// The stabilizing deviation: queue 1 tilts 5% of its mass to the slow
/// server. Every subset then clears faster than it arrives.
pub fn tilted_deviation() -> StrategyProfile {
    StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.95, 0.05]]).expect("valid profile")
}

/// Two overloaded queues pinned to separate servers, producing two groups
/// with distinct aging rates (0.6 for queue 1, 1/3 for queue 0 after the
/// fast server is fully discounted).
pub fn two_group_chain() -> (Instance, StrategyProfile) {
    let inst = Instance::new(vec![0.9, 0.5], vec![0.6, 0.2]).expect("valid rates");
    let p = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).expect("valid profile");
    (inst, p)
}

/// A single queue that outpaces its only server; it ages at exactly 0.5.
pub fn single_unstable() -> (Instance, StrategyProfile) {
    let inst = Instance::new(vec![0.6], vec![0.3]).expect("valid rates");
    (inst, StrategyProfile::uniform(1, 1))
}

/// A single comfortably stable queue.
pub fn single_stable() -> (Instance, StrategyProfile) {
    let inst = Instance::new(vec![0.3], vec![0.6]).expect("valid rates");
    (inst, StrategyProfile::uniform(1, 1))
}

/// Four queues competing for three servers in a nested pattern: two inner
/// queues split between the middle server and their own outer server, two
/// outer queues send exclusively to their outer server.
///
/// Derived so that the inner pair {0,1} and all its unions with the outer
/// singletons are tight at ratio 0.9: the level partition has the inner pair
/// at level 1 and the outer singletons at level 2, and the profile is a Nash
/// equilibrium with every queue aging at 0.1.
pub fn inner_outer() -> (Instance, StrategyProfile) {
    // Sorted order: queues 0,1 are the inner pair (arrival 0.75), queues 2,3
    // the outer ones (arrival 1/3); server 0 is the middle one.
    let inst = Instance::new(vec![0.75, 0.75, 1.0 / 3.0, 1.0 / 3.0], vec![1.0, 0.6, 0.6])
        .expect("valid rates");
    let p = StrategyProfile::new(vec![
        vec![0.5, 0.5, 0.0],
        vec![0.5, 0.0, 0.5],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ])
    .expect("valid profile");
    (inst, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{certify_nash, level_partition, CostModel};
    use crate::mask::SubsetMask;
    use crate::rates::{clearing_ratio, compute_rates, tight_family};

    #[test]
    fn inner_outer_tight_structure() {
        let (inst, p) = inner_outer();
        assert!(inst.is_feasible());

        let fam = tight_family(
            SubsetMask::full(4),
            SubsetMask::EMPTY,
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((fam.value - 0.9).abs() < 1e-12);
        assert_eq!(fam.maximal, SubsetMask::full(4));
        // Exactly the nested pattern: the inner pair and its unions with
        // outer singletons.
        let expect: Vec<SubsetMask> = [
            vec![0, 1],
            vec![0, 1, 2],
            vec![0, 1, 3],
            vec![0, 1, 2, 3],
        ]
        .iter()
        .map(|ix| SubsetMask::from_indices(ix))
        .collect();
        let mut expect = expect;
        expect.sort();
        assert_eq!(fam.minimizers, expect);

        // Conditioned on the inner pair, each outer singleton is tight too.
        let f = clearing_ratio(
            SubsetMask::singleton(2),
            SubsetMask::from_indices(&[0, 1]),
            &p,
            inst.service_rates(),
            inst.arrival_rates(),
        )
        .unwrap();
        assert!((f - 0.9).abs() < 1e-12);
    }

    #[test]
    fn inner_outer_levels_and_rates() {
        let (inst, p) = inner_outer();
        let part = compute_rates(&p, &inst).unwrap();
        assert_eq!(part.groups, vec![SubsetMask::full(4)]);
        assert!((part.rates[0] - 0.1).abs() < 1e-12);

        let lp = level_partition(&p, &inst).unwrap();
        assert_eq!(lp.levels.len(), 2);
        assert_eq!(lp.levels[0], vec![SubsetMask::from_indices(&[0, 1])]);
        assert_eq!(
            lp.levels[1],
            vec![SubsetMask::singleton(2), SubsetMask::singleton(3)]
        );
        assert_eq!(lp.covered, SubsetMask::full(4));
    }

    #[test]
    fn inner_outer_is_nash() {
        let (inst, p) = inner_outer();
        let cert = certify_nash(&p, &inst, 1e-6, CostModel::AgingRate).unwrap();
        assert!(cert.is_nash, "violations: {:?}", cert.violations);
    }
}
