//! Queuing-game instances and strategy profiles.
//!
//! An [`Instance`] pins down the stochastic system: `n` queues receiving
//! packets at per-step rates in `(0,1)` and `m` servers succeeding with
//! probabilities in `[0,1]`, both stored in descending order. A
//! [`StrategyProfile`] fixes one randomization over servers per queue.
//!
//! Instance files are UTF-8 JSON documents with keys `lambda`, `mu` and an
//! optional `profile`. Rates are sorted descending on load and the applied
//! permutations are recorded so callers can map back to the file's own
//! indexing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for strategy profiles.
pub const ROW_SUM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

/// Arrival and service rates of a queuing system, each sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Per-queue arrival rates, each in the open interval `(0,1)`, descending.
    #[serde(rename = "lambda")]
    arrival_rates: Vec<f64>,
    /// Per-server success probabilities in `[0,1]`, descending.
    #[serde(rename = "mu")]
    service_rates: Vec<f64>,
}

impl Instance {
    /// Builds an instance from already-descending rate vectors.
    pub fn new(arrival_rates: Vec<f64>, service_rates: Vec<f64>) -> Result<Self> {
        if arrival_rates.is_empty() {
            return Err(Error::InvalidInstance("need at least one queue".into()));
        }
        if service_rates.is_empty() {
            return Err(Error::InvalidInstance("need at least one server".into()));
        }
        for (i, &l) in arrival_rates.iter().enumerate() {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidInstance(format!(
                    "arrival rate #{i} = {l} outside (0,1)"
                )));
            }
        }
        for (j, &m) in service_rates.iter().enumerate() {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidInstance(format!(
                    "service rate #{j} = {m} outside [0,1]"
                )));
            }
        }
        if arrival_rates.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInstance("arrival rates not descending".into()));
        }
        if service_rates.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInstance("service rates not descending".into()));
        }
        Ok(Instance {
            arrival_rates,
            service_rates,
        })
    }

    /// Builds an instance from unsorted rates. Returns the instance together
    /// with the queue and server permutations that were applied: entry `k` of
    /// each permutation is the original index now sitting at sorted slot `k`.
    pub fn sorted(
        arrival_rates: Vec<f64>,
        service_rates: Vec<f64>,
    ) -> Result<(Self, Vec<usize>, Vec<usize>)> {
        let queue_order = descending_order(&arrival_rates);
        let server_order = descending_order(&service_rates);
        let lambdas = queue_order.iter().map(|&i| arrival_rates[i]).collect();
        let mus = server_order.iter().map(|&j| service_rates[j]).collect();
        Ok((Self::new(lambdas, mus)?, queue_order, server_order))
    }

    pub fn n_queues(&self) -> usize {
        self.arrival_rates.len()
    }

    pub fn n_servers(&self) -> usize {
        self.service_rates.len()
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rates
    }

    pub fn service_rates(&self) -> &[f64] {
        &self.service_rates
    }

    pub fn arrival_rate(&self, i: usize) -> f64 {
        self.arrival_rates[i]
    }

    pub fn service_rate(&self, j: usize) -> f64 {
        self.service_rates[j]
    }

    /// Divides every arrival rate by `alpha >= 1`, leaving services untouched.
    pub fn scale(&self, alpha: f64) -> Result<Instance> {
        if !(alpha >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor {alpha} must be >= 1"
            )));
        }
        Instance::new(
            self.arrival_rates.iter().map(|l| l / alpha).collect(),
            self.service_rates.clone(),
        )
    }

    /// Checks central feasibility: for every prefix `k <= n`, the top-`k`
    /// service capacity strictly exceeds the top-`k` arrival load (servers
    /// beyond `m` count as zero capacity).
    pub fn is_feasible(&self) -> bool {
        let mut mu_sum = 0.0;
        let mut lambda_sum = 0.0;
        for k in 0..self.n_queues() {
            if k < self.n_servers() {
                mu_sum += self.service_rates[k];
            }
            lambda_sum += self.arrival_rates[k];
            if mu_sum <= lambda_sum {
                return false;
            }
        }
        true
    }

    /// The smallest prefix ratio `sum(mu[..k]) / sum(lambda[..k])`, a
    /// quantitative version of [`Instance::is_feasible`].
    pub fn feasibility_margin(&self) -> f64 {
        let mut mu_sum = 0.0;
        let mut lambda_sum = 0.0;
        let mut worst = f64::INFINITY;
        for k in 0..self.n_queues() {
            if k < self.n_servers() {
                mu_sum += self.service_rates[k];
            }
            lambda_sum += self.arrival_rates[k];
            worst = worst.min(mu_sum / lambda_sum);
        }
        worst
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    order
}

// ---------------------------------------------------------------------------
// Strategy profiles
// ---------------------------------------------------------------------------

/// One probability distribution over servers per queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyProfile {
    rows: Vec<Vec<f64>>,
}

impl StrategyProfile {
    /// Validates that every row is a distribution: entries in `[0,1]` and
    /// row sums within [`ROW_SUM_TOL`] of one.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidProfile("no rows".into()));
        }
        let m = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidProfile(format!(
                    "row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidProfile(format!(
                        "entry ({i},{j}) = {p} outside [0,1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidProfile(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(StrategyProfile { rows })
    }

    /// Every queue mixing uniformly over all servers.
    pub fn uniform(n_queues: usize, n_servers: usize) -> Self {
        let row = vec![1.0 / n_servers as f64; n_servers];
        StrategyProfile {
            rows: vec![row; n_queues],
        }
    }

    /// A seeded random profile. Roughly `sparsity` of the entries are zeroed
    /// before normalization so tests exercise disjoint server supports.
    pub fn random(n_queues: usize, n_servers: usize, seed: u64, sparsity: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_queues)
            .map(|_| random_row(&mut rng, n_servers, sparsity))
            .collect();
        StrategyProfile { rows }
    }

    pub fn n_queues(&self) -> usize {
        self.rows.len()
    }

    pub fn n_servers(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn prob(&self, queue: usize, server: usize) -> f64 {
        self.rows[queue][server]
    }

    /// Direct row access for search internals. Callers keep the row a
    /// distribution.
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.rows[i]
    }

    /// Replaces queue `i`'s row. The row is validated.
    pub fn with_row(&self, i: usize, row: Vec<f64>) -> Result<Self> {
        let mut rows = self.rows.clone();
        if i >= rows.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: rows.len(),
            });
        }
        rows[i] = row;
        StrategyProfile::new(rows)
    }

    /// Checks the profile shape against an instance.
    pub fn check_dims(&self, inst: &Instance) -> Result<()> {
        if self.n_queues() != inst.n_queues() || self.n_servers() != inst.n_servers() {
            return Err(Error::DimensionMismatch {
                profile_queues: self.n_queues(),
                profile_servers: self.n_servers(),
                queues: inst.n_queues(),
                servers: inst.n_servers(),
            });
        }
        Ok(())
    }
}

pub(crate) fn random_row(rng: &mut ChaCha8Rng, n_servers: usize, sparsity: f64) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..n_servers)
            .map(|_| {
                if rng.random::<f64>() < sparsity {
                    0.0
                } else {
                    // Exp(1) weights normalize to a flat Dirichlet draw.
                    -(1.0 - rng.random::<f64>()).ln()
                }
            })
            .collect();
        let sum: f64 = row.iter().sum();
        if sum > 1e-12 {
            for p in &mut row {
                *p /= sum;
            }
            let total: f64 = row.iter().sum();
            row[n_servers - 1] += 1.0 - total;
            return row;
        }
        // All entries were zeroed; redraw.
    }
}

// ---------------------------------------------------------------------------
// Named constructions and generators
// ---------------------------------------------------------------------------

/// A symmetric system of `n` queues and `n` unit servers with arrival rates
/// `1 - 1/e + eps` and the uniform profile. For small `eps` and growing `n`
/// this family pins the capacity-scaling threshold from above.
pub fn symmetric_instance(n: usize, eps: f64) -> Result<(Instance, StrategyProfile)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let e_inv = (-1.0f64).exp();
    if !(eps > 0.0 && eps < e_inv) {
        return Err(Error::InvalidArgument(format!(
            "eps = {eps} outside (0, 1/e)"
        )));
    }
    let lambda = 1.0 - e_inv + eps;
    let inst = Instance::new(vec![lambda; n], vec![1.0; n])?;
    Ok((inst, StrategyProfile::uniform(n, n)))
}

/// Maximum rescale attempts in [`random_feasible`].
const RANDOM_FEASIBLE_RETRIES: usize = 64;

/// Draws a random instance whose feasibility margin is at least `margin`,
/// deterministically from `seed`.
pub fn random_feasible(n: usize, m: usize, margin: f64, seed: u64) -> Result<Instance> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and m >= 1".into()));
    }
    if !(margin >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "margin {margin} must be >= 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_FEASIBLE_RETRIES {
        let mut mus: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..=1.0)).collect();
        let mut lambdas: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        mus.sort_by(|a, b| b.partial_cmp(a).unwrap());
        lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());

        let raw = Instance::new(lambdas.clone(), mus.clone())?;
        let current = raw.feasibility_margin();
        // Shrink arrivals so the margin lands strictly above the target while
        // every rate stays inside (0,1).
        let shrink = (current / margin * (1.0 - 1e-9)).min(0.999_999 / lambdas[0]);
        if shrink <= 0.0 {
            continue;
        }
        let scaled: Vec<f64> = lambdas.iter().map(|l| l * shrink).collect();
        if scaled.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            continue;
        }
        let inst = Instance::new(scaled, mus)?;
        if inst.is_feasible() && inst.feasibility_margin() >= margin {
            return Ok(inst);
        }
    }
    Err(Error::NonConvergence(format!(
        "no feasible instance with margin {margin} after {RANDOM_FEASIBLE_RETRIES} draws"
    )))
}

// ---------------------------------------------------------------------------
// Instance files
// ---------------------------------------------------------------------------

/// On-disk schema of an instance file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<Vec<Vec<f64>>>,
}

/// An instance loaded from disk, with rates sorted descending and the
/// permutations that map sorted indices back to the file's ordering.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub instance: Instance,
    /// Profile from the file, rows/columns permuted consistently with the
    /// rate sort, if present.
    pub profile: Option<StrategyProfile>,
    /// `queue_order[k]` is the file index of the queue at sorted slot `k`.
    pub queue_order: Vec<usize>,
    /// `server_order[k]` is the file index of the server at sorted slot `k`.
    pub server_order: Vec<usize>,
}

/// Parses an instance document from a JSON string.
pub fn parse_instance(text: &str) -> Result<LoadedInstance> {
    let file: InstanceFile = serde_json::from_str(text)?;
    let (instance, queue_order, server_order) = Instance::sorted(file.lambda, file.mu)?;
    let profile = match file.profile {
        None => None,
        Some(rows) => {
            if rows.len() != instance.n_queues() {
                return Err(Error::InvalidProfile(format!(
                    "profile has {} rows for {} queues",
                    rows.len(),
                    instance.n_queues()
                )));
            }
            let permuted: Vec<Vec<f64>> = queue_order
                .iter()
                .map(|&i| {
                    let row = &rows[i];
                    if row.len() != instance.n_servers() {
                        return Err(Error::InvalidProfile(format!(
                            "profile row {i} has {} entries for {} servers",
                            row.len(),
                            instance.n_servers()
                        )));
                    }
                    Ok(server_order.iter().map(|&j| row[j]).collect())
                })
                .collect::<Result<_>>()?;
            Some(StrategyProfile::new(permuted)?)
        }
    };
    Ok(LoadedInstance {
        instance,
        profile,
        queue_order,
        server_order,
    })
}

/// Reads and parses an instance file.
pub fn load_instance(path: &std::path::Path) -> Result<LoadedInstance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

/// Canonical serialization: sorted rates, fixed key order, newline-terminated.
/// Loading and re-serializing a canonical document is byte-stable.
pub fn canonical_instance_json(inst: &Instance, profile: Option<&StrategyProfile>) -> String {
    let file = InstanceFile {
        lambda: inst.arrival_rates.clone(),
        mu: inst.service_rates.clone(),
        profile: profile.map(|p| p.rows.clone()),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("instance serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn feasibility_matches_hand_checks() {
        // Two queues splitting a fast and a slow server: 1 > 0.51 and 1.49 > 1.02.
        let inst = Instance::new(vec![0.51, 0.51], vec![1.0, 0.49]).unwrap();
        assert!(inst.is_feasible());

        let single = Instance::new(vec![0.6], vec![0.3]).unwrap();
        assert!(!single.is_feasible());

        // k = 2 prefix fails: 1.0 > 1.0 is false (missing servers count as zero).
        let wide = Instance::new(vec![0.5, 0.5, 0.5], vec![1.0]).unwrap();
        assert!(!wide.is_feasible());
    }

    #[test]
    fn rejects_invalid_rates() {
        assert!(Instance::new(vec![], vec![0.5]).is_err());
        assert!(Instance::new(vec![0.5], vec![]).is_err());
        assert!(Instance::new(vec![1.0], vec![0.5]).is_err());
        assert!(Instance::new(vec![0.0], vec![0.5]).is_err());
        assert!(Instance::new(vec![0.5], vec![1.5]).is_err());
        assert!(Instance::new(vec![0.3, 0.5], vec![0.5]).is_err());
        assert!(Instance::new(vec![0.5], vec![0.2, 0.5]).is_err());
        // mu = 0 is allowed.
        assert!(Instance::new(vec![0.5], vec![0.5, 0.0]).is_ok());
    }

    #[test]
    fn scale_divides_arrivals_only() {
        let inst = Instance::new(vec![0.51, 0.51], vec![1.0, 0.49]).unwrap();
        let same = inst.scale(1.0).unwrap();
        assert_eq!(same, inst);

        let e = std::f64::consts::E;
        let scaled = inst.scale(e / (e - 1.0)).unwrap();
        assert!((scaled.arrival_rate(0) - 0.51 * (e - 1.0) / e).abs() < 1e-15);
        assert_eq!(scaled.service_rates(), inst.service_rates());

        let halved = Instance::new(vec![0.9, 0.5], vec![1.0, 1.0])
            .unwrap()
            .scale(2.0)
            .unwrap();
        assert_eq!(halved.arrival_rates(), &[0.45, 0.25]);

        assert!(inst.scale(0.9).is_err());
    }

    #[test]
    fn symmetric_construction() {
        let (inst, p) = symmetric_instance(1, 0.05).unwrap();
        assert!((inst.arrival_rate(0) - 0.682_120_558_828_557_7).abs() < 1e-12);
        assert_eq!(inst.service_rates(), &[1.0]);
        assert_eq!(p.rows(), &[vec![1.0]]);

        let (inst8, p8) = symmetric_instance(8, 0.05).unwrap();
        assert_eq!(inst8.n_queues(), 8);
        assert_eq!(inst8.n_servers(), 8);
        assert!(p8.rows().iter().all(|r| r.iter().all(|&x| x == 0.125)));

        let (inst2, _) = symmetric_instance(2, 0.01).unwrap();
        let expect = 1.0 - (-1.0f64).exp() + 0.01;
        assert!((inst2.arrival_rate(0) - expect).abs() < 1e-12);
        assert!((inst2.arrival_rate(1) - expect).abs() < 1e-12);

        assert!(symmetric_instance(0, 0.05).is_err());
        assert!(symmetric_instance(2, 0.0).is_err());
        assert!(symmetric_instance(2, 0.4).is_err());
    }

    #[test]
    fn random_feasible_meets_margin() {
        let inst = random_feasible(1, 1, 2.0, 7).unwrap();
        assert!(inst.service_rate(0) / inst.arrival_rate(0) >= 2.0);

        let e = std::f64::consts::E;
        let inst = random_feasible(4, 3, e / (e - 1.0), 1).unwrap();
        assert!(inst.is_feasible());
        assert!(inst.feasibility_margin() >= e / (e - 1.0));

        let a = random_feasible(3, 2, 1.3, 42).unwrap();
        let b = random_feasible(3, 2, 1.3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn profile_validation() {
        assert!(StrategyProfile::new(vec![vec![0.5, 0.5]]).is_ok());
        assert!(StrategyProfile::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(StrategyProfile::new(vec![vec![1.1, -0.1]]).is_err());
        assert!(StrategyProfile::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        assert!(StrategyProfile::new(vec![]).is_err());

        let u = StrategyProfile::uniform(2, 4);
        assert_eq!(u.prob(1, 3), 0.25);
    }

    #[test]
    fn load_sorts_and_permutes_profile() {
        let text = r#"{
            "lambda": [0.3, 0.7],
            "mu": [0.2, 0.9],
            "profile": [[0.25, 0.75], [0.5, 0.5]]
        }"#;
        let loaded = parse_instance(text).unwrap();
        assert_eq!(loaded.instance.arrival_rates(), &[0.7, 0.3]);
        assert_eq!(loaded.instance.service_rates(), &[0.9, 0.2]);
        assert_eq!(loaded.queue_order, vec![1, 0]);
        assert_eq!(loaded.server_order, vec![1, 0]);
        // Queue rows swapped, server columns swapped.
        let p = loaded.profile.unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.row(1), &[0.75, 0.25]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(parse_instance("not json").is_err());
        assert!(parse_instance(r#"{"lambda": [0.5]}"#).is_err());
        assert!(parse_instance(r#"{"lambda": [2.0], "mu": [1.0]}"#).is_err());
        assert!(parse_instance(r#"{"lambda": [0.5], "mu": [1.0], "profile": [[0.5, 0.6]]}"#).is_err());
    }

    proptest! {
        // Scaling a feasible instance further never breaks feasibility, and
        // canonical serialization is a fixed point of load -> serialize.
        #[test]
        fn scale_preserves_feasibility(seed in 0u64..5000, alpha in 1.0f64..4.0) {
            let inst = random_feasible(3, 2, 1.0, seed).unwrap();
            prop_assert!(inst.is_feasible());
            prop_assert!(inst.scale(alpha).unwrap().is_feasible());
        }

        #[test]
        fn canonical_json_round_trips(seed in 0u64..5000) {
            let inst = random_feasible(3, 2, 1.1, seed).unwrap();
            let profile = StrategyProfile::random(3, 2, seed, 0.2);
            let text = canonical_instance_json(&inst, Some(&profile));
            let loaded = parse_instance(&text).unwrap();
            let again = canonical_instance_json(&loaded.instance, loaded.profile.as_ref());
            prop_assert_eq!(text, again);
        }
    }
}
