//! Micro/macro mapping: aggregation of agent populations into per-location
//! compartment counts, integerization of real-valued analysis states, and the
//! two macro-to-micro agent adjustment algorithms.

mod adjust;

pub use adjust::{
    backward_cascade_redistribution, randomized_redistribution, AdjustmentLog, AdjustmentMove,
};

use crate::abm::{AgentPopulation, HealthStatus};
use crate::error::{Error, Result};

/// Per-location compartment counts, stored location-major in the fixed
/// status order (S,E,I_M,I_S,H,R,D and, when enabled, I_A,R_A).
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentCounts {
    n_locations: usize,
    asymptomatic: bool,
    values: Vec<f64>,
}

impl CompartmentCounts {
    pub fn zeros(n_locations: usize, asymptomatic: bool) -> Self {
        let n_status = HealthStatus::all(asymptomatic).len();
        CompartmentCounts {
            n_locations,
            asymptomatic,
            values: vec![0.0; n_locations * n_status],
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_status(&self) -> usize {
        HealthStatus::all(self.asymptomatic).len()
    }

    pub fn asymptomatic(&self) -> bool {
        self.asymptomatic
    }

    pub fn statuses(&self) -> &'static [HealthStatus] {
        HealthStatus::all(self.asymptomatic)
    }

    pub fn get(&self, location: usize, status: HealthStatus) -> f64 {
        self.values[location * self.n_status() + status.index()]
    }

    pub fn get_idx(&self, location: usize, status_idx: usize) -> f64 {
        self.values[location * self.n_status() + status_idx]
    }

    pub fn set_idx(&mut self, location: usize, status_idx: usize, value: f64) {
        let n = self.n_status();
        self.values[location * n + status_idx] = value;
    }

    pub fn row(&self, location: usize) -> &[f64] {
        let n = self.n_status();
        &self.values[location * n..(location + 1) * n]
    }

    pub fn row_mut(&mut self, location: usize) -> &mut [f64] {
        let n = self.n_status();
        &mut self.values[location * n..(location + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of one status over every location.
    pub fn total(&self, status: HealthStatus) -> f64 {
        (0..self.n_locations)
            .map(|loc| self.get(loc, status))
            .sum()
    }

    /// Interpret a row as integer counts, failing on negative or fractional
    /// entries or a row-sum mismatch with the expected population size.
    pub(crate) fn integer_row(&self, location: usize, pop_size: u32) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(self.n_status());
        let mut sum = 0u64;
        for &v in self.row(location) {
            let r = v.round();
            if v < 0.0 || (v - r).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "count {v} at location {location} is not a non-negative integer"
                )));
            }
            out.push(r as u32);
            sum += r as u64;
        }
        if sum != pop_size as u64 {
            return Err(Error::Contract(format!(
                "location {location} counts sum to {sum}, population is {pop_size}"
            )));
        }
        Ok(out)
    }
}

/// The state vector the filter operates on: aggregated compartment counts
/// plus augmented parameter values (names live in the ensemble's layout).
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub counts: CompartmentCounts,
    pub params: Vec<f64>,
}

/// Count agents per (location, status): the micro-to-macro map.
pub fn aggregate(pop: &AgentPopulation) -> CompartmentCounts {
    let mut counts = CompartmentCounts::zeros(pop.n_locations(), pop.asymptomatic_enabled());
    let n_status = counts.n_status();
    for agent in pop.agents() {
        counts.values[agent.location as usize * n_status + agent.status.index()] += 1.0;
    }
    counts
}

/// Project one location's real-valued counts onto non-negative integers that
/// sum exactly to `pop_size`.
///
/// Negatives are clamped to zero, every entry is floored, and the remaining
/// units are handed out one by one in rounds over the entries ordered by
/// descending fractional part (ties to the lower status index). When the
/// clamped floors exceed `pop_size`, units are removed one by one in rounds
/// over the entries ordered by ascending fractional part (ties to the higher
/// status index), skipping entries already at zero.
pub fn integerize(real_counts: &[f64], pop_size: u32) -> Vec<u32> {
    let n = real_counts.len();
    assert!(n > 0, "integerize needs at least one entry");
    let clamped: Vec<f64> = real_counts.iter().map(|v| v.max(0.0)).collect();
    let mut out: Vec<u32> = Vec::with_capacity(n);
    let mut fracs: Vec<f64> = Vec::with_capacity(n);
    let mut total = 0u64;
    for &v in &clamped {
        let f = v.floor();
        out.push(f as u32);
        fracs.push(v - f);
        total += f as u64;
    }

    if total < pop_size as u64 {
        let mut deficit = pop_size as u64 - total;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            fracs[b]
                .partial_cmp(&fracs[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut i = 0;
        while deficit > 0 {
            out[order[i % n]] += 1;
            deficit -= 1;
            i += 1;
        }
    } else if total > pop_size as u64 {
        let mut excess = total - pop_size as u64;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            fracs[a]
                .partial_cmp(&fracs[b])
                .unwrap()
                .then(b.cmp(&a))
        });
        let mut i = 0;
        while excess > 0 {
            let idx = order[i % n];
            if out[idx] > 0 {
                out[idx] -= 1;
                excess -= 1;
            }
            i += 1;
        }
    }
    out
}

/// Apply [`integerize`] to every location row of a real-valued analysis state.
pub fn integerize_counts(counts: &CompartmentCounts, location_sizes: &[u32]) -> CompartmentCounts {
    let mut out = counts.clone();
    for loc in 0..counts.n_locations() {
        let ints = integerize(counts.row(loc), location_sizes[loc]);
        for (idx, v) in ints.iter().enumerate() {
            out.set_idx(loc, idx, *v as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::{init_population, ModelParams};
    use crate::rng::rng_from_seed;

    #[test]
    fn aggregate_counts_single_class() {
        let mut rng = rng_from_seed(30);
        let pop = init_population(10, 2, &[0.2; 5], &[1.0, 0.0], false, &mut rng).unwrap();
        let counts = aggregate(&pop);
        assert_eq!(counts.get(0, HealthStatus::Susceptible), 10.0);
        assert_eq!(counts.row(0).iter().sum::<f64>(), 10.0);
        assert_eq!(counts.row(1).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn aggregate_rows_sum_to_location_sizes() {
        let mut rng = rng_from_seed(31);
        let mut pop = init_population(
            800,
            3,
            &[0.36, 0.27, 0.16, 0.13, 0.08],
            &[0.5, 0.3, 0.2],
            false,
            &mut rng,
        )
        .unwrap();
        crate::abm::seed_infections(&mut pop, &[5, 5, 5], &ModelParams::default(), &mut rng)
            .unwrap();
        let counts = aggregate(&pop);
        for loc in 0..3 {
            assert_eq!(
                counts.row(loc).iter().sum::<f64>(),
                pop.location_sizes()[loc] as f64
            );
        }
    }

    #[test]
    fn integerize_matches_hand_executed_largest_remainder() {
        assert_eq!(integerize(&[2.6, 3.4, 4.0], 10), vec![3, 3, 4]);
    }

    #[test]
    fn integerize_clamps_and_removes_deterministically() {
        // (-1, 6, 5) clamps to (0, 6, 5) which oversums by one; removal is
        // from the smallest fractional part, ties to the higher status index.
        assert_eq!(integerize(&[-1.0, 6.0, 5.0], 10), vec![0, 6, 4]);
    }

    #[test]
    fn integerize_keeps_exact_integers_fixed() {
        assert_eq!(integerize(&[2.0, 3.0, 5.0], 10), vec![2, 3, 5]);
    }

    #[test]
    fn integerize_minimal_l1_against_brute_force() {
        // Exhaustive projection oracle on small instances: the deterministic
        // rule must attain the minimal L1 distance to the clamped input over
        // all feasible non-negative integer vectors with the required total.
        fn brute_min_l1(clamped: &[f64], pop: u32) -> f64 {
            fn rec(rest: &[f64], budget: u32, acc: f64, best: &mut f64) {
                if rest.len() == 1 {
                    let cost = acc + (budget as f64 - rest[0]).abs();
                    if cost < *best {
                        *best = cost;
                    }
                    return;
                }
                for take in 0..=budget {
                    rec(
                        &rest[1..],
                        budget - take,
                        acc + (take as f64 - rest[0]).abs(),
                        best,
                    );
                }
            }
            let mut best = f64::INFINITY;
            rec(clamped, pop, 0.0, &mut best);
            best
        }

        let mut rng = rng_from_seed(32);
        use rand::Rng;
        for _ in 0..200 {
            let n = rng.random_range(2..5usize);
            let pop: u32 = rng.random_range(1..12);
            let reals: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-2.0..6.0_f64))
                .collect();
            let clamped: Vec<f64> = reals.iter().map(|v| v.max(0.0)).collect();
            let ints = integerize(&reals, pop);
            assert_eq!(ints.iter().map(|&v| v as u64).sum::<u64>(), pop as u64);
            let l1: f64 = ints
                .iter()
                .zip(&clamped)
                .map(|(&i, &c)| (i as f64 - c).abs())
                .sum();
            let best = brute_min_l1(&clamped, pop);
            assert!(
                l1 <= best + 1e-9,
                "reals {reals:?} pop {pop}: l1 {l1} vs brute {best}"
            );
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        // Rebuild the same population with agents listed in reverse order;
        // aggregated counts must be identical.
        let mut rng = rng_from_seed(33);
        let mut pop = init_population(60, 2, &[0.2; 5], &[0.5, 0.5], false, &mut rng).unwrap();
        crate::abm::seed_infections(&mut pop, &[4, 4], &ModelParams::default(), &mut rng).unwrap();

        let n = pop.n_agents();
        let remap = |id: u32| (n - 1 - id as usize) as u32;
        let mut agents: Vec<crate::abm::Agent> = pop.agents().to_vec();
        agents.reverse();
        let houses: Vec<crate::abm::House> = pop
            .houses()
            .iter()
            .map(|h| crate::abm::House {
                location: h.location,
                members: h.members.iter().map(|&m| remap(m)).collect(),
            })
            .collect();
        let permuted = AgentPopulation::from_parts(agents, houses, 2, false);
        assert_eq!(aggregate(&pop), aggregate(&permuted));
    }
}
