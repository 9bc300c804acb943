//! Population construction and infection seeding.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::{sample_duration, Agent, AgentPopulation, HealthStatus, House, ModelParams};

/// Build a fully susceptible population.
///
/// Every location receives a deterministic agent quota (largest-remainder
/// apportionment of `location_weights`), so independently sampled populations
/// share the same per-location sizes; the filter relies on those row sums
/// being constant across ensemble members. Within a location, houses are
/// generated by repeatedly sampling a size from `p_house` until the quota is
/// filled, the final house truncated if fewer agents remain.
pub fn init_population(
    n_agents: usize,
    n_locations: usize,
    p_house: &[f64; 5],
    location_weights: &[f64],
    asymptomatic: bool,
    rng: &mut SimRng,
) -> Result<AgentPopulation> {
    if n_agents == 0 {
        return Err(Error::Config("population must have at least one agent".into()));
    }
    if n_locations == 0 {
        return Err(Error::Config("population must have at least one location".into()));
    }
    let p_sum: f64 = p_house.iter().sum();
    if (p_sum - 1.0).abs() > 1e-6 || p_house.iter().any(|p| *p < 0.0) {
        return Err(Error::Config(format!(
            "p_house must be a probability vector, got {p_house:?}"
        )));
    }
    if location_weights.len() != n_locations {
        return Err(Error::Config(format!(
            "location_weights has {} entries, expected {n_locations}",
            location_weights.len()
        )));
    }
    let w_sum: f64 = location_weights.iter().sum();
    if (w_sum - 1.0).abs() > 1e-6 || location_weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Config(format!(
            "location_weights must be a probability vector, got {location_weights:?}"
        )));
    }

    let size_dist = WeightedIndex::new(p_house)
        .map_err(|e| Error::Config(format!("invalid p_house weights: {e}")))?;

    let ideal: Vec<f64> = location_weights
        .iter()
        .map(|w| w * n_agents as f64)
        .collect();
    let quotas = crate::macromap::integerize(&ideal, n_agents as u32);

    let mut agents = Vec::with_capacity(n_agents);
    let mut houses = Vec::new();
    for (location, &quota) in quotas.iter().enumerate() {
        let mut remaining = quota as usize;
        while remaining > 0 {
            let size = (size_dist.sample(rng) + 1).min(remaining);
            let house_id = houses.len() as u32;
            let members: Vec<u32> =
                (agents.len()..agents.len() + size).map(|id| id as u32).collect();
            for _ in 0..size {
                agents.push(Agent {
                    status: HealthStatus::Susceptible,
                    house_id,
                    location: location as u32,
                    remaining_days: 0.0,
                    days_in_status: 0,
                    risky_contacts: 0,
                });
            }
            houses.push(House {
                location: location as u32,
                members,
            });
            remaining -= size;
        }
    }

    Ok(AgentPopulation::from_parts(
        agents,
        houses,
        n_locations,
        asymptomatic,
    ))
}

/// Expose randomly chosen susceptible agents, per location.
///
/// Each newly exposed agent draws a fresh Gamma residence time for E.
pub fn seed_infections(
    pop: &mut AgentPopulation,
    n_exposed_per_location: &[u32],
    params: &ModelParams,
    rng: &mut SimRng,
) -> Result<()> {
    if n_exposed_per_location.len() != pop.n_locations() {
        return Err(Error::Config(format!(
            "seed counts have {} entries, expected {}",
            n_exposed_per_location.len(),
            pop.n_locations()
        )));
    }
    for (loc, &want) in n_exposed_per_location.iter().enumerate() {
        if want == 0 {
            continue;
        }
        let susceptible: Vec<u32> = pop
            .agents()
            .iter()
            .enumerate()
            .filter(|(_, a)| {
                a.location as usize == loc && a.status == HealthStatus::Susceptible
            })
            .map(|(id, _)| id as u32)
            .collect();
        if (want as usize) > susceptible.len() {
            return Err(Error::Config(format!(
                "location {loc} has {} susceptible agents, cannot seed {want}",
                susceptible.len()
            )));
        }
        let chosen = rand::seq::index::sample(rng, susceptible.len(), want as usize);
        for idx in chosen.iter() {
            let id = susceptible[idx];
            let days = sample_duration(HealthStatus::Exposed, params, rng)?;
            pop.set_status(id, HealthStatus::Exposed);
            pop.agents_mut()[id as usize].remaining_days = days;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn deterministic_size_two_houses() {
        let mut rng = rng_from_seed(1);
        let pop =
            init_population(10, 1, &[0.0, 1.0, 0.0, 0.0, 0.0], &[1.0], false, &mut rng).unwrap();
        assert_eq!(pop.houses().len(), 5);
        assert!(pop.houses().iter().all(|h| h.members.len() == 2));
        assert!(pop
            .agents()
            .iter()
            .all(|a| a.status == HealthStatus::Susceptible
                && a.days_in_status == 0
                && a.risky_contacts == 0));
    }

    #[test]
    fn single_agent_truncates_house() {
        let mut rng = rng_from_seed(2);
        let pop =
            init_population(1, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
        assert_eq!(pop.houses().len(), 1);
        assert_eq!(pop.houses()[0].members.len(), 1);
        assert_eq!(pop.n_agents(), 1);
    }

    #[test]
    fn house_size_histogram_tracks_p_house() {
        // Empirical frequency per bin within ±2% of p_house, pooled over 10 seeds.
        let p_house = [0.36, 0.27, 0.16, 0.13, 0.08];
        let mut counts = [0usize; 5];
        let mut total = 0usize;
        for seed in 0..10 {
            let mut rng = rng_from_seed(100 + seed);
            let pop = init_population(30_000, 1, &p_house, &[1.0], false, &mut rng).unwrap();
            for h in pop.houses() {
                counts[h.members.len() - 1] += 1;
                total += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / total as f64;
            assert!(
                (freq - p_house[i]).abs() < 0.02,
                "bin {}: freq {freq} vs {}",
                i + 1,
                p_house[i]
            );
        }
    }

    #[test]
    fn every_agent_in_exactly_one_house() {
        let mut rng = rng_from_seed(3);
        let pop = init_population(
            5_000,
            4,
            &[0.36, 0.27, 0.16, 0.13, 0.08],
            &[0.25; 4],
            false,
            &mut rng,
        )
        .unwrap();
        let mut seen = vec![0u8; pop.n_agents()];
        for (hid, house) in pop.houses().iter().enumerate() {
            assert!(!house.members.is_empty() && house.members.len() <= 5);
            for &m in &house.members {
                seen[m as usize] += 1;
                assert_eq!(pop.agents()[m as usize].house_id as usize, hid);
                assert_eq!(pop.agents()[m as usize].location, house.location);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        let total: u32 = pop.location_sizes().iter().sum();
        assert_eq!(total as usize, pop.n_agents());
    }

    #[test]
    fn location_quotas_are_deterministic_across_samples() {
        // Independently sampled populations share exact per-location sizes.
        let weights = [0.4, 0.35, 0.25];
        let mut sizes = Vec::new();
        for seed in 0..4 {
            let mut rng = rng_from_seed(200 + seed);
            let pop = init_population(
                2_000,
                3,
                &[0.36, 0.27, 0.16, 0.13, 0.08],
                &weights,
                false,
                &mut rng,
            )
            .unwrap();
            sizes.push(pop.location_sizes().to_vec());
        }
        assert!(sizes.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(sizes[0], vec![800, 700, 500]);
    }

    #[test]
    fn rejects_zero_agents_and_bad_weights() {
        let mut rng = rng_from_seed(4);
        assert!(init_population(0, 1, &[0.2; 5], &[1.0], false, &mut rng).is_err());
        assert!(init_population(10, 1, &[0.3; 5], &[1.0], false, &mut rng).is_err());
        assert!(init_population(10, 2, &[0.2; 5], &[1.0], false, &mut rng).is_err());
    }

    #[test]
    fn seeding_exposes_requested_counts() {
        let params = ModelParams {
            contact_matrix: super::super::ContactMatrix::identity(4),
            ..ModelParams::default()
        };
        let mut rng = rng_from_seed(5);
        let mut pop = init_population(
            400,
            4,
            &[0.36, 0.27, 0.16, 0.13, 0.08],
            &[0.25; 4],
            false,
            &mut rng,
        )
        .unwrap();
        seed_infections(&mut pop, &[3, 0, 0, 0], &params, &mut rng).unwrap();
        let exposed: Vec<&Agent> = pop
            .agents()
            .iter()
            .filter(|a| a.status == HealthStatus::Exposed)
            .collect();
        assert_eq!(exposed.len(), 3);
        assert!(exposed.iter().all(|a| a.location == 0));
        assert!(exposed.iter().all(|a| a.remaining_days > 0.0));
    }

    #[test]
    fn seeding_zero_is_identity() {
        let params = ModelParams::default();
        let mut rng = rng_from_seed(6);
        let mut pop =
            init_population(50, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
        let before = pop.clone();
        seed_infections(&mut pop, &[0], &params, &mut rng).unwrap();
        assert_eq!(pop, before);
    }

    #[test]
    fn seeding_more_than_population_errors() {
        let params = ModelParams::default();
        let mut rng = rng_from_seed(7);
        let mut pop =
            init_population(5, 1, &[1.0, 0.0, 0.0, 0.0, 0.0], &[1.0], false, &mut rng).unwrap();
        let err = seed_infections(&mut pop, &[6], &params, &mut rng).unwrap_err();
        assert!(err.to_string().contains("location 0"));
    }
}
