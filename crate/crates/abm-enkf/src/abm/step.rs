//! Daily dynamics: contact sampling, transmission, and disease progression.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, Geometric, Poisson};

use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::{AgentPopulation, ContactDistribution, HealthStatus, ModelParams};

/// Draw a Gamma residence time for a timed status.
pub fn sample_duration(
    status: HealthStatus,
    params: &ModelParams,
    rng: &mut SimRng,
) -> Result<f64> {
    let g = params.residence.for_status(status).ok_or_else(|| {
        Error::Contract(format!("status {} has no residence time", status.label()))
    })?;
    let dist = Gamma::new(g.shape, g.scale)
        .map_err(|e| Error::Config(format!("invalid gamma parameters: {e}")))?;
    Ok(dist.sample(rng))
}

/// Draw the number of daily contacts for an agent living at `location`.
pub fn sample_num_contacts(params: &ModelParams, location: usize, rng: &mut SimRng) -> u32 {
    match params.contact_distribution {
        ContactDistribution::Poisson => {
            let lambda = params.lambda_at(location);
            if lambda <= 0.0 {
                return 0;
            }
            let dist = Poisson::new(lambda).expect("validated lambda");
            dist.sample(rng) as u32
        }
        ContactDistribution::Geometric { p } => {
            if p >= 1.0 {
                return 0;
            }
            let dist = Geometric::new(p).expect("validated p");
            dist.sample(rng) as u32
        }
    }
}

/// Advance the population by one day.
///
/// Contact phase: every living, non-hospitalized agent initiates a sampled
/// number of contacts, each casual with probability `q_casual` and domestic
/// otherwise. Domestic partners are drawn uniformly among living,
/// non-hospitalized housemates; casual partners are drawn by first sampling a
/// target location from the contact-matrix column of the initiator's location
/// and then uniformly among the living, non-hospitalized agents there. When
/// exactly one member of a pair is infectious and the other susceptible, the
/// susceptible one counts a risky contact and becomes exposed with the
/// contact-type infection probability.
///
/// Progression phase: timed agents decrement their residence counter; agents
/// whose counter reaches zero move along the progression diagram, drawing a
/// fresh residence time where the next class is timed.
pub fn step_day(pop: &mut AgentPopulation, params: &ModelParams, rng: &mut SimRng) {
    let n_locations = pop.n_locations();
    let asymptomatic = pop.asymptomatic_enabled();

    // Statuses at the start of the day. Agents exposed during the contact
    // phase must not progress until the next day, otherwise a short Gamma
    // draw would produce a composite S -> I transition within one step.
    let start_status: Vec<HealthStatus> = pop.agents().iter().map(|a| a.status).collect();

    // Eligibility (not hospitalized, not deceased) is constant through the
    // contact phase: the only in-phase transition is S -> E.
    let mut eligible: Vec<Vec<u32>> = vec![Vec::new(); n_locations];
    for (id, agent) in pop.agents().iter().enumerate() {
        if !matches!(
            agent.status,
            HealthStatus::Hospitalized | HealthStatus::Deceased
        ) {
            eligible[agent.location as usize].push(id as u32);
        }
    }

    let n_agents = pop.n_agents();
    for initiator in 0..n_agents {
        let (init_status, init_loc, init_house) = {
            let a = &pop.agents()[initiator];
            (a.status, a.location as usize, a.house_id)
        };
        if matches!(
            init_status,
            HealthStatus::Hospitalized | HealthStatus::Deceased
        ) {
            continue;
        }
        let n_contacts = sample_num_contacts(params, init_loc, rng);
        for _ in 0..n_contacts {
            let casual = rng.random::<f64>() < params.q_casual;
            let partner = if casual {
                sample_casual_partner(&eligible, params, initiator as u32, init_loc, rng)
            } else {
                sample_domestic_partner(pop, initiator as u32, init_house, rng)
            };
            let Some(partner) = partner else { continue };
            let beta = if casual {
                params.beta_casual
            } else {
                params.beta_domestic
            };
            resolve_contact(pop, params, initiator as u32, partner, beta, rng);
        }
    }

    // Progression phase. Each agent is visited once; transitions take effect
    // immediately but the new status is not decremented again this day, and
    // agents exposed during the contact phase sit the phase out.
    for id in 0..n_agents {
        let agent = &mut pop.agents_mut()[id];
        if agent.status != start_status[id] {
            continue;
        }
        agent.days_in_status = agent.days_in_status.saturating_add(1);
        if !agent.status.has_duration() {
            continue;
        }
        agent.remaining_days -= 1.0;
        if agent.remaining_days > 0.0 {
            continue;
        }
        let from = agent.status;
        let next = match from {
            HealthStatus::Exposed => {
                if rng.random::<f64>() < params.q_severe {
                    HealthStatus::InfectedSevere
                } else if asymptomatic && rng.random::<f64>() < params.q_asymptomatic {
                    HealthStatus::InfectedAsymptomatic
                } else {
                    HealthStatus::InfectedMild
                }
            }
            HealthStatus::InfectedMild => HealthStatus::Recovered,
            HealthStatus::InfectedAsymptomatic => HealthStatus::RecoveredAsymptomatic,
            HealthStatus::InfectedSevere => HealthStatus::Hospitalized,
            HealthStatus::Hospitalized => {
                if rng.random::<f64>() < params.q_death {
                    HealthStatus::Deceased
                } else {
                    HealthStatus::Recovered
                }
            }
            _ => unreachable!(),
        };
        pop.set_status(id as u32, next);
        if next.has_duration() {
            let days = sample_duration(next, params, rng).expect("timed status");
            pop.agents_mut()[id].remaining_days = days;
        }
    }
}

fn sample_domestic_partner(
    pop: &AgentPopulation,
    initiator: u32,
    house_id: u32,
    rng: &mut SimRng,
) -> Option<u32> {
    let members = &pop.houses()[house_id as usize].members;
    let mut candidates: [u32; 5] = [0; 5];
    let mut n = 0;
    for &m in members {
        if m == initiator {
            continue;
        }
        let status = pop.agents()[m as usize].status;
        if matches!(status, HealthStatus::Hospitalized | HealthStatus::Deceased) {
            continue;
        }
        candidates[n] = m;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some(candidates[rng.random_range(0..n)])
}

fn sample_casual_partner(
    eligible: &[Vec<u32>],
    params: &ModelParams,
    initiator: u32,
    init_loc: usize,
    rng: &mut SimRng,
) -> Option<u32> {
    let target_loc = params.contact_matrix.sample_target(init_loc, rng);
    let pool = &eligible[target_loc];
    if pool.is_empty() || (pool.len() == 1 && pool[0] == initiator) {
        return None;
    }
    loop {
        let cand = pool[rng.random_range(0..pool.len())];
        if cand != initiator {
            return Some(cand);
        }
    }
}

/// Apply the transmission rule to one contact pair. Infection requires
/// exactly one infectious member and one susceptible member; the roles of
/// initiator and partner are symmetric.
fn resolve_contact(
    pop: &mut AgentPopulation,
    params: &ModelParams,
    a: u32,
    b: u32,
    beta: f64,
    rng: &mut SimRng,
) {
    let status_a = pop.agents()[a as usize].status;
    let status_b = pop.agents()[b as usize].status;
    let susceptible = if status_a == HealthStatus::Susceptible && status_b.is_infectious() {
        a
    } else if status_b == HealthStatus::Susceptible && status_a.is_infectious() {
        b
    } else {
        return;
    };
    pop.agents_mut()[susceptible as usize].risky_contacts += 1;
    if rng.random::<f64>() < beta {
        let days = sample_duration(HealthStatus::Exposed, params, rng).expect("E is timed");
        pop.set_status(susceptible, HealthStatus::Exposed);
        let agent = &mut pop.agents_mut()[susceptible as usize];
        agent.remaining_days = days;
        // Leaving S through model evolution clears the counter.
        agent.risky_contacts = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::{init_population, seed_infections, ContactMatrix};
    use crate::rng::rng_from_seed;

    fn counts(pop: &AgentPopulation) -> Vec<usize> {
        let mut c = vec![0usize; 9];
        for a in pop.agents() {
            c[a.status.index()] += 1;
        }
        c
    }

    #[test]
    fn duration_moments_match_gamma() {
        let params = ModelParams::default();
        let mut rng = rng_from_seed(11);
        for (status, mean) in [
            (HealthStatus::Exposed, 1.78 * 2.25),
            (HealthStatus::Hospitalized, 9.0 * 0.9),
        ] {
            let n = 100_000;
            let sum: f64 = (0..n)
                .map(|_| sample_duration(status, &params, &mut rng).unwrap())
                .sum();
            let empirical = sum / n as f64;
            assert!(
                (empirical - mean).abs() < 0.05,
                "{}: {empirical} vs {mean}",
                status.label()
            );
        }
    }

    #[test]
    fn duration_rejects_untimed_status() {
        let params = ModelParams::default();
        let mut rng = rng_from_seed(12);
        assert!(sample_duration(HealthStatus::Susceptible, &params, &mut rng).is_err());
        assert!(sample_duration(HealthStatus::Deceased, &params, &mut rng).is_err());
    }

    #[test]
    fn zero_lambda_means_zero_contacts() {
        let mut params = ModelParams::default();
        params.lambda = vec![0.0];
        let mut rng = rng_from_seed(13);
        for _ in 0..64 {
            assert_eq!(sample_num_contacts(&params, 0, &mut rng), 0);
        }
    }

    #[test]
    fn poisson_contact_mean() {
        let params = ModelParams::default(); // lambda 0.5
        let mut rng = rng_from_seed(14);
        let n = 1_000_000u32;
        let total: u64 = (0..n)
            .map(|_| sample_num_contacts(&params, 0, &mut rng) as u64)
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn geometric_contact_mean_matches_support_convention() {
        // Support {0,1,2,...}: mean = (1-p)/p, checked against a truncated
        // brute-force expectation sum.
        let p = 0.5;
        let brute: f64 = (0..200)
            .map(|k| k as f64 * p * (1.0 - p).powi(k))
            .sum();
        assert!((brute - (1.0 - p) / p).abs() < 1e-12);
        let mut params = ModelParams::default();
        params.contact_distribution = ContactDistribution::Geometric { p };
        let mut rng = rng_from_seed(15);
        let n = 1_000_000u32;
        let total: u64 = (0..n)
            .map(|_| sample_num_contacts(&params, 0, &mut rng) as u64)
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - brute).abs() < 0.01, "mean {mean} vs {brute}");
    }

    #[test]
    fn no_infectious_agents_no_status_changes() {
        let mut params = ModelParams::default();
        params.lambda = vec![2.0];
        let mut rng = rng_from_seed(16);
        let mut pop =
            init_population(200, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
        let before = counts(&pop);
        step_day(&mut pop, &params, &mut rng);
        assert_eq!(counts(&pop), before);
        assert!(pop.agents().iter().all(|a| a.days_in_status == 1));
    }

    #[test]
    fn forced_severe_branch() {
        let mut params = ModelParams::default();
        params.q_severe = 1.0;
        let mut rng = rng_from_seed(17);
        let mut pop = init_population(4, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
        seed_infections(&mut pop, &[1], &params, &mut rng).unwrap();
        let id = pop
            .agents()
            .iter()
            .position(|a| a.status == HealthStatus::Exposed)
            .unwrap();
        pop.agents_mut()[id].remaining_days = 1.0;
        step_day(&mut pop, &params, &mut rng);
        assert_eq!(pop.agents()[id].status, HealthStatus::InfectedSevere);
        assert!(pop.agents()[id].remaining_days > 0.0);
        assert_eq!(pop.agents()[id].days_in_status, 0);
    }

    #[test]
    fn beta_zero_keeps_susceptible_count() {
        let mut params = ModelParams::default();
        params.beta_domestic = 0.0;
        params.beta_casual = 0.0;
        params.lambda = vec![3.0];
        let mut rng = rng_from_seed(18);
        let mut pop =
            init_population(300, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
        seed_infections(&mut pop, &[30], &params, &mut rng).unwrap();
        let s0 = counts(&pop)[HealthStatus::Susceptible.index()];
        for _ in 0..40 {
            step_day(&mut pop, &params, &mut rng);
            assert_eq!(counts(&pop)[HealthStatus::Susceptible.index()], s0);
        }
    }

    #[test]
    fn conservation_monotonicity_and_flow_legality() {
        let arcs: &[(HealthStatus, HealthStatus)] = &[
            (HealthStatus::Susceptible, HealthStatus::Exposed),
            (HealthStatus::Exposed, HealthStatus::InfectedMild),
            (HealthStatus::Exposed, HealthStatus::InfectedSevere),
            (HealthStatus::Exposed, HealthStatus::InfectedAsymptomatic),
            (HealthStatus::InfectedMild, HealthStatus::Recovered),
            (HealthStatus::InfectedSevere, HealthStatus::Hospitalized),
            (
                HealthStatus::InfectedAsymptomatic,
                HealthStatus::RecoveredAsymptomatic,
            ),
            (HealthStatus::Hospitalized, HealthStatus::Recovered),
            (HealthStatus::Hospitalized, HealthStatus::Deceased),
        ];
        let mut params = ModelParams::default();
        params.lambda = vec![1.0];
        params.q_asymptomatic = 0.4;
        params.contact_matrix = ContactMatrix::from_rows(&[
            vec![0.7, 0.3],
            vec![0.3, 0.7],
        ])
        .unwrap();
        let mut rng = rng_from_seed(19);
        let mut pop = init_population(500, 2, &[0.2; 5], &[0.5, 0.5], true, &mut rng).unwrap();
        seed_infections(&mut pop, &[10, 10], &params, &mut rng).unwrap();

        let mut prev = pop.clone();
        for _ in 0..60 {
            step_day(&mut pop, &params, &mut rng);
            assert_eq!(pop.n_agents(), prev.n_agents());
            // Per-location conservation.
            for loc in 0..2 {
                let n: usize = pop
                    .agents()
                    .iter()
                    .filter(|a| a.location as usize == loc)
                    .count();
                assert_eq!(n as u32, pop.location_sizes()[loc]);
            }
            let (c_prev, c_now) = (counts(&prev), counts(&pop));
            assert!(c_now[HealthStatus::Deceased.index()] >= c_prev[HealthStatus::Deceased.index()]);
            let recov_prev = c_prev[HealthStatus::Recovered.index()]
                + c_prev[HealthStatus::RecoveredAsymptomatic.index()];
            let recov_now = c_now[HealthStatus::Recovered.index()]
                + c_now[HealthStatus::RecoveredAsymptomatic.index()];
            assert!(recov_now >= recov_prev);
            for (a, b) in prev.agents().iter().zip(pop.agents()) {
                if a.status != b.status {
                    assert!(
                        arcs.contains(&(a.status, b.status)),
                        "illegal transition {:?} -> {:?}",
                        a.status,
                        b.status
                    );
                }
            }
            prev = pop.clone();
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut params = ModelParams::default();
        params.lambda = vec![0.8];
        let run = |seed: u64| {
            let mut rng = rng_from_seed(seed);
            let mut pop =
                init_population(400, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
            seed_infections(&mut pop, &[8], &params, &mut rng).unwrap();
            for _ in 0..30 {
                step_day(&mut pop, &params, &mut rng);
            }
            pop
        };
        assert_eq!(run(99), run(99));
    }

    #[test]
    fn expected_new_exposures_match_analytic_oracle() {
        // Ten agents in singleton houses, one location, one mild infected,
        // beta = 1, all contacts casual. A susceptible agent ends the day
        // exposed iff it shares at least one contact with the infectious
        // agent in either direction. Initiated contacts hit the infectious
        // agent with probability q_C/9 each, so
        //   P(exposed) = 1 - exp(-lambda q_C / 9)^2
        // and E[new E] = 9 (1 - exp(-2 lambda q_C / 9)).
        let lambda = 3.0f64;
        let q_c = 1.0;
        let expected = 9.0 * (1.0 - (-2.0 * lambda * q_c / 9.0).exp());

        let mut params = ModelParams::default();
        params.lambda = vec![lambda];
        params.q_casual = q_c;
        params.beta_casual = 1.0;
        params.beta_domestic = 1.0;

        let mut rng = rng_from_seed(20);
        let mut base = init_population(
            10,
            1,
            &[1.0, 0.0, 0.0, 0.0, 0.0],
            &[1.0],
            false,
            &mut rng,
        )
        .unwrap();
        base.set_status(0, HealthStatus::InfectedMild);
        base.agents_mut()[0].remaining_days = 1000.0;

        let reps = 4000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for rep in 0..reps {
            let mut pop = base.clone();
            let mut step_rng = rng_from_seed(10_000 + rep);
            step_day(&mut pop, &params, &mut step_rng);
            let new_e = pop
                .agents()
                .iter()
                .filter(|a| a.status == HealthStatus::Exposed)
                .count() as f64;
            sum += new_e;
            sumsq += new_e * new_e;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - expected).abs() < 4.0 * se + 1e-9,
            "mean {mean}, expected {expected}, se {se}"
        );
    }

    #[test]
    fn residence_times_pass_moment_check_along_trajectories() {
        // beta = 0 so adjustments and re-infections never interfere; every
        // (agent, status) episode is entered at most once, and at entry
        // days_in_status + remaining_days equals the Gamma draw.
        let mut params = ModelParams::default();
        params.beta_casual = 0.0;
        params.beta_domestic = 0.0;
        params.q_severe = 0.3;
        let mut rng = rng_from_seed(21);
        let mut pop = init_population(4_000, 1, &[0.2; 5], &[1.0], false, &mut rng).unwrap();
        seed_infections(&mut pop, &[4_000], &params, &mut rng).unwrap();

        let mut draws: std::collections::HashMap<(u32, usize), f64> =
            std::collections::HashMap::new();
        let scan = |pop: &AgentPopulation, draws: &mut std::collections::HashMap<_, _>| {
            for (id, a) in pop.agents().iter().enumerate() {
                if a.status.has_duration() {
                    draws
                        .entry((id as u32, a.status.index()))
                        .or_insert(a.days_in_status as f64 + a.remaining_days);
                }
            }
        };
        scan(&pop, &mut draws);
        for _ in 0..80 {
            step_day(&mut pop, &params, &mut rng);
            scan(&pop, &mut draws);
        }
        for status in [
            HealthStatus::Exposed,
            HealthStatus::InfectedMild,
            HealthStatus::InfectedSevere,
            HealthStatus::Hospitalized,
        ] {
            let vals: Vec<f64> = draws
                .iter()
                .filter(|((_, s), _)| *s == status.index())
                .map(|(_, v)| *v)
                .collect();
            assert!(vals.len() > 200, "{}: {}", status.label(), vals.len());
            let g = params.residence.for_status(status).unwrap();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let se = g.variance().sqrt() / (vals.len() as f64).sqrt();
            assert!(
                (mean - g.mean()).abs() < 3.0 * se,
                "{}: mean {mean} vs {} (se {se})",
                status.label(),
                g.mean()
            );
        }
    }
}
