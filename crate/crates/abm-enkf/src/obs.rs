//! Observation operators, observation-error models, synthetic observation
//! generation, and the randomized-testing positivity simulator.
//!
//! Observed variables are per-location cumulative confirmed cases (the sum of
//! I_M, I_S, H, R and D; asymptomatic classes are invisible to it), the
//! per-location cumulative deaths, and optionally a global positivity: the
//! fraction of randomly tested agents that are currently infectious.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::abm::{AgentPopulation, HealthStatus};
use crate::enkf::StateLayout;
use crate::error::{Error, Result};
use crate::macromap::CompartmentCounts;
use crate::rng::SimRng;

/// Statuses counted as "confirmed" by the reporting stream.
pub const CONFIRMED_STATUSES: [HealthStatus; 5] = [
    HealthStatus::InfectedMild,
    HealthStatus::InfectedSevere,
    HealthStatus::Hospitalized,
    HealthStatus::Recovered,
    HealthStatus::Deceased,
];

/// Statuses that test positive in randomized testing.
pub const TEST_POSITIVE_STATUSES: [HealthStatus; 4] = [
    HealthStatus::InfectedMild,
    HealthStatus::InfectedSevere,
    HealthStatus::InfectedAsymptomatic,
    HealthStatus::Hospitalized,
];

/// What one entry of an observation vector measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsKind {
    /// Cumulative confirmed cases at one location.
    Confirmed { location: usize },
    /// Cumulative deaths at one location.
    Deaths { location: usize },
    /// Fraction of the whole population currently infectious.
    Positivity,
}

/// Error model for one observation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSpec {
    /// Variance of a confirmed-count entry is `kappa_confirmed * value`.
    pub kappa_confirmed: f64,
    /// Variance of a deaths entry is `kappa_deaths * value`.
    pub kappa_deaths: f64,
    /// Variance floor for count entries, in agents squared.
    pub count_floor: f64,
    /// Number of agents tested per day, for the positivity sampling variance.
    pub positivity_tested: usize,
    /// Variance floor for the positivity entry.
    pub positivity_floor: f64,
}

impl ErrorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_confirmed <= 0.0 || self.kappa_deaths <= 0.0 {
            return Err(Error::Config(
                "observation error coefficients must be positive".into(),
            ));
        }
        if self.count_floor <= 0.0 || self.positivity_floor <= 0.0 {
            return Err(Error::Config("variance floors must be positive".into()));
        }
        Ok(())
    }
}

/// One day's observation vector together with its error model.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub day: u32,
    pub values: Vec<f64>,
    pub kinds: Vec<ObsKind>,
    pub error: ErrorSpec,
}

/// The observation kinds for a standard confirmed+deaths (+positivity) setup,
/// in the row order used by [`obs_matrix`].
pub fn obs_kinds(n_locations: usize, include_positivity: bool) -> Vec<ObsKind> {
    let mut kinds = Vec::with_capacity(2 * n_locations + usize::from(include_positivity));
    for location in 0..n_locations {
        kinds.push(ObsKind::Confirmed { location });
    }
    for location in 0..n_locations {
        kinds.push(ObsKind::Deaths { location });
    }
    if include_positivity {
        kinds.push(ObsKind::Positivity);
    }
    kinds
}

/// Linear observation matrix mapping an augmented state vector to the given
/// observation kinds. Augmented-parameter columns are zero.
pub fn obs_matrix(layout: &StateLayout, kinds: &[ObsKind], n_agents: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(kinds.len(), layout.dim());
    for (row, kind) in kinds.iter().enumerate() {
        match kind {
            ObsKind::Confirmed { location } => {
                for status in CONFIRMED_STATUSES {
                    h[(row, layout.count_index(*location, status))] = 1.0;
                }
            }
            ObsKind::Deaths { location } => {
                h[(row, layout.count_index(*location, HealthStatus::Deceased))] = 1.0;
            }
            ObsKind::Positivity => {
                for loc in 0..layout.n_locations() {
                    for status in TEST_POSITIVE_STATUSES {
                        if !layout.asymptomatic() && status == HealthStatus::InfectedAsymptomatic
                        {
                            continue;
                        }
                        h[(row, layout.count_index(loc, status))] = 1.0 / n_agents as f64;
                    }
                }
            }
        }
    }
    h
}

/// The noiseless value of one observation kind on a count matrix.
pub fn eval_kind(kind: ObsKind, counts: &CompartmentCounts, n_agents: usize) -> f64 {
    match kind {
        ObsKind::Confirmed { location } => CONFIRMED_STATUSES
            .iter()
            .map(|s| counts.get(location, *s))
            .sum(),
        ObsKind::Deaths { location } => counts.get(location, HealthStatus::Deceased),
        ObsKind::Positivity => {
            let infectious: f64 = TEST_POSITIVE_STATUSES
                .iter()
                .filter(|s| counts.asymptomatic() || **s != HealthStatus::InfectedAsymptomatic)
                .map(|s| counts.total(*s))
                .sum();
            infectious / n_agents as f64
        }
    }
}

/// Diagonal observation-error covariance: variances proportional to the
/// observed counts, floored to keep the filter well posed; positivity entries
/// carry the binomial sampling variance p(1-p)/n_tested.
pub fn error_covariance(values: &[f64], kinds: &[ObsKind], spec: &ErrorSpec) -> DVector<f64> {
    assert_eq!(values.len(), kinds.len());
    DVector::from_iterator(
        values.len(),
        values.iter().zip(kinds).map(|(&y, kind)| match kind {
            ObsKind::Confirmed { .. } => (spec.kappa_confirmed * y).max(spec.count_floor),
            ObsKind::Deaths { .. } => (spec.kappa_deaths * y).max(spec.count_floor),
            ObsKind::Positivity => {
                let p = y.clamp(0.0, 1.0);
                (p * (1.0 - p) / spec.positivity_tested.max(1) as f64).max(spec.positivity_floor)
            }
        }),
    )
}

/// Generate a noisy observation series from a truth-run count series.
///
/// Each entry gets independent zero-mean Gaussian noise with the variance the
/// error model assigns to the noiseless value; negative draws are clamped to
/// zero.
pub fn synthesize_observations(
    truth: &[CompartmentCounts],
    kinds: &[ObsKind],
    n_agents: usize,
    spec: &ErrorSpec,
    rng: &mut SimRng,
) -> Vec<ObservationBatch> {
    truth
        .iter()
        .enumerate()
        .map(|(day, counts)| {
            let clean: Vec<f64> = kinds
                .iter()
                .map(|k| eval_kind(*k, counts, n_agents))
                .collect();
            let variances = error_covariance(&clean, kinds, spec);
            let values = clean
                .iter()
                .zip(variances.iter())
                .map(|(&v, &var)| {
                    let noise = Normal::new(0.0, var.sqrt()).expect("var >= 0").sample(rng);
                    (v + noise).max(0.0)
                })
                .collect();
            ObservationBatch {
                day: day as u32,
                values,
                kinds: kinds.to_vec(),
                error: *spec,
            }
        })
        .collect()
}

/// Test a uniform random sample of the population (without replacement).
/// Returns (positives, tested).
pub fn simulate_random_testing(
    pop: &AgentPopulation,
    fraction: f64,
    rng: &mut SimRng,
) -> Result<(u32, u32)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "testing fraction {fraction} outside (0,1]"
        )));
    }
    let tested = (fraction * pop.n_agents() as f64).floor() as usize;
    if tested == 0 {
        return Err(Error::Config(format!(
            "testing fraction {fraction} tests zero of {} agents",
            pop.n_agents()
        )));
    }
    let chosen = rand::seq::index::sample(rng, pop.n_agents(), tested);
    let positives = chosen
        .iter()
        .filter(|&id| {
            let s = pop.agents()[id].status;
            TEST_POSITIVE_STATUSES.contains(&s)
        })
        .count();
    Ok((positives as u32, tested as u32))
}
