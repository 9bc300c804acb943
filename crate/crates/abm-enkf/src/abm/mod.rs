//! Stochastic daily-step SEIHRD agent-based model with household and
//! neighbourhood structure, plus an optional asymptomatic branch.

mod init;
mod step;

pub use init::{init_population, seed_infections};
pub use step::{sample_duration, sample_num_contacts, step_day};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epidemiological status of one agent.
///
/// The progression arcs are S→E, E→{I_M, I_S, I_A}, I_M→R, I_A→R_A, I_S→H,
/// H→{R, D}. `InfectedAsymptomatic` and `RecoveredAsymptomatic` exist only
/// when the asymptomatic extension is enabled on the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HealthStatus {
    Susceptible,
    Exposed,
    InfectedMild,
    InfectedSevere,
    Hospitalized,
    Recovered,
    Deceased,
    InfectedAsymptomatic,
    RecoveredAsymptomatic,
}

/// Fixed status ordering used by macro-state vectors and file schemas.
const STATUS_ORDER: [HealthStatus; 9] = [
    HealthStatus::Susceptible,
    HealthStatus::Exposed,
    HealthStatus::InfectedMild,
    HealthStatus::InfectedSevere,
    HealthStatus::Hospitalized,
    HealthStatus::Recovered,
    HealthStatus::Deceased,
    HealthStatus::InfectedAsymptomatic,
    HealthStatus::RecoveredAsymptomatic,
];

impl HealthStatus {
    /// Position in the macro-state layout (S,E,I_M,I_S,H,R,D,I_A,R_A).
    pub fn index(self) -> usize {
        match self {
            HealthStatus::Susceptible => 0,
            HealthStatus::Exposed => 1,
            HealthStatus::InfectedMild => 2,
            HealthStatus::InfectedSevere => 3,
            HealthStatus::Hospitalized => 4,
            HealthStatus::Recovered => 5,
            HealthStatus::Deceased => 6,
            HealthStatus::InfectedAsymptomatic => 7,
            HealthStatus::RecoveredAsymptomatic => 8,
        }
    }

    pub fn from_index(idx: usize) -> Option<HealthStatus> {
        STATUS_ORDER.get(idx).copied()
    }

    /// The statuses present in a model with or without the asymptomatic branch.
    pub fn all(asymptomatic: bool) -> &'static [HealthStatus] {
        if asymptomatic {
            &STATUS_ORDER
        } else {
            &STATUS_ORDER[..7]
        }
    }

    /// An agent in this status can transmit the disease.
    pub fn is_infectious(self) -> bool {
        matches!(
            self,
            HealthStatus::InfectedMild
                | HealthStatus::InfectedSevere
                | HealthStatus::InfectedAsymptomatic
        )
    }

    /// Statuses with a Gamma-distributed residence time.
    pub fn has_duration(self) -> bool {
        matches!(
            self,
            HealthStatus::Exposed
                | HealthStatus::InfectedMild
                | HealthStatus::InfectedSevere
                | HealthStatus::Hospitalized
                | HealthStatus::InfectedAsymptomatic
        )
    }

    /// Short label used in CSV output and population snapshots.
    pub fn label(self) -> &'static str {
        match self {
            HealthStatus::Susceptible => "S",
            HealthStatus::Exposed => "E",
            HealthStatus::InfectedMild => "I_M",
            HealthStatus::InfectedSevere => "I_S",
            HealthStatus::Hospitalized => "H",
            HealthStatus::Recovered => "R",
            HealthStatus::Deceased => "D",
            HealthStatus::InfectedAsymptomatic => "I_A",
            HealthStatus::RecoveredAsymptomatic => "R_A",
        }
    }

    /// Single-character code for compact population snapshots.
    pub fn code(self) -> char {
        match self {
            HealthStatus::Susceptible => 'S',
            HealthStatus::Exposed => 'E',
            HealthStatus::InfectedMild => 'M',
            HealthStatus::InfectedSevere => 'V',
            HealthStatus::Hospitalized => 'H',
            HealthStatus::Recovered => 'R',
            HealthStatus::Deceased => 'D',
            HealthStatus::InfectedAsymptomatic => 'A',
            HealthStatus::RecoveredAsymptomatic => 'B',
        }
    }

    pub fn from_code(c: char) -> Option<HealthStatus> {
        STATUS_ORDER.iter().copied().find(|s| s.code() == c)
    }

    pub fn from_label(label: &str) -> Option<HealthStatus> {
        STATUS_ORDER.iter().copied().find(|s| s.label() == label)
    }
}

/// One individual: the micro-state unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub status: HealthStatus,
    pub house_id: u32,
    pub location: u32,
    /// Remaining residence time in days; meaningful only for timed statuses.
    pub remaining_days: f64,
    /// Days spent in the current status.
    pub days_in_status: u32,
    /// Contacts with infectious agents while susceptible.
    pub risky_contacts: u32,
}

/// A household; the agent ids living in it never change.
#[derive(Debug, Clone, PartialEq)]
pub struct House {
    pub location: u32,
    pub members: Vec<u32>,
}

/// Full micro-state: all agents plus the household structure.
///
/// The agent count is constant over evolution (deceased agents stay in the
/// collection) and every agent belongs to exactly one house. Populations are
/// independent values, safe to move between threads; each caller owns the RNG
/// stream used to evolve its population.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation {
    agents: Vec<Agent>,
    houses: Vec<House>,
    n_locations: usize,
    asymptomatic: bool,
    location_sizes: Vec<u32>,
}

impl AgentPopulation {
    pub(crate) fn from_parts(
        agents: Vec<Agent>,
        houses: Vec<House>,
        n_locations: usize,
        asymptomatic: bool,
    ) -> Self {
        let mut location_sizes = vec![0u32; n_locations];
        for agent in &agents {
            location_sizes[agent.location as usize] += 1;
        }
        AgentPopulation {
            agents,
            houses,
            n_locations,
            asymptomatic,
            location_sizes,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn asymptomatic_enabled(&self) -> bool {
        self.asymptomatic
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub(crate) fn agents_mut(&mut self) -> &mut [Agent] {
        &mut self.agents
    }

    pub fn houses(&self) -> &[House] {
        &self.houses
    }

    /// Number of agents living in each location (constant over evolution).
    pub fn location_sizes(&self) -> &[u32] {
        &self.location_sizes
    }

    /// Statuses present in this model configuration, in macro-state order.
    pub fn statuses(&self) -> &'static [HealthStatus] {
        HealthStatus::all(self.asymptomatic)
    }

    /// Relabel an agent, resetting its status clock. `risky_contacts` is
    /// cleared when the agent re-enters S; callers decide what happens to it
    /// on other transitions.
    pub(crate) fn set_status(&mut self, agent_id: u32, status: HealthStatus) {
        let agent = &mut self.agents[agent_id as usize];
        agent.status = status;
        agent.days_in_status = 0;
        agent.remaining_days = 0.0;
        if status == HealthStatus::Susceptible {
            agent.risky_contacts = 0;
        }
    }
}

/// Shape/scale of the Gamma residence-time distribution for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn mean(self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(self) -> f64 {
        self.shape * self.scale * self.scale
    }
}

/// Residence-time parameters for the timed classes. The asymptomatic class
/// shares the mild-infection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidenceTimes {
    pub exposed: GammaParams,
    pub infected_mild: GammaParams,
    pub infected_severe: GammaParams,
    pub hospitalized: GammaParams,
}

impl ResidenceTimes {
    pub fn for_status(&self, status: HealthStatus) -> Option<GammaParams> {
        match status {
            HealthStatus::Exposed => Some(self.exposed),
            HealthStatus::InfectedMild | HealthStatus::InfectedAsymptomatic => {
                Some(self.infected_mild)
            }
            HealthStatus::InfectedSevere => Some(self.infected_severe),
            HealthStatus::Hospitalized => Some(self.hospitalized),
            _ => None,
        }
    }
}

impl Default for ResidenceTimes {
    fn default() -> Self {
        ResidenceTimes {
            exposed: GammaParams {
                shape: 1.78,
                scale: 2.25,
            },
            infected_mild: GammaParams {
                shape: 7.11,
                scale: 1.13,
            },
            infected_severe: GammaParams {
                shape: 4.0,
                scale: 1.0,
            },
            hospitalized: GammaParams {
                shape: 9.0,
                scale: 0.9,
            },
        }
    }
}

/// Distribution of the number of daily contacts per agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContactDistribution {
    Poisson,
    /// Geometric on support {0, 1, 2, ...}; mean (1-p)/p.
    Geometric { p: f64 },
}

/// Column-stochastic contact matrix: entry (i, j) is the probability that a
/// casual contact initiated from location j lands in location i.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMatrix {
    /// columns[j][i] = C_{ij}
    columns: Vec<Vec<f64>>,
}

impl ContactMatrix {
    /// Build from row-major entries (`rows[i][j] = C_{ij}`), validating that
    /// the matrix is square with non-negative entries and unit column sums.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Config("contact matrix must be non-empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "contact matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let mut columns = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                let v = rows[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!(
                        "contact matrix entry ({i},{j}) = {v} outside [0,1]"
                    )));
                }
                columns[j][i] = v;
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "contact matrix column {j} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ContactMatrix { columns })
    }

    /// n-location matrix where every contact stays in its own location.
    pub fn identity(n: usize) -> Self {
        let columns = (0..n)
            .map(|j| {
                let mut col = vec![0.0; n];
                col[j] = 1.0;
                col
            })
            .collect();
        ContactMatrix { columns }
    }

    pub fn n_locations(&self) -> usize {
        self.columns.len()
    }

    /// C_{ij}: probability a contact from j targets i.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let n = self.n_locations();
        (0..n)
            .map(|i| (0..n).map(|j| self.columns[j][i]).collect())
            .collect()
    }

    /// Sample a target location for a contact initiated from `from`.
    pub fn sample_target(&self, from: usize, rng: &mut impl rand::Rng) -> usize {
        let col = &self.columns[from];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in col.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        col.len() - 1
    }
}

/// All model parameters for the SEIHRD dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Mean daily contacts; length 1 (shared) or one entry per location.
    pub lambda: Vec<f64>,
    pub beta_domestic: f64,
    pub beta_casual: f64,
    /// P(die | hospitalized).
    pub q_death: f64,
    /// P(severe | leaving E).
    pub q_severe: f64,
    /// P(contact is casual).
    pub q_casual: f64,
    /// P(asymptomatic | leaving E, not severe); 0 when the extension is off.
    pub q_asymptomatic: f64,
    pub residence: ResidenceTimes,
    pub contact_matrix: ContactMatrix,
    /// Probability of a house having 1..=5 members.
    pub p_house: [f64; 5],
    pub contact_distribution: ContactDistribution,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            lambda: vec![0.5],
            beta_domestic: 0.8,
            beta_casual: 0.16,
            q_death: 0.4,
            q_severe: 0.1,
            q_casual: 0.5,
            q_asymptomatic: 0.0,
            residence: ResidenceTimes::default(),
            contact_matrix: ContactMatrix::identity(1),
            p_house: [0.36, 0.27, 0.16, 0.13, 0.08],
            contact_distribution: ContactDistribution::Poisson,
        }
    }
}

impl ModelParams {
    /// Mean daily contacts for agents living at `location`.
    pub fn lambda_at(&self, location: usize) -> f64 {
        if self.lambda.len() == 1 {
            self.lambda[0]
        } else {
            self.lambda[location]
        }
    }

    /// Replace the shared contact rate (used by parameter estimation).
    pub fn set_lambda_scalar(&mut self, value: f64) {
        self.lambda = vec![value];
    }

    pub fn validate(&self, n_locations: usize) -> Result<()> {
        if self.lambda.len() != 1 && self.lambda.len() != n_locations {
            return Err(Error::Config(format!(
                "lambda must have length 1 or {n_locations}, got {}",
                self.lambda.len()
            )));
        }
        for (name, v) in [
            ("beta_domestic", self.beta_domestic),
            ("beta_casual", self.beta_casual),
            ("q_death", self.q_death),
            ("q_severe", self.q_severe),
            ("q_casual", self.q_casual),
            ("q_asymptomatic", self.q_asymptomatic),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0,1]")));
            }
        }
        for v in &self.lambda {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Config(format!("lambda = {v} must be >= 0")));
            }
        }
        for status in [
            HealthStatus::Exposed,
            HealthStatus::InfectedMild,
            HealthStatus::InfectedSevere,
            HealthStatus::Hospitalized,
        ] {
            let g = self.residence.for_status(status).unwrap();
            if g.shape <= 0.0 || g.scale <= 0.0 {
                return Err(Error::Config(format!(
                    "gamma parameters for {} must be positive (shape {}, scale {})",
                    status.label(),
                    g.shape,
                    g.scale
                )));
            }
        }
        let p_sum: f64 = self.p_house.iter().sum();
        if (p_sum - 1.0).abs() > 1e-6 || self.p_house.iter().any(|p| *p < 0.0) {
            return Err(Error::Config(format!(
                "p_house must be a probability vector, got {:?}",
                self.p_house
            )));
        }
        if self.contact_matrix.n_locations() != n_locations {
            return Err(Error::Config(format!(
                "contact matrix is {}x{0}, expected {n_locations}x{n_locations}",
                self.contact_matrix.n_locations()
            )));
        }
        if let ContactDistribution::Geometric { p } = self.contact_distribution {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!(
                    "geometric contact parameter p = {p} outside (0,1]"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_index_roundtrip() {
        for (i, s) in STATUS_ORDER.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(HealthStatus::from_index(i), Some(*s));
            assert_eq!(HealthStatus::from_code(s.code()), Some(*s));
            assert_eq!(HealthStatus::from_label(s.label()), Some(*s));
        }
        assert_eq!(HealthStatus::all(false).len(), 7);
        assert_eq!(HealthStatus::all(true).len(), 9);
    }

    #[test]
    fn contact_matrix_rejects_bad_columns() {
        assert!(ContactMatrix::from_rows(&[vec![0.5, 0.0], vec![0.4, 1.0]]).is_err());
        let ok = ContactMatrix::from_rows(&[vec![0.6, 0.3], vec![0.4, 0.7]]).unwrap();
        assert_eq!(ok.entry(1, 0), 0.4);
        assert_eq!(ok.to_rows(), vec![vec![0.6, 0.3], vec![0.4, 0.7]]);
    }

    #[test]
    fn contact_matrix_sampling_respects_column() {
        let m = ContactMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut rng = crate::rng::rng_from_seed(3);
        for _ in 0..32 {
            assert_eq!(m.sample_target(0, &mut rng), 1);
            assert_eq!(m.sample_target(1, &mut rng), 0);
        }
    }

    #[test]
    fn default_params_are_valid() {
        ModelParams::default().validate(1).unwrap();
    }

    #[test]
    fn validate_catches_out_of_range() {
        let mut p = ModelParams::default();
        p.q_severe = 1.5;
        assert!(p.validate(1).is_err());
    }
}
