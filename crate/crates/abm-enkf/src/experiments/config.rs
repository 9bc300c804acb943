//! Experiment configuration: the structured config file schema, defaults,
//! validation, and resolution into runnable model/filter settings.
//!
//! Unknown keys are rejected; every default is materialized in the config
//! echo written to `run_meta.toml`, so a run's effective settings are always
//! on disk.

use serde::{Deserialize, Serialize};

use crate::abm::{ContactDistribution, ContactMatrix, GammaParams, ModelParams, ResidenceTimes};
use crate::enkf::{AdjustMethod, ParamSpec};
use crate::error::{Error, Result};
use crate::obs::ErrorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    VaryingLambda,
    Microscale,
    Asymptomatic,
    ModelError,
    Realdata,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::VaryingLambda => "varying_lambda",
            Scenario::Microscale => "microscale",
            Scenario::Asymptomatic => "asymptomatic",
            Scenario::ModelError => "model_error",
            Scenario::Realdata => "realdata",
        }
    }
}

/// Adjustment method, with `none` meaning a free-running control ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Randomized,
    Cascade,
    None,
}

impl MethodChoice {
    pub fn as_adjust(self) -> Option<AdjustMethod> {
        match self {
            MethodChoice::Randomized => Some(AdjustMethod::Randomized),
            MethodChoice::Cascade => Some(AdjustMethod::Cascade),
            MethodChoice::None => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MethodChoice::Randomized => "randomized",
            MethodChoice::Cascade => "cascade",
            MethodChoice::None => "none",
        }
    }
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "randomized" => Ok(MethodChoice::Randomized),
            "cascade" => Ok(MethodChoice::Cascade),
            "none" => Ok(MethodChoice::None),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (randomized, cascade, none)"
            ))),
        }
    }
}

/// A scalar or a per-location vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ScalarOrVec::Scalar(v) => vec![*v],
            ScalarOrVec::Vector(v) => v.clone(),
        }
    }
}

fn d_lambda() -> ScalarOrVec {
    ScalarOrVec::Scalar(0.5)
}
fn d_beta_domestic() -> f64 {
    0.8
}
fn d_beta_casual() -> f64 {
    0.16
}
fn d_q_death() -> f64 {
    0.4
}
fn d_q_severe() -> f64 {
    0.1
}
fn d_q_casual() -> f64 {
    0.5
}
fn d_gamma_exposed() -> [f64; 2] {
    [1.78, 2.25]
}
fn d_gamma_infected_mild() -> [f64; 2] {
    [7.11, 1.13]
}
fn d_gamma_infected_severe() -> [f64; 2] {
    [4.0, 1.0]
}
fn d_gamma_hospitalized() -> [f64; 2] {
    [9.0, 0.9]
}
fn d_p_house() -> [f64; 5] {
    [0.36, 0.27, 0.16, 0.13, 0.08]
}

/// Model parameters as written in config files; defaults are the standard
/// parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_lambda")]
    pub lambda: ScalarOrVec,
    #[serde(default = "d_beta_domestic")]
    pub beta_domestic: f64,
    #[serde(default = "d_beta_casual")]
    pub beta_casual: f64,
    #[serde(default = "d_q_death")]
    pub q_death: f64,
    #[serde(default = "d_q_severe")]
    pub q_severe: f64,
    #[serde(default = "d_q_casual")]
    pub q_casual: f64,
    #[serde(default)]
    pub q_asymptomatic: f64,
    /// [shape, scale] of the Gamma residence time in E.
    #[serde(default = "d_gamma_exposed")]
    pub gamma_exposed: [f64; 2],
    #[serde(default = "d_gamma_infected_mild")]
    pub gamma_infected_mild: [f64; 2],
    #[serde(default = "d_gamma_infected_severe")]
    pub gamma_infected_severe: [f64; 2],
    #[serde(default = "d_gamma_hospitalized")]
    pub gamma_hospitalized: [f64; 2],
    #[serde(default = "d_p_house")]
    pub p_house: [f64; 5],
    /// Row-major column-stochastic contact matrix; required when
    /// `n_locations > 1` except in the realdata scenario, where it is built
    /// from census populations.
    #[serde(default)]
    pub contact_matrix: Option<Vec<Vec<f64>>>,
    /// Enable the asymptomatic branch (I_A, R_A).
    #[serde(default)]
    pub asymptomatic: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty model config parses")
    }
}

impl ModelConfig {
    pub fn to_model_params(
        &self,
        n_locations: usize,
        contact_matrix: ContactMatrix,
    ) -> Result<ModelParams> {
        let params = ModelParams {
            lambda: self.lambda.to_vec(),
            beta_domestic: self.beta_domestic,
            beta_casual: self.beta_casual,
            q_death: self.q_death,
            q_severe: self.q_severe,
            q_casual: self.q_casual,
            q_asymptomatic: self.q_asymptomatic,
            residence: ResidenceTimes {
                exposed: GammaParams {
                    shape: self.gamma_exposed[0],
                    scale: self.gamma_exposed[1],
                },
                infected_mild: GammaParams {
                    shape: self.gamma_infected_mild[0],
                    scale: self.gamma_infected_mild[1],
                },
                infected_severe: GammaParams {
                    shape: self.gamma_infected_severe[0],
                    scale: self.gamma_infected_severe[1],
                },
                hospitalized: GammaParams {
                    shape: self.gamma_hospitalized[0],
                    scale: self.gamma_hospitalized[1],
                },
            },
            contact_matrix,
            p_house: self.p_house,
            contact_distribution: ContactDistribution::Poisson,
        };
        params.validate(n_locations)?;
        Ok(params)
    }
}

/// Truth-run overrides for twin experiments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    #[serde(default)]
    pub lambda_schedule: Option<LambdaSchedule>,
    #[serde(default)]
    pub contact_distribution: Option<ContactDistConfig>,
    #[serde(default)]
    pub p_house: Option<[f64; 5]>,
    #[serde(default)]
    pub q_asymptomatic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant { value: ScalarOrVec },
    /// Linear ramp from `start` on day 0 to `end` on the final day.
    Linear { start: f64, end: f64 },
}

impl LambdaSchedule {
    /// Contact rate vector on `day` of a run lasting `total_days`.
    pub fn value_at(&self, day: usize, total_days: usize) -> Vec<f64> {
        match self {
            LambdaSchedule::Constant { value } => value.to_vec(),
            LambdaSchedule::Linear { start, end } => {
                if day >= total_days {
                    return vec![*end];
                }
                let frac = day as f64 / total_days.max(1) as f64;
                vec![start + (end - start) * frac]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ContactDistConfig {
    Poisson,
    Geometric { p: f64 },
}

impl ContactDistConfig {
    pub fn to_model(self) -> ContactDistribution {
        match self {
            ContactDistConfig::Poisson => ContactDistribution::Poisson,
            ContactDistConfig::Geometric { p } => ContactDistribution::Geometric { p },
        }
    }
}

fn d_kappa_confirmed_coeff() -> f64 {
    1e-5
}
fn d_kappa_deaths_coeff() -> f64 {
    1e-6
}
fn d_count_floor() -> f64 {
    1.0
}
fn d_positivity_floor() -> f64 {
    1e-6
}

/// Observation-error settings. The kappa coefficients scale as
/// `kappa = coeff * n_agents / n_locations`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsConfig {
    #[serde(default = "d_kappa_confirmed_coeff")]
    pub kappa_confirmed_coeff: f64,
    #[serde(default = "d_kappa_deaths_coeff")]
    pub kappa_deaths_coeff: f64,
    #[serde(default = "d_count_floor")]
    pub count_floor: f64,
    #[serde(default = "d_positivity_floor")]
    pub positivity_floor: f64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty obs config parses")
    }
}

impl ObsConfig {
    pub fn kappa_confirmed(&self, n_agents: usize, n_locations: usize) -> f64 {
        self.kappa_confirmed_coeff * n_agents as f64 / n_locations as f64
    }

    pub fn kappa_deaths(&self, n_agents: usize, n_locations: usize) -> f64 {
        self.kappa_deaths_coeff * n_agents as f64 / n_locations as f64
    }

    pub fn to_error_spec(
        &self,
        n_agents: usize,
        n_locations: usize,
        positivity_tested: usize,
    ) -> ErrorSpec {
        ErrorSpec {
            kappa_confirmed: self.kappa_confirmed(n_agents, n_locations),
            kappa_deaths: self.kappa_deaths(n_agents, n_locations),
            count_floor: self.count_floor,
            positivity_tested,
            positivity_floor: self.positivity_floor,
        }
    }
}

/// One augmented parameter as written in config files. Omitted walk/bounds
/// fall back to per-name defaults: lambda walks 0.01/day in [0, 3], q_a walks
/// 0.005/day in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpecConfig {
    pub name: String,
    pub prior: [f64; 2],
    #[serde(default)]
    pub walk_std: Option<f64>,
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
}

impl ParamSpecConfig {
    pub fn resolve(&self) -> Result<ParamSpec> {
        let (default_walk, default_bounds) = match self.name.as_str() {
            "lambda" => (0.01, [0.0, 3.0]),
            "q_a" => (0.005, [0.0, 1.0]),
            other => {
                return Err(Error::Config(format!(
                    "unknown augmented parameter '{other}' (supported: lambda, q_a)"
                )))
            }
        };
        let spec = ParamSpec {
            name: self.name.clone(),
            prior_low: self.prior[0],
            prior_high: self.prior[1],
            walk_std: self.walk_std.unwrap_or(default_walk),
            bounds: self.bounds.unwrap_or(default_bounds),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn d_method() -> MethodChoice {
    MethodChoice::Randomized
}

/// One experiment run, as parsed from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_agents: usize,
    pub n_locations: usize,
    pub ensemble_size: usize,
    pub days: usize,
    /// Evolve the truth (and independently initialized members) this many
    /// days before day 0; observations and diagnostics start afterwards.
    #[serde(default)]
    pub burn_in_days: usize,
    #[serde(default = "d_method")]
    pub method: MethodChoice,
    pub truth_seed: u64,
    pub ensemble_seed: u64,
    /// Initially exposed agents: one entry per location, or a single entry
    /// applied to every location. Empty means no seeding.
    #[serde(default)]
    pub initial_exposed: Vec<u32>,
    /// Population share per location; uniform when omitted.
    #[serde(default)]
    pub location_weights: Option<Vec<f64>>,
    /// Fraction of the population tested daily (asymptomatic scenario).
    #[serde(default)]
    pub testing_fraction: Option<f64>,
    /// Divisor applied to real-data observations (realdata scenario).
    #[serde(default)]
    pub data_scale: Option<f64>,
    /// Store per-day population snapshots (needed for matching metrics).
    #[serde(default)]
    pub store_populations: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub observations: ObsConfig,
    #[serde(default, rename = "param")]
    pub params: Vec<ParamSpecConfig>,
}

/// Everything an experiment needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    /// Model parameters the filter ensemble runs with.
    pub model_params: ModelParams,
    /// Model parameters the truth run uses (twin scenarios only).
    pub truth_params: ModelParams,
    pub lambda_schedule: Option<LambdaSchedule>,
    pub param_specs: Vec<ParamSpec>,
    pub location_weights: Vec<f64>,
    pub initial_exposed: Vec<u32>,
    pub error_spec: ErrorSpec,
    pub method: Option<AdjustMethod>,
    pub include_positivity: bool,
    pub positivity_tested: usize,
}

impl ExperimentConfig {
    /// Validate and resolve the configuration for a twin scenario (or the
    /// model side of the realdata scenario, given a contact matrix).
    pub fn resolve_with_matrix(&self, contact_matrix: ContactMatrix) -> Result<ResolvedExperiment> {
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be positive".into()));
        }
        if self.n_locations == 0 {
            return Err(Error::Config("n_locations must be positive".into()));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("days must be positive".into()));
        }

        let model_params = self.model.to_model_params(self.n_locations, contact_matrix)?;

        let mut truth_params = model_params.clone();
        if let Some(schedule) = &self.truth.lambda_schedule {
            truth_params.lambda = schedule.value_at(0, self.days);
            if truth_params.lambda.len() != 1
                && truth_params.lambda.len() != self.n_locations
            {
                return Err(Error::Config(format!(
                    "truth.lambda_schedule vector has {} entries, expected 1 or {}",
                    truth_params.lambda.len(),
                    self.n_locations
                )));
            }
        }
        if let Some(dist) = self.truth.contact_distribution {
            truth_params.contact_distribution = dist.to_model();
        }
        if let Some(p_house) = self.truth.p_house {
            truth_params.p_house = p_house;
        }
        if let Some(q_a) = self.truth.q_asymptomatic {
            truth_params.q_asymptomatic = q_a;
        }
        truth_params.validate(self.n_locations)?;

        let location_weights = match &self.location_weights {
            Some(w) => {
                if w.len() != self.n_locations {
                    return Err(Error::Config(format!(
                        "location_weights has {} entries, expected {}",
                        w.len(),
                        self.n_locations
                    )));
                }
                w.clone()
            }
            None => vec![1.0 / self.n_locations as f64; self.n_locations],
        };

        let initial_exposed = match self.initial_exposed.len() {
            0 => vec![0; self.n_locations],
            1 => vec![self.initial_exposed[0]; self.n_locations],
            n if n == self.n_locations => self.initial_exposed.clone(),
            n => {
                return Err(Error::Config(format!(
                    "initial_exposed has {n} entries, expected 1 or {}",
                    self.n_locations
                )))
            }
        };

        let param_specs: Vec<ParamSpec> = self
            .params
            .iter()
            .map(|p| p.resolve())
            .collect::<Result<_>>()?;

        let include_positivity = self.scenario == Scenario::Asymptomatic;
        if include_positivity {
            if !self.model.asymptomatic {
                return Err(Error::Config(
                    "asymptomatic scenario requires model.asymptomatic = true".into(),
                ));
            }
            if self.testing_fraction.is_none() {
                return Err(Error::Config(
                    "asymptomatic scenario requires testing_fraction".into(),
                ));
            }
            if self.truth.q_asymptomatic.is_none() {
                return Err(Error::Config(
                    "asymptomatic scenario requires truth.q_asymptomatic".into(),
                ));
            }
        }
        if let Some(f) = self.testing_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "testing_fraction = {f} outside (0,1]"
                )));
            }
        }
        if self.scenario == Scenario::Realdata {
            match self.data_scale {
                None => {
                    return Err(Error::Config(
                        "realdata scenario requires data_scale".into(),
                    ))
                }
                Some(s) if s <= 0.0 => {
                    return Err(Error::Config(format!("data_scale = {s} must be positive")))
                }
                _ => {}
            }
        }

        let positivity_tested = self
            .testing_fraction
            .map(|f| (f * self.n_agents as f64).floor() as usize)
            .unwrap_or(0);
        if include_positivity && positivity_tested == 0 {
            return Err(Error::Config(
                "testing_fraction tests zero agents at this population size".into(),
            ));
        }

        let error_spec =
            self.observations
                .to_error_spec(self.n_agents, self.n_locations, positivity_tested);
        error_spec.validate()?;

        Ok(ResolvedExperiment {
            config: self.clone(),
            model_params,
            truth_params,
            lambda_schedule: self.truth.lambda_schedule.clone(),
            param_specs,
            location_weights,
            initial_exposed,
            error_spec,
            method: self.method.as_adjust(),
            include_positivity,
            positivity_tested,
        })
    }

    /// Resolve for twin scenarios, deriving the contact matrix from config.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let matrix = match &self.model.contact_matrix {
            Some(rows) => ContactMatrix::from_rows(rows)?,
            None if self.n_locations == 1 => ContactMatrix::identity(1),
            None if self.scenario == Scenario::Realdata => {
                return Err(Error::Config(
                    "realdata scenario resolves its contact matrix from census data; \
                     use resolve_with_matrix"
                        .into(),
                ))
            }
            None => {
                return Err(Error::Config(format!(
                    "model.contact_matrix is required with n_locations = {}",
                    self.n_locations
                )))
            }
        };
        self.resolve_with_matrix(matrix)
    }
}

impl ResolvedExperiment {
    /// Truth-run contact rates on a given day.
    pub fn truth_lambda_at(&self, day: usize) -> Vec<f64> {
        match &self.lambda_schedule {
            Some(s) => s.value_at(day, self.config.days),
            None => self.truth_params.lambda.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model_config_is_default_parameterization() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.lambda, ScalarOrVec::Scalar(0.5));
        assert_eq!(cfg.beta_domestic, 0.8);
        assert_eq!(cfg.beta_casual, 0.16);
        assert_eq!(cfg.q_death, 0.4);
        assert_eq!(cfg.q_severe, 0.1);
        assert_eq!(cfg.q_casual, 0.5);
        assert_eq!(cfg.gamma_exposed, [1.78, 2.25]);
        assert_eq!(cfg.gamma_infected_mild, [7.11, 1.13]);
        assert_eq!(cfg.gamma_infected_severe, [4.0, 1.0]);
        assert_eq!(cfg.gamma_hospitalized, [9.0, 0.9]);
        assert_eq!(cfg.p_house, [0.36, 0.27, 0.16, 0.13, 0.08]);
        let params = cfg.to_model_params(1, ContactMatrix::identity(1)).unwrap();
        assert_eq!(params, {
            let mut p = ModelParams::default();
            p.contact_matrix = ContactMatrix::identity(1);
            p
        });
    }

    fn minimal_toml() -> &'static str {
        r#"
scenario = "varying_lambda"
n_agents = 1000
n_locations = 1
ensemble_size = 10
days = 30
truth_seed = 1
ensemble_seed = 2
initial_exposed = [5]
"#
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.model_params.lambda, vec![0.5]);
        assert_eq!(resolved.location_weights, vec![1.0]);
        assert_eq!(resolved.initial_exposed, vec![5]);
        assert!((resolved.error_spec.kappa_confirmed - 1e-5 * 1000.0).abs() < 1e-12);
        assert_eq!(resolved.method, Some(AdjustMethod::Randomized));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{}\nnot_a_key = 3\n", minimal_toml());
        assert!(toml::from_str::<ExperimentConfig>(&bad).is_err());
        let bad = minimal_toml().replace(
            "initial_exposed = [5]",
            "initial_exposed = [5]\n[model]\nbeta_x = 0.1",
        );
        assert!(toml::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn out_of_range_value_names_the_key() {
        let bad = minimal_toml().replace(
            "initial_exposed = [5]",
            "initial_exposed = [5]\n[model]\nq_severe = 1.5",
        );
        let cfg: ExperimentConfig = toml::from_str(&bad).unwrap();
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("q_severe") && err.contains("[0,1]"), "{err}");
    }

    #[test]
    fn wrong_length_lambda_vector_is_rejected() {
        let bad = minimal_toml().replace(
            "initial_exposed = [5]",
            "initial_exposed = [5]\n[model]\nlambda = [1.0, 0.8]",
        );
        let cfg: ExperimentConfig = toml::from_str(&bad).unwrap();
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("lambda"), "{err}");
    }

    #[test]
    fn multi_location_needs_contact_matrix() {
        let bad = minimal_toml().replace("n_locations = 1", "n_locations = 2");
        let cfg: ExperimentConfig = toml::from_str(&bad).unwrap();
        assert!(cfg
            .resolve()
            .unwrap_err()
            .to_string()
            .contains("contact_matrix"));
    }

    #[test]
    fn linear_schedule_hits_endpoints() {
        let schedule = LambdaSchedule::Linear {
            start: 0.9,
            end: 0.3,
        };
        assert_eq!(schedule.value_at(0, 100), vec![0.9]);
        assert_eq!(schedule.value_at(100, 100), vec![0.3]);
        let mid = schedule.value_at(50, 100)[0];
        assert!((mid - 0.6).abs() < 1e-12);
    }

    #[test]
    fn param_spec_defaults_by_name() {
        let p = ParamSpecConfig {
            name: "lambda".into(),
            prior: [0.3, 1.2],
            walk_std: None,
            bounds: None,
        };
        let spec = p.resolve().unwrap();
        assert_eq!(spec.walk_std, 0.01);
        assert_eq!(spec.bounds, [0.0, 3.0]);
        let p = ParamSpecConfig {
            name: "q_a".into(),
            prior: [0.1, 0.9],
            walk_std: None,
            bounds: None,
        };
        let spec = p.resolve().unwrap();
        assert_eq!(spec.walk_std, 0.005);
        assert_eq!(spec.bounds, [0.0, 1.0]);
    }

    #[test]
    fn asymptomatic_scenario_requires_its_fields() {
        let toml_str = minimal_toml().replace(
            "scenario = \"varying_lambda\"",
            "scenario = \"asymptomatic\"",
        );
        let cfg: ExperimentConfig = toml::from_str(&toml_str).unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn truth_overrides_apply() {
        let toml_str = format!(
            "{}\n[truth]\ncontact_distribution = {{ kind = \"geometric\", p = 0.5 }}\np_house = [0.2, 0.2, 0.2, 0.2, 0.2]\n",
            minimal_toml()
        );
        let cfg: ExperimentConfig = toml::from_str(&toml_str).unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(
            resolved.truth_params.contact_distribution,
            ContactDistribution::Geometric { p: 0.5 }
        );
        assert_eq!(resolved.truth_params.p_house, [0.2; 5]);
        // The filter model keeps the defaults.
        assert_eq!(
            resolved.model_params.contact_distribution,
            ContactDistribution::Poisson
        );
        assert_eq!(resolved.model_params.p_house, d_p_house());
    }

    #[test]
    fn config_echo_roundtrips_through_toml() {
        let cfg: ExperimentConfig = toml::from_str(minimal_toml()).unwrap();
        let echoed = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&echoed).unwrap();
        assert_eq!(cfg, back);
        // The echo materializes defaulted model parameters.
        assert!(echoed.contains("beta_domestic"));
        assert!(echoed.contains("q_severe"));
        assert!(echoed.contains("kappa_confirmed_coeff"));
    }
}
