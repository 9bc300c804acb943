//! Ensemble Kalman filter with perturbed observations on macro-states, with
//! random-walk state augmentation for parameter estimation.
//!
//! The filter treats the agent-based model as a black box: members are
//! aggregated into macro-state vectors, updated in that space, and the
//! analysis counts are pushed back into the agent populations by one of the
//! redistribution algorithms. The intrinsic stochasticity of the model
//! provides the forecast spread, so no covariance inflation is applied.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::abm::{step_day, AgentPopulation, ModelParams};
use crate::error::{Error, Result};
use crate::macromap::{
    aggregate, backward_cascade_redistribution, integerize_counts, randomized_redistribution,
    CompartmentCounts, MacroState,
};
use crate::obs::{error_covariance, obs_matrix, ObservationBatch};
use crate::rng::{spawn, SimRng};

/// Flattening scheme for augmented state vectors: location-major compartment
/// counts followed by the augmented parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    n_locations: usize,
    asymptomatic: bool,
    param_names: Vec<String>,
}

impl StateLayout {
    pub fn new(n_locations: usize, asymptomatic: bool, param_names: Vec<String>) -> Self {
        StateLayout {
            n_locations,
            asymptomatic,
            param_names,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn asymptomatic(&self) -> bool {
        self.asymptomatic
    }

    pub fn n_status(&self) -> usize {
        crate::abm::HealthStatus::all(self.asymptomatic).len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn dim(&self) -> usize {
        self.n_locations * self.n_status() + self.param_names.len()
    }

    pub fn count_index(&self, location: usize, status: crate::abm::HealthStatus) -> usize {
        location * self.n_status() + status.index()
    }

    pub fn param_index(&self, k: usize) -> usize {
        self.n_locations * self.n_status() + k
    }

    pub fn flatten(&self, state: &MacroState) -> DVector<f64> {
        debug_assert_eq!(state.counts.n_locations(), self.n_locations);
        debug_assert_eq!(state.params.len(), self.param_names.len());
        let mut v = DVector::zeros(self.dim());
        v.rows_mut(0, self.n_locations * self.n_status())
            .copy_from_slice(state.counts.values());
        for (k, p) in state.params.iter().enumerate() {
            v[self.param_index(k)] = *p;
        }
        v
    }

    pub fn unflatten(&self, v: &DVector<f64>) -> MacroState {
        debug_assert_eq!(v.len(), self.dim());
        let mut counts = CompartmentCounts::zeros(self.n_locations, self.asymptomatic);
        let n_status = self.n_status();
        for loc in 0..self.n_locations {
            for idx in 0..n_status {
                counts.set_idx(loc, idx, v[loc * n_status + idx]);
            }
        }
        let params = (0..self.param_names.len())
            .map(|k| v[self.param_index(k)])
            .collect();
        MacroState { counts, params }
    }
}

/// Specification of one augmented parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    /// "lambda" or "q_a".
    pub name: String,
    /// Initial uniform prior range.
    pub prior_low: f64,
    pub prior_high: f64,
    /// Random-walk standard deviation per day.
    pub walk_std: f64,
    /// Hard clamping bounds applied after every forecast and analysis.
    pub bounds: [f64; 2],
}

impl ParamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name != "lambda" && self.name != "q_a" {
            return Err(Error::Config(format!(
                "unknown augmented parameter '{}' (supported: lambda, q_a)",
                self.name
            )));
        }
        if self.prior_low > self.prior_high {
            return Err(Error::Config(format!(
                "{}: prior range [{}, {}] is inverted",
                self.name, self.prior_low, self.prior_high
            )));
        }
        if self.bounds[0] > self.bounds[1] {
            return Err(Error::Config(format!(
                "{}: bounds [{}, {}] are inverted",
                self.name, self.bounds[0], self.bounds[1]
            )));
        }
        if self.prior_low < self.bounds[0] || self.prior_high > self.bounds[1] {
            return Err(Error::Config(format!(
                "{}: prior range [{}, {}] outside bounds [{}, {}]",
                self.name, self.prior_low, self.prior_high, self.bounds[0], self.bounds[1]
            )));
        }
        if self.walk_std < 0.0 {
            return Err(Error::Config(format!(
                "{}: walk_std must be non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

/// Overlay augmented parameter values on the base model parameters.
pub fn apply_params(base: &ModelParams, specs: &[ParamSpec], values: &[f64]) -> ModelParams {
    let mut params = base.clone();
    for (spec, &v) in specs.iter().zip(values) {
        match spec.name.as_str() {
            "lambda" => params.set_lambda_scalar(v),
            "q_a" => params.q_asymptomatic = v,
            _ => unreachable!("validated names"),
        }
    }
    params
}

/// Diagnostics of one analysis update.
#[derive(Debug, Clone)]
pub struct AnalysisInfo {
    /// y - H x̄ on the forecast ensemble.
    pub innovation: DVector<f64>,
    pub gain: DMatrix<f64>,
    /// Mean of the realized observation perturbations.
    pub perturbation_mean: DVector<f64>,
    pub forecast_mean: DVector<f64>,
}

/// Perturbed-observation EnKF analysis step.
///
/// The sample covariance uses divisor N_e - 1. Each member assimilates an
/// independently perturbed copy of the observation, drawn from its own RNG
/// stream so ensembles are permutation-equivariant.
pub fn analysis_update<R: Rng>(
    states: &mut [DVector<f64>],
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    rngs: &mut [R],
) -> Result<AnalysisInfo> {
    let ne = states.len();
    if ne < 2 {
        return Err(Error::Contract("ensemble needs at least 2 members".into()));
    }
    if rngs.len() != ne {
        return Err(Error::Contract(format!(
            "{} RNG streams for {ne} members",
            rngs.len()
        )));
    }
    let nx = states[0].len();
    let ny = y.len();
    if h.nrows() != ny || h.ncols() != nx {
        return Err(Error::Contract(format!(
            "observation matrix is {}x{}, expected {ny}x{nx}",
            h.nrows(),
            h.ncols()
        )));
    }
    if r_diag.len() != ny || r_diag.iter().any(|v| *v <= 0.0) {
        return Err(Error::Contract(
            "observation error variances must be positive".into(),
        ));
    }

    let mut mean = DVector::zeros(nx);
    for x in states.iter() {
        mean += x;
    }
    mean /= ne as f64;

    let mut anomalies = DMatrix::zeros(nx, ne);
    for (j, x) in states.iter().enumerate() {
        anomalies.set_column(j, &(x - &mean));
    }
    let ha = h * &anomalies;
    let denom = (ne - 1) as f64;
    let p_ht = &anomalies * ha.transpose() / denom;
    let mut innov_cov = &ha * ha.transpose() / denom;
    for i in 0..ny {
        innov_cov[(i, i)] += r_diag[i];
    }
    let chol = Cholesky::new(innov_cov).ok_or_else(|| {
        Error::Numerical("innovation covariance is not positive definite".into())
    })?;
    let gain = chol.solve(&p_ht.transpose()).transpose();

    let sqrt_r: Vec<f64> = r_diag.iter().map(|v| v.sqrt()).collect();
    let mut perturbation_sum = DVector::zeros(ny);
    for (x, rng) in states.iter_mut().zip(rngs.iter_mut()) {
        let eps = DVector::from_iterator(
            ny,
            sqrt_r
                .iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal)),
        );
        perturbation_sum += &eps;
        let member_innovation = y + &eps - h * &*x;
        *x += &gain * member_innovation;
    }

    Ok(AnalysisInfo {
        innovation: y - h * &mean,
        gain,
        perturbation_mean: perturbation_sum / ne as f64,
        forecast_mean: mean,
    })
}

/// Which macro-to-micro adjustment reconciles analysis counts with agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustMethod {
    Randomized,
    Cascade,
}

/// One ensemble member: an agent population, its macro-state, and an
/// independent RNG stream that travels with it.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub population: AgentPopulation,
    pub macro_state: MacroState,
    pub rng: SimRng,
}

/// Result of one assimilation cycle.
#[derive(Debug, Clone)]
pub struct CycleInfo {
    pub analysis: AnalysisInfo,
    /// Relabel count per member, in member order.
    pub relabel_counts: Vec<usize>,
}

/// The forecast/analysis ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
    pub layout: StateLayout,
    pub param_specs: Vec<ParamSpec>,
    pub base_params: ModelParams,
}

impl Ensemble {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_agents(&self) -> usize {
        self.members[0].population.n_agents()
    }

    /// Model parameters a member runs with: base overlaid with its augmented
    /// parameter values.
    pub fn member_params(&self, member: &EnsembleMember) -> ModelParams {
        apply_params(&self.base_params, &self.param_specs, &member.macro_state.params)
    }

    /// One forecast day: random-walk the augmented parameters (clamped to
    /// bounds), step every population, refresh the macro-states.
    pub fn forecast_step(&mut self) {
        let specs = &self.param_specs;
        let base = &self.base_params;
        self.members.par_iter_mut().for_each(|member| {
            for (k, spec) in specs.iter().enumerate() {
                if spec.walk_std > 0.0 {
                    let z: f64 = member.rng.sample(StandardNormal);
                    member.macro_state.params[k] += spec.walk_std * z;
                }
                member.macro_state.params[k] =
                    member.macro_state.params[k].clamp(spec.bounds[0], spec.bounds[1]);
            }
            let params = apply_params(base, specs, &member.macro_state.params);
            step_day(&mut member.population, &params, &mut member.rng);
            member.macro_state.counts = aggregate(&member.population);
        });
    }

    /// One assimilation cycle: aggregate, analysis update in macro space,
    /// integerize, adjust every member's population to its analysis counts.
    pub fn assimilate(
        &mut self,
        batch: &ObservationBatch,
        method: AdjustMethod,
    ) -> Result<CycleInfo> {
        let n_agents = self.n_agents();
        let mut states: Vec<DVector<f64>> = self
            .members
            .iter()
            .map(|m| {
                self.layout.flatten(&MacroState {
                    counts: aggregate(&m.population),
                    params: m.macro_state.params.clone(),
                })
            })
            .collect();
        let h = obs_matrix(&self.layout, &batch.kinds, n_agents);
        let r = error_covariance(&batch.values, &batch.kinds, &batch.error);
        let y = DVector::from_column_slice(&batch.values);

        let analysis = {
            let mut rngs: Vec<&mut SimRng> =
                self.members.iter_mut().map(|m| &mut m.rng).collect();
            analysis_update(&mut states, &y, &h, &r, &mut rngs)?
        };
        if std::env::var_os("ENKF_DEBUG").is_some() {
            let n_status = self.layout.n_status();
            let n_loc = self.layout.n_locations();
            let death_idx = crate::abm::HealthStatus::Deceased.index();
            let obs_d: f64 = batch
                .kinds
                .iter()
                .zip(&batch.values)
                .filter(|(k, _)| matches!(k, crate::obs::ObsKind::Deaths { .. }))
                .map(|(_, v)| v)
                .sum();
            let post_d: f64 = states
                .iter()
                .map(|x| (0..n_loc).map(|l| x[l * n_status + death_idx]).sum::<f64>())
                .sum::<f64>()
                / states.len() as f64;
            let row_sum_err: f64 = states
                .iter()
                .map(|x| {
                    (0..n_loc)
                        .map(|l| {
                            let s: f64 = (0..n_status).map(|si| x[l * n_status + si]).sum();
                            (s - self.members[0].population.location_sizes()[l] as f64).abs()
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / states.len() as f64;
            eprintln!(
                "day {}: obs_D {obs_d:8.1} post_analysis_D {post_d:8.1} mean_rowsum_err {row_sum_err:9.3}",
                batch.day
            );
        }

        let layout = &self.layout;
        let specs = &self.param_specs;
        let base = &self.base_params;
        let relabel_counts: Vec<usize> = self
            .members
            .par_iter_mut()
            .zip(states.into_par_iter())
            .map(|(member, x)| -> Result<usize> {
                let MacroState { counts, mut params } = layout.unflatten(&x);
                for (k, spec) in specs.iter().enumerate() {
                    params[k] = params[k].clamp(spec.bounds[0], spec.bounds[1]);
                }
                let target = integerize_counts(&counts, member.population.location_sizes());
                let member_params = apply_params(base, specs, &params);
                let log = match method {
                    AdjustMethod::Randomized => randomized_redistribution(
                        &mut member.population,
                        &target,
                        &member_params,
                        &mut member.rng,
                    )?,
                    AdjustMethod::Cascade => backward_cascade_redistribution(
                        &mut member.population,
                        &target,
                        &member_params,
                        &mut member.rng,
                    )?,
                };
                member.macro_state = MacroState {
                    counts: target,
                    params,
                };
                Ok(log.relabel_count())
            })
            .collect::<Result<Vec<usize>>>()?;

        Ok(CycleInfo {
            analysis,
            relabel_counts,
        })
    }
}

/// Build an ensemble. Each member gets an independent RNG stream spawned from
/// the master stream, a population from `make_population` (driven by the
/// member's own stream), and parameters drawn uniformly from their priors.
pub fn init_ensemble(
    n_members: usize,
    base_params: ModelParams,
    param_specs: Vec<ParamSpec>,
    mut make_population: impl FnMut(&mut SimRng) -> Result<AgentPopulation>,
    master_rng: &mut SimRng,
) -> Result<Ensemble> {
    if n_members < 2 {
        return Err(Error::Config("ensemble needs at least 2 members".into()));
    }
    for spec in &param_specs {
        spec.validate()?;
    }
    let mut members = Vec::with_capacity(n_members);
    for _ in 0..n_members {
        let mut rng = spawn(master_rng);
        let population = make_population(&mut rng)?;
        let params: Vec<f64> = param_specs
            .iter()
            .map(|s| {
                if s.prior_low == s.prior_high {
                    s.prior_low
                } else {
                    rng.random_range(s.prior_low..s.prior_high)
                }
            })
            .collect();
        let macro_state = MacroState {
            counts: aggregate(&population),
            params,
        };
        members.push(EnsembleMember {
            population,
            macro_state,
            rng,
        });
    }
    let first = &members[0].population;
    let layout = StateLayout::new(
        first.n_locations(),
        first.asymptomatic_enabled(),
        param_specs.iter().map(|s| s.name.clone()).collect(),
    );
    Ok(Ensemble {
        members,
        layout,
        param_specs,
        base_params,
    })
}
