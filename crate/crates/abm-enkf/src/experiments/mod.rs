//! Experiment orchestration: truth runs, synthetic twin experiments, the
//! real-data assimilation pipeline, and the metrics behind them.

mod config;
mod kl;
mod metrics;

pub use config::{
    ContactDistConfig, ExperimentConfig, LambdaSchedule, MethodChoice, ModelConfig, ObsConfig,
    ParamSpecConfig, ResolvedExperiment, ScalarOrVec, Scenario, TruthConfig,
};
pub use kl::{kl_curve, kl_minimizing_lambda, kl_poisson_vs_geometric};
pub use metrics::{
    infections_by_house_size, matching_metrics, residents_by_house_size, MatchReport,
    INFECTED_STATUSES,
};

use crate::abm::{init_population, seed_infections, step_day, AgentPopulation, ContactMatrix};
use crate::dataio::{
    layout_rows, status_string, write_diagnostics, write_population_snapshots, DailyReportDataset,
    IncidenceRow, InnovationRow, MacroRow, MatchRow, MemberStatusRow, ParamRow,
    PopulationSnapshots, RelabelRow, RunDiagnostics, RunMeta, SnapshotMeta, TruthStatusRow,
};
use crate::enkf::{init_ensemble, CycleInfo, Ensemble};
use crate::error::{Error, Result};
use crate::macromap::{aggregate, CompartmentCounts};
use crate::obs::{
    eval_kind, obs_kinds, simulate_random_testing, synthesize_observations, ObsKind,
    ObservationBatch,
};
use crate::rng::{rng_from_seed, spawn, SimRng};
use crate::SCHEMA_VERSION;

/// A daily truth trajectory.
#[derive(Debug, Clone)]
pub struct TruthRun {
    /// State at day 0 (after seeding).
    pub initial_population: AgentPopulation,
    /// Aggregated counts for days 0..=days.
    pub counts: Vec<CompartmentCounts>,
    /// Full populations for days 0..=days (only when stored).
    pub populations: Option<Vec<AgentPopulation>>,
    /// Contact rate used on each day.
    pub lambda_series: Vec<Vec<f64>>,
    /// (positives, tested) per day when randomized testing is simulated.
    pub positivity: Vec<Option<(u32, u32)>>,
    /// Infected share per house size per day.
    pub house_size_infected: Vec<Option<[f64; 5]>>,
}

/// Generate the true trajectory for a twin experiment.
pub fn run_truth(
    resolved: &ResolvedExperiment,
    store_populations: bool,
    rng: &mut SimRng,
) -> Result<TruthRun> {
    let cfg = &resolved.config;
    let mut params = resolved.truth_params.clone();
    let mut pop = init_population(
        cfg.n_agents,
        cfg.n_locations,
        &params.p_house,
        &resolved.location_weights,
        cfg.model.asymptomatic,
        rng,
    )?;
    seed_infections(&mut pop, &resolved.initial_exposed, &params, rng)?;
    params.lambda = resolved.truth_lambda_at(0);
    for _ in 0..cfg.burn_in_days {
        step_day(&mut pop, &params, rng);
    }

    let days = cfg.days;
    let mut counts = Vec::with_capacity(days + 1);
    let mut populations = store_populations.then(|| Vec::with_capacity(days + 1));
    let mut lambda_series = Vec::with_capacity(days + 1);
    let mut positivity = Vec::with_capacity(days + 1);
    let mut house_size_infected = Vec::with_capacity(days + 1);

    let initial_population = pop.clone();
    let record = |pop: &AgentPopulation,
                      day: usize,
                      rng: &mut SimRng,
                      counts: &mut Vec<CompartmentCounts>,
                      positivity: &mut Vec<Option<(u32, u32)>>,
                      house: &mut Vec<Option<[f64; 5]>>|
     -> Result<()> {
        counts.push(aggregate(pop));
        house.push(infections_by_house_size(pop));
        let tested = match cfg.testing_fraction {
            Some(f) if resolved.include_positivity => {
                Some(simulate_random_testing(pop, f, rng)?)
            }
            _ => None,
        };
        positivity.push(tested);
        let _ = day;
        Ok(())
    };

    lambda_series.push(resolved.truth_lambda_at(0));
    record(
        &pop,
        0,
        rng,
        &mut counts,
        &mut positivity,
        &mut house_size_infected,
    )?;
    if let Some(store) = populations.as_mut() {
        store.push(pop.clone());
    }

    for day in 1..=days {
        params.lambda = resolved.truth_lambda_at(day - 1);
        step_day(&mut pop, &params, rng);
        lambda_series.push(resolved.truth_lambda_at(day));
        record(
            &pop,
            day,
            rng,
            &mut counts,
            &mut positivity,
            &mut house_size_infected,
        )?;
        if let Some(store) = populations.as_mut() {
            store.push(pop.clone());
        }
    }

    Ok(TruthRun {
        initial_population,
        counts,
        populations,
        lambda_series,
        positivity,
        house_size_infected,
    })
}

/// Run the truth model only and collect its emission rows.
pub fn run_simulate(
    cfg: &ExperimentConfig,
    mut on_day: impl FnMut(u32),
) -> Result<(RunMeta, Vec<crate::dataio::TruthSeriesRow>, Vec<crate::dataio::HouseShareRow>, Vec<crate::dataio::LambdaRow>)> {
    if cfg.scenario == Scenario::Realdata {
        return Err(Error::Config(
            "the realdata scenario has no synthetic truth to simulate".into(),
        ));
    }
    let resolved = cfg.resolve()?;
    let mut rng = rng_from_seed(cfg.truth_seed);
    let truth = run_truth(&resolved, false, &mut rng)?;
    on_day(cfg.days as u32);

    let statuses = crate::abm::HealthStatus::all(cfg.model.asymptomatic);
    let mut truth_rows = Vec::new();
    let mut house_rows = Vec::new();
    let mut lambda_rows = Vec::new();
    for (day, counts) in truth.counts.iter().enumerate() {
        for loc in 0..cfg.n_locations {
            for status in statuses {
                truth_rows.push(crate::dataio::TruthSeriesRow {
                    day: day as u32,
                    location: loc as u32,
                    status: status.label().to_string(),
                    count: counts.get(loc, *status),
                });
            }
        }
        if let Some(shares) = truth.house_size_infected[day] {
            for (i, share) in shares.iter().enumerate() {
                house_rows.push(crate::dataio::HouseShareRow {
                    day: day as u32,
                    size: i as u32 + 1,
                    share: *share,
                });
            }
        }
        for (i, value) in truth.lambda_series[day].iter().enumerate() {
            lambda_rows.push(crate::dataio::LambdaRow {
                day: day as u32,
                index: i as u32,
                value: *value,
            });
        }
    }
    Ok((base_meta(&resolved, cfg.days as u32), truth_rows, house_rows, lambda_rows))
}

/// Everything a run produces; `write` persists it under one directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub diagnostics: RunDiagnostics,
    pub snapshots: Option<PopulationSnapshots>,
}

impl RunArtifacts {
    pub fn write(&self, out_dir: &std::path::Path) -> Result<()> {
        write_diagnostics(&self.diagnostics, out_dir)?;
        if let Some(snaps) = &self.snapshots {
            write_population_snapshots(snaps, out_dir)?;
        }
        Ok(())
    }
}

fn kind_label(kind: &ObsKind) -> (&'static str, Option<u32>) {
    match kind {
        ObsKind::Confirmed { location } => ("confirmed", Some(*location as u32)),
        ObsKind::Deaths { location } => ("deaths", Some(*location as u32)),
        ObsKind::Positivity => ("positivity", None),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Shared per-day diagnostics recording for twin and real-data runs.
struct Recorder<'a> {
    diag: &'a mut RunDiagnostics,
    kinds: Vec<ObsKind>,
    n_agents: usize,
    /// Per member per location: confirmed count on the previous day.
    prev_confirmed: Vec<Vec<f64>>,
    prev_observed: Option<Vec<f64>>,
}

impl<'a> Recorder<'a> {
    fn new(diag: &'a mut RunDiagnostics, kinds: Vec<ObsKind>, ens: &Ensemble) -> Self {
        let n_locations = ens.layout.n_locations();
        let prev_confirmed = ens
            .members
            .iter()
            .map(|m| {
                (0..n_locations)
                    .map(|loc| {
                        eval_kind(
                            ObsKind::Confirmed { location: loc },
                            &m.macro_state.counts,
                            m.population.n_agents(),
                        )
                    })
                    .collect()
            })
            .collect();
        Recorder {
            diag,
            kinds,
            n_agents: ens.n_agents(),
            prev_confirmed,
            prev_observed: None,
        }
    }

    fn record_day(
        &mut self,
        day: u32,
        ens: &Ensemble,
        truth_counts: Option<&CompartmentCounts>,
        truth_lambda: Option<f64>,
        truth_q_a: Option<f64>,
        observation: Option<&ObservationBatch>,
        cycle: Option<&CycleInfo>,
        truth_population: Option<&AgentPopulation>,
    ) {
        let layout = &ens.layout;
        let n_locations = layout.n_locations();
        let statuses = crate::abm::HealthStatus::all(layout.asymptomatic());

        for loc in 0..n_locations {
            for status in statuses {
                let values: Vec<f64> = ens
                    .members
                    .iter()
                    .map(|m| m.macro_state.counts.get(loc, *status))
                    .collect();
                let (mean, std) = mean_std(&values);
                self.diag.macro_rows.push(MacroRow {
                    day,
                    location: loc.to_string(),
                    status: status.label().to_string(),
                    mean,
                    std,
                    truth: truth_counts.map(|t| t.get(loc, *status)),
                });
            }
        }
        for status in statuses {
            let totals: Vec<f64> = ens
                .members
                .iter()
                .map(|m| m.macro_state.counts.total(*status))
                .collect();
            let (mean, std) = mean_std(&totals);
            self.diag.macro_rows.push(MacroRow {
                day,
                location: "all".to_string(),
                status: status.label().to_string(),
                mean,
                std,
                truth: truth_counts.map(|t| t.total(*status)),
            });
        }

        for (k, spec) in ens.param_specs.iter().enumerate() {
            let values: Vec<f64> = ens
                .members
                .iter()
                .map(|m| m.macro_state.params[k])
                .collect();
            let (mean, std) = mean_std(&values);
            let truth = match spec.name.as_str() {
                "lambda" => truth_lambda,
                "q_a" => truth_q_a,
                _ => None,
            };
            self.diag.param_rows.push(ParamRow {
                day,
                name: spec.name.clone(),
                mean,
                std,
                truth,
            });
        }

        // Incidence: day-over-day difference of estimated cumulative
        // confirmed, clamped at 0; the observed column is the raw difference
        // of the observed stream.
        let observed_confirmed: Option<Vec<f64>> = observation.map(|batch| {
            (0..n_locations)
                .map(|loc| {
                    batch
                        .kinds
                        .iter()
                        .zip(&batch.values)
                        .find_map(|(k, v)| match k {
                            ObsKind::Confirmed { location } if *location == loc => Some(*v),
                            _ => None,
                        })
                        .unwrap_or(f64::NAN)
                })
                .collect()
        });
        let mut total_mean = 0.0;
        let mut per_member_total: Vec<f64> = vec![0.0; ens.members.len()];
        for loc in 0..n_locations {
            let mut diffs = Vec::with_capacity(ens.members.len());
            for (j, m) in ens.members.iter().enumerate() {
                let confirmed = eval_kind(
                    ObsKind::Confirmed { location: loc },
                    &m.macro_state.counts,
                    self.n_agents,
                );
                let diff = (confirmed - self.prev_confirmed[j][loc]).max(0.0);
                self.prev_confirmed[j][loc] = confirmed;
                per_member_total[j] += diff;
                diffs.push(diff);
            }
            let (mean, std) = mean_std(&diffs);
            total_mean += mean;
            let observed = match (&observed_confirmed, &self.prev_observed) {
                (Some(now), Some(prev)) if !now[loc].is_nan() && !prev[loc].is_nan() => {
                    Some(now[loc] - prev[loc])
                }
                _ => None,
            };
            self.diag.incidence_rows.push(IncidenceRow {
                day,
                location: loc.to_string(),
                new_cases_mean: mean,
                new_cases_std: std,
                observed,
            });
        }
        let (_, total_std) = mean_std(&per_member_total);
        let observed_total = match (&observed_confirmed, &self.prev_observed) {
            (Some(now), Some(prev)) => {
                let s: f64 = now
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| if a.is_nan() || b.is_nan() { 0.0 } else { a - b })
                    .sum();
                Some(s)
            }
            _ => None,
        };
        self.diag.incidence_rows.push(IncidenceRow {
            day,
            location: "all".to_string(),
            new_cases_mean: total_mean,
            new_cases_std: total_std,
            observed: observed_total,
        });
        if let Some(now) = observed_confirmed {
            self.prev_observed = Some(now);
        }

        if let Some(cycle) = cycle {
            for (row, kind) in self.kinds.iter().enumerate() {
                let (kind_name, location) = kind_label(kind);
                self.diag.innovation_rows.push(InnovationRow {
                    day,
                    row: row as u32,
                    kind: kind_name.to_string(),
                    location,
                    value: cycle.analysis.innovation[row],
                });
            }
            for (member, &count) in cycle.relabel_counts.iter().enumerate() {
                self.diag.relabel_rows.push(RelabelRow {
                    day,
                    member: member as u32,
                    relabels: count as u32,
                });
            }
        }

        if let Some(truth_pop) = truth_population {
            let mut agent_id = Vec::with_capacity(ens.members.len());
            let mut house_id = Vec::with_capacity(ens.members.len());
            let mut household_type = Vec::with_capacity(ens.members.len());
            let mut loc_household_type = Vec::with_capacity(ens.members.len());
            for m in &ens.members {
                if let Ok(report) = matching_metrics(truth_pop, &m.population) {
                    agent_id.push(report.agent_id);
                    house_id.push(report.house_id);
                    household_type.push(report.household_type);
                    loc_household_type.push(report.loc_household_type);
                }
            }
            for (metric, values) in [
                ("agent_id", agent_id),
                ("house_id", house_id),
                ("household_type", household_type),
                ("loc_household_type", loc_household_type),
            ] {
                if values.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&values);
                self.diag.match_rows.push(MatchRow {
                    day,
                    metric: metric.to_string(),
                    mean,
                    std,
                });
            }
        }
    }
}

fn base_meta(resolved: &ResolvedExperiment, days_effective: u32) -> RunMeta {
    let cfg = &resolved.config;
    RunMeta {
        schema_version: SCHEMA_VERSION.to_string(),
        scenario: cfg.scenario.label().to_string(),
        method: cfg.method.label().to_string(),
        truth_seed: cfg.truth_seed,
        ensemble_seed: cfg.ensemble_seed,
        days_effective,
        kappa_confirmed: resolved.error_spec.kappa_confirmed,
        kappa_deaths: resolved.error_spec.kappa_deaths,
        positivity_tested: resolved.positivity_tested as u32,
        location_weights: resolved.location_weights.clone(),
        initial_exposed: resolved.initial_exposed.clone(),
        gap_days: Vec::new(),
        dataset_warnings: Vec::new(),
        invocation: None,
        config: cfg.clone(),
    }
}

fn init_twin_ensemble(
    resolved: &ResolvedExperiment,
    truth: &TruthRun,
    master_rng: &mut SimRng,
) -> Result<Ensemble> {
    let cfg = &resolved.config;
    let shared = cfg.scenario == Scenario::Microscale;
    let model_params = resolved.model_params.clone();
    let location_weights = resolved.location_weights.clone();
    let initial_exposed = resolved.initial_exposed.clone();
    let initial = truth.initial_population.clone();
    init_ensemble(
        cfg.ensemble_size,
        resolved.model_params.clone(),
        resolved.param_specs.clone(),
        move |rng| {
            if shared {
                Ok(initial.clone())
            } else {
                let mut pop = init_population(
                    cfg.n_agents,
                    cfg.n_locations,
                    &model_params.p_house,
                    &location_weights,
                    cfg.model.asymptomatic,
                    rng,
                )?;
                seed_infections(&mut pop, &initial_exposed, &model_params, rng)?;
                for _ in 0..cfg.burn_in_days {
                    step_day(&mut pop, &model_params, rng);
                }
                Ok(pop)
            }
        },
        master_rng,
    )
}

/// Run one synthetic twin experiment: truth, observations, assimilation (or a
/// free-running control when the method is `none`), with daily diagnostics.
pub fn run_twin(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_twin_observed(cfg, |_| {})
}

/// [`run_twin`] with a per-day progress callback.
pub fn run_twin_observed(
    cfg: &ExperimentConfig,
    mut on_day: impl FnMut(u32),
) -> Result<RunArtifacts> {
    if cfg.scenario == Scenario::Realdata {
        return Err(Error::Config(
            "realdata scenario runs through run_realdata".into(),
        ));
    }
    let resolved = cfg.resolve()?;
    let store_populations = cfg.store_populations || cfg.scenario == Scenario::Microscale;

    let mut truth_rng = rng_from_seed(cfg.truth_seed);
    let mut obs_rng = spawn(&mut truth_rng);
    let truth = run_truth(&resolved, store_populations, &mut truth_rng)?;

    let kinds = obs_kinds(cfg.n_locations, resolved.include_positivity);
    let mut observations = synthesize_observations(
        &truth.counts,
        &kinds,
        cfg.n_agents,
        &resolved.error_spec,
        &mut obs_rng,
    );
    if resolved.include_positivity {
        // The positivity stream comes from the randomized-testing simulation
        // on the truth populations; its noise is the sampling error itself.
        let row = kinds
            .iter()
            .position(|k| *k == ObsKind::Positivity)
            .expect("positivity row");
        for (day, batch) in observations.iter_mut().enumerate() {
            if let Some(Some((pos, tested))) = truth.positivity.get(day) {
                batch.values[row] = *pos as f64 / *tested as f64;
            }
        }
    }

    let mut ens_rng = rng_from_seed(cfg.ensemble_seed);
    let mut ens = init_twin_ensemble(&resolved, &truth, &mut ens_rng)?;

    let mut diag = RunDiagnostics::new(base_meta(&resolved, cfg.days as u32));
    let mut snapshots = store_populations.then(|| PopulationSnapshots {
        meta: SnapshotMeta {
            schema_version: SCHEMA_VERSION.to_string(),
            n_locations: cfg.n_locations as u32,
            asymptomatic: cfg.model.asymptomatic,
            n_agents: cfg.n_agents as u32,
            days: cfg.days as u32,
            n_members: cfg.ensemble_size as u32,
        },
        layout: layout_rows(&truth.initial_population),
        truth: Vec::new(),
        members: Vec::new(),
    });

    let truth_pop_at = |day: usize| -> Option<&AgentPopulation> {
        truth.populations.as_ref().map(|p| &p[day])
    };
    let truth_lambda_at = |day: usize| -> Option<f64> {
        let l = &truth.lambda_series[day];
        (l.len() == 1).then(|| l[0])
    };
    let truth_q_a = resolved
        .include_positivity
        .then_some(resolved.truth_params.q_asymptomatic);

    {
        let mut recorder = Recorder::new(&mut diag, kinds.clone(), &ens);
        recorder.record_day(
            0,
            &ens,
            Some(&truth.counts[0]),
            truth_lambda_at(0),
            truth_q_a,
            None,
            None,
            truth_pop_at(0),
        );
        if let Some(snaps) = snapshots.as_mut() {
            push_snapshots(snaps, 0, truth_pop_at(0), &ens);
        }

        for day in 1..=cfg.days {
            ens.forecast_step();
            let cycle = match resolved.method {
                Some(method) => Some(ens.assimilate(&observations[day], method)?),
                None => None,
            };
            recorder.record_day(
                day as u32,
                &ens,
                Some(&truth.counts[day]),
                truth_lambda_at(day),
                truth_q_a,
                Some(&observations[day]),
                cycle.as_ref(),
                truth_pop_at(day),
            );
            if let Some(snaps) = snapshots.as_mut() {
                push_snapshots(snaps, day as u32, truth_pop_at(day), &ens);
            }
            on_day(day as u32);
        }
    }

    Ok(RunArtifacts {
        diagnostics: diag,
        snapshots,
    })
}

fn push_snapshots(
    snaps: &mut PopulationSnapshots,
    day: u32,
    truth_pop: Option<&AgentPopulation>,
    ens: &Ensemble,
) {
    if let Some(truth_pop) = truth_pop {
        snaps.truth.push(TruthStatusRow {
            day,
            statuses: status_string(truth_pop),
        });
    }
    for (member, m) in ens.members.iter().enumerate() {
        snaps.members.push(MemberStatusRow {
            member: member as u32,
            day,
            statuses: status_string(&m.population),
        });
    }
}

/// Recompute the matching metrics from stored population snapshots.
pub fn recompute_matching(snaps: &PopulationSnapshots) -> Result<Vec<MatchRow>> {
    let n_locations = snaps.meta.n_locations as usize;
    let asymptomatic = snaps.meta.asymptomatic;
    let mut rows = Vec::new();
    for truth_row in &snaps.truth {
        let truth_pop = crate::dataio::snapshot_population(
            &snaps.layout,
            &truth_row.statuses,
            n_locations,
            asymptomatic,
        )?;
        let mut reports: Vec<MatchReport> = Vec::new();
        for member_row in snaps.members.iter().filter(|m| m.day == truth_row.day) {
            let member_pop = crate::dataio::snapshot_population(
                &snaps.layout,
                &member_row.statuses,
                n_locations,
                asymptomatic,
            )?;
            reports.push(matching_metrics(&truth_pop, &member_pop)?);
        }
        if reports.is_empty() {
            continue;
        }
        for (metric, extract) in [
            ("agent_id", (|r: &MatchReport| r.agent_id) as fn(&MatchReport) -> f64),
            ("house_id", |r| r.house_id),
            ("household_type", |r| r.household_type),
            ("loc_household_type", |r| r.loc_household_type),
        ] {
            let values: Vec<f64> = reports.iter().map(extract).collect();
            let (mean, std) = mean_std(&values);
            rows.push(MatchRow {
                day: truth_row.day,
                metric: metric.to_string(),
                mean,
                std,
            });
        }
    }
    Ok(rows)
}

/// Contact matrix from location populations: half of the casual contacts stay
/// within the own location, the other half spread over the other locations
/// proportionally to their population weight.
pub fn build_density_contact_matrix(populations: &[f64]) -> Result<ContactMatrix> {
    let n = populations.len();
    if n == 0 {
        return Err(Error::Config("need at least one location".into()));
    }
    if populations.iter().any(|p| *p <= 0.0) {
        return Err(Error::Config("location populations must be positive".into()));
    }
    if n == 1 {
        return Ok(ContactMatrix::identity(1));
    }
    let mut rows = vec![vec![0.0; n]; n];
    for j in 0..n {
        let others: f64 = populations
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, w)| w)
            .sum();
        for i in 0..n {
            rows[i][j] = if i == j {
                0.5
            } else {
                0.5 * populations[i] / others
            };
        }
    }
    ContactMatrix::from_rows(&rows)
}

/// Run the real-data assimilation pipeline against an ingested dataset.
///
/// Observations are divided by `data_scale` and rounded to the nearest agent
/// count. Calendar gaps in the dataset become forecast-only days, flagged in
/// the run metadata.
pub fn run_realdata(cfg: &ExperimentConfig, dataset: &DailyReportDataset) -> Result<RunArtifacts> {
    run_realdata_observed(cfg, dataset, |_| {})
}

/// [`run_realdata`] with a per-day progress callback.
pub fn run_realdata_observed(
    cfg: &ExperimentConfig,
    dataset: &DailyReportDataset,
    mut on_day: impl FnMut(u32),
) -> Result<RunArtifacts> {
    if cfg.scenario != Scenario::Realdata {
        return Err(Error::Config(
            "run_realdata needs the realdata scenario".into(),
        ));
    }
    if cfg.n_locations != dataset.locations.len() {
        return Err(Error::Config(format!(
            "config has {} locations, dataset has {}",
            cfg.n_locations,
            dataset.locations.len()
        )));
    }
    let populations: Vec<f64> = dataset.locations.iter().map(|l| l.population).collect();
    let total_population: f64 = populations.iter().sum();
    let matrix = build_density_contact_matrix(&populations)?;
    let mut resolved = cfg.resolve_with_matrix(matrix)?;
    resolved.location_weights = populations.iter().map(|p| p / total_population).collect();
    let scale = cfg.data_scale.expect("validated in resolve");

    let first_day = dataset.days[0];
    let span = (*dataset.days.last().unwrap() - first_day).num_days() as usize + 1;
    let kinds = obs_kinds(cfg.n_locations, false);

    // Scaled observation batches indexed by simulation day (1-based).
    let mut observations: Vec<Option<ObservationBatch>> = vec![None; span + 1];
    for (row, date) in dataset.days.iter().enumerate() {
        let day = (*date - first_day).num_days() as usize + 1;
        let mut values = Vec::with_capacity(kinds.len());
        for loc in 0..cfg.n_locations {
            values.push((dataset.cumulative_confirmed[row][loc] / scale).round());
        }
        for loc in 0..cfg.n_locations {
            values.push((dataset.cumulative_deaths[row][loc] / scale).round());
        }
        observations[day] = Some(ObservationBatch {
            day: day as u32,
            values,
            kinds: kinds.clone(),
            error: resolved.error_spec,
        });
    }
    let gap_days: Vec<u32> = (1..=span)
        .filter(|d| observations[*d].is_none())
        .map(|d| d as u32)
        .collect();

    let mut ens_rng = rng_from_seed(cfg.ensemble_seed);
    let model_params = resolved.model_params.clone();
    let location_weights = resolved.location_weights.clone();
    let initial_exposed = resolved.initial_exposed.clone();
    let mut ens = init_ensemble(
        cfg.ensemble_size,
        resolved.model_params.clone(),
        resolved.param_specs.clone(),
        move |rng| {
            let mut pop = init_population(
                cfg.n_agents,
                cfg.n_locations,
                &model_params.p_house,
                &location_weights,
                cfg.model.asymptomatic,
                rng,
            )?;
            seed_infections(&mut pop, &initial_exposed, &model_params, rng)?;
            Ok(pop)
        },
        &mut ens_rng,
    )?;

    let mut meta = base_meta(&resolved, span as u32);
    meta.gap_days = gap_days;
    meta.dataset_warnings = dataset.warnings.clone();
    let mut diag = RunDiagnostics::new(meta);

    {
        let mut recorder = Recorder::new(&mut diag, kinds.clone(), &ens);
        recorder.record_day(0, &ens, None, None, None, None, None, None);
        for day in 1..=span {
            ens.forecast_step();
            let (cycle, batch) = match (&observations[day], resolved.method) {
                (Some(batch), Some(method)) => {
                    (Some(ens.assimilate(batch, method)?), Some(batch))
                }
                (Some(batch), None) => (None, Some(batch)),
                (None, _) => (None, None),
            };
            recorder.record_day(
                day as u32,
                &ens,
                None,
                None,
                None,
                batch,
                cycle.as_ref(),
                None,
            );
            on_day(day as u32);
        }
    }

    Ok(RunArtifacts {
        diagnostics: diag,
        snapshots: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::HealthStatus;

    fn tiny_config(method: MethodChoice) -> ExperimentConfig {
        let mut cfg: ExperimentConfig = toml::from_str(
            r#"
scenario = "varying_lambda"
n_agents = 400
n_locations = 1
ensemble_size = 6
days = 15
truth_seed = 11
ensemble_seed = 12
initial_exposed = [8]

[model]
lambda = 0.8
"#,
        )
        .unwrap();
        cfg.method = method;
        cfg
    }

    #[test]
    fn flat_trajectory_without_contacts_or_seeds() {
        let mut cfg = tiny_config(MethodChoice::None);
        cfg.initial_exposed = vec![];
        cfg.model.lambda = ScalarOrVec::Scalar(0.0);
        let resolved = cfg.resolve().unwrap();
        let mut rng = rng_from_seed(1);
        let truth = run_truth(&resolved, false, &mut rng).unwrap();
        for counts in &truth.counts {
            assert_eq!(counts.get(0, HealthStatus::Susceptible), 400.0);
        }
    }

    #[test]
    fn schedule_endpoints_are_recorded_exactly() {
        let mut cfg = tiny_config(MethodChoice::None);
        cfg.truth.lambda_schedule = Some(LambdaSchedule::Linear {
            start: 0.9,
            end: 0.3,
        });
        let resolved = cfg.resolve().unwrap();
        let mut rng = rng_from_seed(2);
        let truth = run_truth(&resolved, false, &mut rng).unwrap();
        assert_eq!(truth.lambda_series[0], vec![0.9]);
        assert_eq!(truth.lambda_series[15], vec![0.3]);
    }

    #[test]
    fn final_size_grows_with_lambda() {
        // Median attack size over 20 seeds must be monotone over a lambda
        // grid; a coarse sanity oracle for the transmission machinery.
        let mut medians = Vec::new();
        for &lambda in &[0.3, 0.5, 0.8] {
            let mut finals = Vec::new();
            for seed in 0..20 {
                let mut cfg = tiny_config(MethodChoice::None);
                cfg.n_agents = 800;
                cfg.days = 60;
                cfg.truth_seed = 1000 + seed;
                cfg.model.lambda = ScalarOrVec::Scalar(lambda);
                let resolved = cfg.resolve().unwrap();
                let mut rng = rng_from_seed(cfg.truth_seed);
                let truth = run_truth(&resolved, false, &mut rng).unwrap();
                let last = truth.counts.last().unwrap();
                finals.push(800.0 - last.get(0, HealthStatus::Susceptible));
            }
            finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(finals[10]);
        }
        assert!(
            medians[0] < medians[1] && medians[1] < medians[2],
            "medians {medians:?}"
        );
    }

    #[test]
    fn twin_run_is_deterministic() {
        let cfg = tiny_config(MethodChoice::Randomized);
        let a = run_twin(&cfg).unwrap();
        let b = run_twin(&cfg).unwrap();
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn control_run_has_no_analysis_artifacts() {
        let cfg = tiny_config(MethodChoice::None);
        let artifacts = run_twin(&cfg).unwrap();
        assert!(artifacts.diagnostics.innovation_rows.is_empty());
        assert!(artifacts.diagnostics.relabel_rows.is_empty());
        // 16 days x (1 location + the "all" aggregate) x 7 statuses.
        assert_eq!(artifacts.diagnostics.macro_rows.len(), 16 * 2 * 7);
    }

    #[test]
    fn da_run_produces_innovations_and_relabels() {
        let cfg = tiny_config(MethodChoice::Cascade);
        let artifacts = run_twin(&cfg).unwrap();
        assert_eq!(artifacts.diagnostics.innovation_rows.len(), 15 * 2);
        assert_eq!(artifacts.diagnostics.relabel_rows.len(), 15 * 6);
        // Incidence rows: per-location plus the aggregate, every day.
        assert_eq!(artifacts.diagnostics.incidence_rows.len(), 16 * 2);
    }

    #[test]
    fn microscale_shares_initial_configuration() {
        let mut cfg = tiny_config(MethodChoice::Randomized);
        cfg.scenario = Scenario::Microscale;
        let artifacts = run_twin(&cfg).unwrap();
        let day0: Vec<&MatchRow> = artifacts
            .diagnostics
            .match_rows
            .iter()
            .filter(|r| r.day == 0)
            .collect();
        assert_eq!(day0.len(), 4);
        for row in day0 {
            assert_eq!(row.mean, 1.0, "metric {} at day 0", row.metric);
            assert_eq!(row.std, 0.0);
        }
        let snaps = artifacts.snapshots.as_ref().unwrap();
        let recomputed = recompute_matching(snaps).unwrap();
        assert_eq!(recomputed, artifacts.diagnostics.match_rows);
    }

    #[test]
    fn density_matrix_matches_spec_construction() {
        let m = build_density_contact_matrix(&[100.0, 100.0, 100.0]).unwrap();
        for j in 0..3 {
            assert!((m.entry(j, j) - 0.5).abs() < 1e-12);
            for i in 0..3 {
                if i != j {
                    assert!((m.entry(i, j) - 0.25).abs() < 1e-12);
                }
            }
        }
        let single = build_density_contact_matrix(&[500.0]).unwrap();
        assert_eq!(single.entry(0, 0), 1.0);

        use rand::Rng;
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let n = rng.random_range(2..8usize);
            let pops: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..1e6)).collect();
            let m = build_density_contact_matrix(&pops).unwrap();
            for j in 0..n {
                let col_sum: f64 = (0..n).map(|i| m.entry(i, j)).sum();
                assert!((col_sum - 1.0).abs() < 1e-9);
            }
        }
    }
}
