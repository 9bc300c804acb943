//! Dataset ingestion, configuration parsing, and diagnostics emission.
//!
//! All tabular I/O is CSV (RFC-4180 subset, UTF-8, header row mandatory) with
//! locale-independent `.` decimal formatting; experiment definitions are TOML.
//! Every output directory gets a `run_meta.toml` stamped with the schema
//! version and the fully resolved configuration echo.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::abm::{Agent, AgentPopulation, HealthStatus, House};
use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;

/// One location of a daily-report dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationInfo {
    pub id: u32,
    pub name: String,
    pub population: f64,
}

/// Ingested per-location cumulative confirmed/death series.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyReportDataset {
    /// Sorted by id; the position in this vector is the location index used
    /// everywhere else.
    pub locations: Vec<LocationInfo>,
    /// Strictly increasing; gaps are allowed and handled as forecast-only days.
    pub days: Vec<NaiveDate>,
    /// `[day][location]`
    pub cumulative_confirmed: Vec<Vec<f64>>,
    pub cumulative_deaths: Vec<Vec<f64>>,
    /// Non-fatal findings (e.g. cumulative series corrections).
    pub warnings: Vec<String>,
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    value: &str,
) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {field} from '{value}'"),
    })
}

/// Load a census CSV with header `location_id,name,population`.
pub fn load_census(path: &Path) -> Result<Vec<LocationInfo>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["location_id", "name", "population"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Validation(format!(
            "{}: header is {:?}, expected {:?}",
            path.display(),
            headers,
            expected
        )));
    }
    let mut locations = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let id: u32 = parse_field(path, line, "location_id", &record[0])?;
        let population: f64 = parse_field(path, line, "population", &record[2])?;
        if population <= 0.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("population {population} must be positive"),
            });
        }
        locations.push(LocationInfo {
            id,
            name: record[1].to_string(),
            population,
        });
    }
    if locations.is_empty() {
        return Err(Error::Validation(format!(
            "{}: census has no locations",
            path.display()
        )));
    }
    locations.sort_by_key(|l| l.id);
    for (idx, loc) in locations.iter().enumerate() {
        if loc.id as usize != idx {
            return Err(Error::Validation(format!(
                "census location ids must be contiguous from 0; found {} at position {idx}",
                loc.id
            )));
        }
    }
    Ok(locations)
}

/// Load a daily-report CSV with header `date,location_id,cum_confirmed,cum_deaths`
/// plus its companion census file.
///
/// Duplicate (date, location) rows and backward-running dates are rejected;
/// non-monotone cumulative values are carried through with a warning, since
/// real data contains corrections.
pub fn load_daily_reports(reports: &Path, census: &Path) -> Result<DailyReportDataset> {
    let locations = load_census(census)?;
    let n_locations = locations.len();

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(reports)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", reports.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("{}: {e}", reports.display())))?
        .clone();
    let expected = ["date", "location_id", "cum_confirmed", "cum_deaths"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Validation(format!(
            "{}: header is {:?}, expected {:?}",
            reports.display(),
            headers,
            expected
        )));
    }

    struct Row {
        line: usize,
        date: NaiveDate,
        location: usize,
        confirmed: f64,
        deaths: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut date_order_offenders: Vec<usize> = Vec::new();
    let mut last_date: Option<NaiveDate> = None;
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::Validation(format!("{}: {e}", reports.display())))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Parse {
                path: reports.to_path_buf(),
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d").map_err(|_| {
            Error::Parse {
                path: reports.to_path_buf(),
                line,
                message: format!("cannot parse date from '{}'", &record[0]),
            }
        })?;
        let location: u32 = parse_field(reports, line, "location_id", &record[1])?;
        if location as usize >= n_locations {
            return Err(Error::Parse {
                path: reports.to_path_buf(),
                line,
                message: format!("location_id {location} not in census (0..{n_locations})"),
            });
        }
        let confirmed: f64 = parse_field(reports, line, "cum_confirmed", &record[2])?;
        let deaths: f64 = parse_field(reports, line, "cum_deaths", &record[3])?;
        if confirmed < 0.0 || deaths < 0.0 {
            return Err(Error::Parse {
                path: reports.to_path_buf(),
                line,
                message: format!("negative count (confirmed {confirmed}, deaths {deaths})"),
            });
        }
        if let Some(prev) = last_date {
            if date < prev {
                date_order_offenders.push(line);
            }
        }
        last_date = Some(date);
        rows.push(Row {
            line,
            date,
            location: location as usize,
            confirmed,
            deaths,
        });
    }
    if !date_order_offenders.is_empty() {
        return Err(Error::Validation(format!(
            "{}: dates run backwards at lines {:?}",
            reports.display(),
            date_order_offenders
        )));
    }

    let mut days: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    days.dedup();
    let day_index: std::collections::HashMap<NaiveDate, usize> =
        days.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    let mut confirmed = vec![vec![f64::NAN; n_locations]; days.len()];
    let mut deaths = vec![vec![f64::NAN; n_locations]; days.len()];
    for row in &rows {
        let d = day_index[&row.date];
        if !confirmed[d][row.location].is_nan() {
            return Err(Error::Validation(format!(
                "{}: duplicate row for date {} location {} at line {}",
                reports.display(),
                row.date,
                row.location,
                row.line
            )));
        }
        confirmed[d][row.location] = row.confirmed;
        deaths[d][row.location] = row.deaths;
    }
    for (d, day) in days.iter().enumerate() {
        for loc in 0..n_locations {
            if confirmed[d][loc].is_nan() {
                return Err(Error::Validation(format!(
                    "{}: date {day} is missing location {loc}",
                    reports.display()
                )));
            }
        }
    }

    let mut warnings = Vec::new();
    for loc in 0..n_locations {
        for d in 1..days.len() {
            if confirmed[d][loc] < confirmed[d - 1][loc] {
                warnings.push(format!(
                    "cum_confirmed decreases at {} location {loc} ({} -> {})",
                    days[d],
                    confirmed[d - 1][loc],
                    confirmed[d][loc]
                ));
            }
            if deaths[d][loc] < deaths[d - 1][loc] {
                warnings.push(format!(
                    "cum_deaths decreases at {} location {loc} ({} -> {})",
                    days[d],
                    deaths[d - 1][loc],
                    deaths[d][loc]
                ));
            }
        }
    }

    Ok(DailyReportDataset {
        locations,
        days,
        cumulative_confirmed: confirmed,
        cumulative_deaths: deaths,
        warnings,
    })
}

/// Parse and validate an experiment config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Diagnostics schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub day: u32,
    /// Location index, or "all" for the sum over locations.
    pub location: String,
    pub status: String,
    pub mean: f64,
    pub std: f64,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub day: u32,
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub day: u32,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub day: u32,
    /// Location index, or "all" for the city-wide aggregate.
    pub location: String,
    pub new_cases_mean: f64,
    pub new_cases_std: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationRow {
    pub day: u32,
    pub row: u32,
    pub kind: String,
    pub location: Option<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelRow {
    pub day: u32,
    pub member: u32,
    pub relabels: u32,
}

/// One truth-run count (emitted by plain simulation runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSeriesRow {
    pub day: u32,
    pub location: u32,
    pub status: String,
    pub count: f64,
}

/// Infected share per house size on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseShareRow {
    pub day: u32,
    pub size: u32,
    pub share: f64,
}

/// One contact-rate value (index is the location for per-location rates, 0
/// for a shared rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub day: u32,
    pub index: u32,
    pub value: f64,
}

/// CLI invocation details echoed into `run_meta.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvocationMeta {
    pub subcommand: String,
    pub config_path: String,
    pub out_dir: String,
    pub seed_override: Option<u64>,
    pub method_override: Option<String>,
    pub threads: Option<usize>,
}

/// Run metadata: schema version, seeds, resolved values, and the full config
/// echo. Serialized as `run_meta.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: String,
    pub scenario: String,
    pub method: String,
    pub truth_seed: u64,
    pub ensemble_seed: u64,
    pub days_effective: u32,
    pub kappa_confirmed: f64,
    pub kappa_deaths: f64,
    pub positivity_tested: u32,
    pub location_weights: Vec<f64>,
    pub initial_exposed: Vec<u32>,
    /// Simulation days with no usable observation (forecast-only).
    pub gap_days: Vec<u32>,
    pub dataset_warnings: Vec<String>,
    pub invocation: Option<InvocationMeta>,
    pub config: ExperimentConfig,
}

/// Per-day records of one run, accumulated in memory and written as CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics {
    pub meta: RunMeta,
    pub macro_rows: Vec<MacroRow>,
    pub param_rows: Vec<ParamRow>,
    pub match_rows: Vec<MatchRow>,
    pub incidence_rows: Vec<IncidenceRow>,
    pub innovation_rows: Vec<InnovationRow>,
    pub relabel_rows: Vec<RelabelRow>,
}

impl RunDiagnostics {
    pub fn new(meta: RunMeta) -> Self {
        RunDiagnostics {
            meta,
            macro_rows: Vec::new(),
            param_rows: Vec::new(),
            match_rows: Vec::new(),
            incidence_rows: Vec::new(),
            innovation_rows: Vec::new(),
            relabel_rows: Vec::new(),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Generic CSV reader for the schemas in this module.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Validation(format!("{}: {e}", path.display()))))
        .collect()
}

/// Write every diagnostics file into `out_dir` (created if absent).
pub fn write_diagnostics(diag: &RunDiagnostics, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(&out_dir.join("macro_series.csv"), &diag.macro_rows)?;
    write_csv(&out_dir.join("params.csv"), &diag.param_rows)?;
    write_csv(&out_dir.join("matches.csv"), &diag.match_rows)?;
    write_csv(&out_dir.join("incidence.csv"), &diag.incidence_rows)?;
    write_csv(&out_dir.join("innovations.csv"), &diag.innovation_rows)?;
    write_csv(&out_dir.join("relabels.csv"), &diag.relabel_rows)?;
    let meta_path = out_dir.join("run_meta.toml");
    let text = toml::to_string(&diag.meta)
        .map_err(|e| Error::Validation(format!("cannot serialize run meta: {e}")))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// Write the files of a plain truth run: the count series, infected shares
/// per house size, the contact-rate series, and run metadata.
pub fn write_truth_series(
    meta: &RunMeta,
    truth_rows: &[TruthSeriesRow],
    house_rows: &[HouseShareRow],
    lambda_rows: &[LambdaRow],
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(&out_dir.join("truth_series.csv"), truth_rows)?;
    write_csv(&out_dir.join("house_size_infections.csv"), house_rows)?;
    write_csv(&out_dir.join("lambda_series.csv"), lambda_rows)?;
    let meta_path = out_dir.join("run_meta.toml");
    let text = toml::to_string(meta)
        .map_err(|e| Error::Validation(format!("cannot serialize run meta: {e}")))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// One point of a KL calibration curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlCurveRow {
    pub lambda: f64,
    pub kl: f64,
}

pub fn write_kl_curve(rows: &[KlCurveRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(&out_dir.join("kl_curve.csv"), rows)
}

// ---------------------------------------------------------------------------
// Population snapshots (for matching-metric recomputation)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRow {
    pub agent_id: u32,
    pub house_id: u32,
    pub location: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthStatusRow {
    pub day: u32,
    /// One status code per agent, in agent order.
    pub statuses: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberStatusRow {
    pub member: u32,
    pub day: u32,
    pub statuses: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub schema_version: String,
    pub n_locations: u32,
    pub asymptomatic: bool,
    pub n_agents: u32,
    pub days: u32,
    pub n_members: u32,
}

/// Compact per-day population snapshots: the fixed layout plus one status
/// string per (member, day).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSnapshots {
    pub meta: SnapshotMeta,
    pub layout: Vec<LayoutRow>,
    pub truth: Vec<TruthStatusRow>,
    pub members: Vec<MemberStatusRow>,
}

/// Encode one population as a status string, in agent order.
pub fn status_string(pop: &AgentPopulation) -> String {
    pop.agents().iter().map(|a| a.status.code()).collect()
}

pub fn layout_rows(pop: &AgentPopulation) -> Vec<LayoutRow> {
    pop.agents()
        .iter()
        .enumerate()
        .map(|(id, a)| LayoutRow {
            agent_id: id as u32,
            house_id: a.house_id,
            location: a.location,
        })
        .collect()
}

/// Rebuild a population (statuses only; counters zeroed) from a snapshot.
pub fn snapshot_population(
    layout: &[LayoutRow],
    statuses: &str,
    n_locations: usize,
    asymptomatic: bool,
) -> Result<AgentPopulation> {
    if statuses.chars().count() != layout.len() {
        return Err(Error::Validation(format!(
            "snapshot has {} statuses for {} agents",
            statuses.chars().count(),
            layout.len()
        )));
    }
    let n_houses = layout.iter().map(|r| r.house_id).max().map_or(0, |m| m + 1);
    let mut houses: Vec<House> = (0..n_houses)
        .map(|_| House {
            location: 0,
            members: Vec::new(),
        })
        .collect();
    let mut agents = Vec::with_capacity(layout.len());
    for (row, code) in layout.iter().zip(statuses.chars()) {
        let status = HealthStatus::from_code(code).ok_or_else(|| {
            Error::Validation(format!("unknown status code '{code}' in snapshot"))
        })?;
        agents.push(Agent {
            status,
            house_id: row.house_id,
            location: row.location,
            remaining_days: 0.0,
            days_in_status: 0,
            risky_contacts: 0,
        });
        let house = &mut houses[row.house_id as usize];
        house.location = row.location;
        house.members.push(row.agent_id);
    }
    Ok(AgentPopulation::from_parts(
        agents,
        houses,
        n_locations,
        asymptomatic,
    ))
}

pub fn write_population_snapshots(snaps: &PopulationSnapshots, out_dir: &Path) -> Result<()> {
    let dir = out_dir.join("populations");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_csv(&dir.join("layout.csv"), &snaps.layout)?;
    write_csv(&dir.join("truth_status.csv"), &snaps.truth)?;
    write_csv(&dir.join("member_status.csv"), &snaps.members)?;
    let meta_path = dir.join("snapshots_meta.toml");
    let text = toml::to_string(&snaps.meta)
        .map_err(|e| Error::Validation(format!("cannot serialize snapshot meta: {e}")))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

pub fn load_population_snapshots(run_dir: &Path) -> Result<PopulationSnapshots> {
    let dir = run_dir.join("populations");
    let meta_path = dir.join("snapshots_meta.toml");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SnapshotMeta = toml::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", meta_path.display())))?;
    Ok(PopulationSnapshots {
        meta,
        layout: read_csv(&dir.join("layout.csv"))?,
        truth: read_csv(&dir.join("truth_status.csv"))?,
        members: read_csv(&dir.join("member_status.csv"))?,
    })
}
