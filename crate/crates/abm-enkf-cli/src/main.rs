//! Command-line runner binding experiment configs to assimilation runs.
//!
//! All randomness flows from the seeds in the config file and the explicit
//! `--seed` override; outputs are byte-identical across repeated invocations.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use abm_enkf::dataio::{
    load_config, load_daily_reports, load_population_snapshots, write_kl_curve,
    write_truth_series, InvocationMeta, KlCurveRow, MatchRow,
};
use abm_enkf::experiments::{
    kl_curve, kl_minimizing_lambda, recompute_matching, run_realdata_observed, run_simulate,
    run_twin_observed, ExperimentConfig, MethodChoice,
};
use abm_enkf::Error;

const OUT_DIR_ENV: &str = "ABM_ENKF_OUT";

#[derive(Parser)]
#[command(
    name = "abm-enkf",
    version,
    about = "SEIHRD agent-based model coupled to an ensemble Kalman filter"
)]
struct Cli {
    /// Worker threads for ensemble stepping (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print a plain per-day progress line.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the truth model only and write its daily series.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: $ABM_ENKF_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override truth_seed (and ensemble_seed = seed + 1).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a synthetic twin experiment with assimilation.
    Twin {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the adjustment method (randomized, cascade, none).
        #[arg(long)]
        method: Option<String>,
    },
    /// Assimilate a daily-reports dataset.
    Assimilate {
        #[arg(long)]
        config: PathBuf,
        /// Daily reports CSV (date,location_id,cum_confirmed,cum_deaths).
        #[arg(long)]
        reports: PathBuf,
        /// Census CSV (location_id,name,population).
        #[arg(long)]
        census: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute matching metrics from stored population snapshots.
    Metrics {
        /// Run directory containing populations/.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the geometric-vs-Poisson KL divergence over a lambda grid.
    KlCurve {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        lambda_min: f64,
        #[arg(long)]
        lambda_max: f64,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            std::process::exit(2);
        }
    }
    let verbose = cli.verbose;
    match dispatch(cli.command, verbose) {
        Ok(()) => {}
        Err(DispatchError { error, out_dir }) => {
            eprintln!("error: {error}");
            let code = match &error {
                Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => 2,
                Error::Io { .. } => 2,
                _ => 1,
            };
            if let Some(dir) = out_dir {
                let record = serde_json::json!({
                    "error": error.to_string(),
                    "exit_code": code,
                });
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(
                        dir.join("error.json"),
                        serde_json::to_string_pretty(&record).unwrap(),
                    );
                }
            }
            std::process::exit(code);
        }
    }
}

struct DispatchError {
    error: Error,
    out_dir: Option<PathBuf>,
}

fn resolve_out(out: Option<PathBuf>) -> Result<PathBuf, Error> {
    match out {
        Some(path) => Ok(path),
        None => match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) => Ok(PathBuf::from(dir)),
            None => Err(Error::Config(format!(
                "no output directory: pass --out or set {OUT_DIR_ENV}"
            ))),
        },
    }
}

/// Apply `--seed N`: truth_seed = N, ensemble_seed = N + 1.
fn apply_seed(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(seed) = seed {
        cfg.truth_seed = seed;
        cfg.ensemble_seed = seed.wrapping_add(1);
    }
}

fn progress(verbose: bool, label: &'static str) -> impl FnMut(u32) {
    move |day| {
        if verbose {
            eprintln!("{label}: day {day} done");
        }
    }
}

fn dispatch(command: Command, verbose: bool) -> Result<(), DispatchError> {
    let fail = |error: Error, out_dir: Option<PathBuf>| DispatchError { error, out_dir };

    match command {
        Command::Simulate { config, out, seed } => {
            let out_dir = resolve_out(out).map_err(|e| fail(e, None))?;
            let mut cfg = load_config(&config).map_err(|e| fail(e, Some(out_dir.clone())))?;
            apply_seed(&mut cfg, seed);
            let (mut meta, truth_rows, house_rows, lambda_rows) =
                run_simulate(&cfg, progress(verbose, "simulate"))
                    .map_err(|e| fail(e, Some(out_dir.clone())))?;
            meta.invocation = Some(invocation("simulate", &config, &out_dir, seed, None));
            write_truth_series(&meta, &truth_rows, &house_rows, &lambda_rows, &out_dir)
                .map_err(|e| fail(e, Some(out_dir.clone())))?;
            println!("simulate: wrote {}", out_dir.display());
            Ok(())
        }
        Command::Twin {
            config,
            out,
            seed,
            method,
        } => {
            let out_dir = resolve_out(out).map_err(|e| fail(e, None))?;
            let mut cfg = load_config(&config).map_err(|e| fail(e, Some(out_dir.clone())))?;
            apply_seed(&mut cfg, seed);
            if let Some(m) = &method {
                cfg.method = m
                    .parse::<MethodChoice>()
                    .map_err(|e| fail(e, Some(out_dir.clone())))?;
            }
            let mut artifacts = run_twin_observed(&cfg, progress(verbose, "twin"))
                .map_err(|e| fail(e, Some(out_dir.clone())))?;
            artifacts.diagnostics.meta.invocation =
                Some(invocation("twin", &config, &out_dir, seed, method.clone()));
            artifacts
                .write(&out_dir)
                .map_err(|e| fail(e, Some(out_dir.clone())))?;
            println!("twin: wrote {}", out_dir.display());
            Ok(())
        }
        Command::Assimilate {
            config,
            reports,
            census,
            out,
            seed,
        } => {
            let out_dir = resolve_out(out).map_err(|e| fail(e, None))?;
            let mut cfg = load_config(&config).map_err(|e| fail(e, Some(out_dir.clone())))?;
            apply_seed(&mut cfg, seed);
            let dataset = load_daily_reports(&reports, &census)
                .map_err(|e| fail(e, Some(out_dir.clone())))?;
            for warning in &dataset.warnings {
                eprintln!("warning: {warning}");
            }
            let mut artifacts =
                run_realdata_observed(&cfg, &dataset, progress(verbose, "assimilate"))
                    .map_err(|e| fail(e, Some(out_dir.clone())))?;
            artifacts.diagnostics.meta.invocation =
                Some(invocation("assimilate", &config, &out_dir, seed, None));
            artifacts
                .write(&out_dir)
                .map_err(|e| fail(e, Some(out_dir.clone())))?;
            println!("assimilate: wrote {}", out_dir.display());
            Ok(())
        }
        Command::Metrics { run, out } => {
            let out_dir = resolve_out(out).map_err(|e| fail(e, None))?;
            let snaps =
                load_population_snapshots(&run).map_err(|e| fail(e, Some(out_dir.clone())))?;
            let rows: Vec<MatchRow> =
                recompute_matching(&snaps).map_err(|e| fail(e, Some(out_dir.clone())))?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| fail(Error::io(&out_dir, e), None))?;
            let path = out_dir.join("matches.csv");
            write_matches(&path, &rows).map_err(|e| fail(e, Some(out_dir.clone())))?;
            println!("metrics: wrote {}", path.display());
            Ok(())
        }
        Command::KlCurve {
            p,
            lambda_min,
            lambda_max,
            steps,
            out,
        } => {
            let out_dir = resolve_out(out).map_err(|e| fail(e, None))?;
            let rows: Vec<KlCurveRow> = kl_curve(p, lambda_min, lambda_max, steps)
                .map_err(|e| fail(e, Some(out_dir.clone())))?
                .into_iter()
                .map(|(lambda, kl)| KlCurveRow { lambda, kl })
                .collect();
            write_kl_curve(&rows, &out_dir).map_err(|e| fail(e, Some(out_dir.clone())))?;
            let (best_lambda, best_kl) = kl_minimizing_lambda(p, lambda_min, lambda_max)
                .map_err(|e| fail(e, Some(out_dir.clone())))?;
            println!("kl-curve: minimum at lambda = {best_lambda} (kl = {best_kl})");
            println!("kl-curve: wrote {}", out_dir.join("kl_curve.csv").display());
            Ok(())
        }
    }
}

fn write_matches(path: &Path, rows: &[MatchRow]) -> Result<(), Error> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn invocation(
    subcommand: &str,
    config: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    method: Option<String>,
) -> InvocationMeta {
    InvocationMeta {
        subcommand: subcommand.to_string(),
        config_path: config.display().to_string(),
        out_dir: out_dir.display().to_string(),
        seed_override: seed,
        method_override: method,
        threads: None,
    }
}
