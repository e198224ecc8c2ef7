//! Re-checks a `simulate` output directory from its logs alone.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use alqr_core::diagnostics::{check_noise_event, detect_t_nocb, replay_breaker};
use alqr_core::harness::Experiment;
use alqr_core::record::TrialRecord;
use alqr_core::regret::{decompose_at, stage_cost};
use alqr_core::report::{CONFIG_FILE, TRIALS_DIR};
use alqr_core::Error;
use nalgebra::DVector;
use serde::Serialize;

use crate::config;
use crate::error::{CliError, CliResult, Failure};

const STAGE_COST_RTOL: f64 = 1e-9;

/// Per-trial result, printed as one JSON line.
#[derive(Debug, Serialize)]
pub struct TrialAnalysis {
    pub trial: u32,
    pub rows: usize,
    pub t_nocb: u64,
    pub t_nocb_censored: bool,
    pub noise_event_holds: bool,
    pub max_decomposition_residual: f64,
    pub passed: bool,
}

fn trial_files(dir: &Path) -> CliResult<Vec<(u32, PathBuf)>> {
    let trials_dir = dir.join(TRIALS_DIR);
    let entries = fs::read_dir(&trials_dir)
        .map_err(|e| Error::IncompleteLog(format!("{}: {e}", trials_dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(Error::from)?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("trial_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse::<u32>().ok());
        if let Some(index) = index {
            files.push((index, path));
        }
    }
    if files.is_empty() {
        return Err(Error::IncompleteLog(format!("no trial logs in {}", trials_dir.display())).into());
    }
    files.sort();
    Ok(files)
}

fn check_trial(exp: &Experiment, location: &str, record: &TrialRecord, failures: &mut Vec<Failure>) -> f64 {
    let mut fail = |message: String| {
        failures.push(Failure {
            location: location.to_string(),
            message,
        })
    };
    let horizon = exp.config.horizon;
    if record.n() != exp.plant.n() || record.m() != exp.plant.m() {
        fail(format!(
            "log is {}x{}, plant is {}x{}",
            record.n(),
            record.m(),
            exp.plant.n(),
            exp.plant.m()
        ));
        return f64::NAN;
    }
    if record.len() as u64 != horizon {
        fail(format!("{} rows, config horizon is {horizon}", record.len()));
    }

    for row in record.rows() {
        let x = DVector::from_column_slice(row.x);
        let expected = stage_cost(&x, &row.u(), exp.plant.cost());
        if (expected - row.stage_cost).abs() > STAGE_COST_RTOL * (1.0 + expected.abs()) {
            fail(format!(
                "row {}: stage_cost {} disagrees with recomputed {expected}",
                row.k, row.stage_cost
            ));
        }
    }

    if let Err(v) = replay_breaker(record, &exp.config.controller) {
        fail(format!("row {}: {}", v.k, v.reason));
    }

    let len = record.len() as u64;
    let points: Vec<u64> = exp.checkpoints.iter().copied().filter(|&c| c <= len).collect();
    match decompose_at(record, &exp.oracle, &exp.plant, &points) {
        Ok(reports) => {
            let mut worst = 0.0f64;
            for r in &reports {
                worst = worst.max(r.relative_residual());
                if !r.holds() {
                    fail(format!(
                        "decomposition residual {:e} at T={} exceeds tolerance",
                        r.relative_residual(),
                        r.steps
                    ));
                }
            }
            worst
        }
        Err(e) => {
            fail(e.to_string());
            f64::NAN
        }
    }
}

/// Runs every check; returns the per-trial results when all pass.
pub fn analyze(dir: &Path) -> CliResult<Vec<TrialAnalysis>> {
    let cfg = config::from_value(config::read_value(&dir.join(CONFIG_FILE))?)?;
    let exp = cfg.prepare()?;
    let mut failures = Vec::new();
    let mut results = Vec::new();
    for (index, path) in trial_files(dir)? {
        let location = format!("{TRIALS_DIR}/trial_{index}.csv");
        let file = File::open(&path).map_err(Error::from)?;
        let record = match TrialRecord::read_csv(BufReader::new(file)) {
            Ok(r) => r,
            Err(e) => {
                failures.push(Failure {
                    location,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let before = failures.len();
        let residual = check_trial(&exp, &location, &record, &mut failures);
        let t_nocb = detect_t_nocb(&record);
        results.push(TrialAnalysis {
            trial: index,
            rows: record.len(),
            t_nocb: t_nocb.step,
            t_nocb_censored: t_nocb.censored,
            noise_event_holds: check_noise_event(&record, cfg.delta),
            max_decomposition_residual: residual,
            passed: failures.len() == before,
        });
    }
    if failures.is_empty() {
        Ok(results)
    } else {
        Err(CliError::ChecksFailed {
            failed: failures.len(),
            failures,
        })
    }
}
