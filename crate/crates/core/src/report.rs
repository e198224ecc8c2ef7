//! On-disk experiment outputs.
//!
//! ```text
//! <out>/config.json          validated config (input to `analyze`)
//! <out>/summary.json         ExperimentSummary
//! <out>/curves.csv           T,worst,median,mean of R(T)/(T J*)
//! <out>/tnocb_hist.csv       lo,hi,count (decade bins, hi exclusive)
//! <out>/diagnostics.csv      one row per trial
//! <out>/trials/trial_<i>.csv per-step logs (see `record`)
//! ```
//!
//! All files are deterministic functions of the config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::{ExperimentConfig, ExperimentSummary, TrialRun, TrialStatus};

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const TNOCB_FILE: &str = "tnocb_hist.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const TRIALS_DIR: &str = "trials";

pub fn trial_path(out_dir: &Path, index: u32) -> PathBuf {
    out_dir.join(TRIALS_DIR).join(format!("trial_{index}.csv"))
}

pub fn write_trial(out_dir: &Path, run: &TrialRun) -> Result<()> {
    let file = File::create(trial_path(out_dir, run.index))?;
    run.record.write_csv(BufWriter::new(file))
}

/// Runs the experiment and writes every output file under `out_dir`.
pub fn simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    let experiment = config.prepare()?;
    fs::create_dir_all(out_dir)?;
    if config.output.write_trials {
        fs::create_dir_all(out_dir.join(TRIALS_DIR))?;
    }
    write_json(&out_dir.join(CONFIG_FILE), config)?;
    let summary = if config.output.write_trials {
        experiment.run_with(|run| write_trial(out_dir, run))?
    } else {
        experiment.run()?
    };
    write_summary_files(out_dir, &summary)?;
    Ok(summary)
}

pub fn write_summary_files(out_dir: &Path, summary: &ExperimentSummary) -> Result<()> {
    write_json(&out_dir.join(SUMMARY_FILE), summary)?;
    write_curves(&out_dir.join(CURVES_FILE), summary)?;
    write_tnocb_histogram(&out_dir.join(TNOCB_FILE), summary)?;
    write_diagnostics(&out_dir.join(DIAGNOSTICS_FILE), summary)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_curves(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["T", "worst", "median", "mean"])?;
    let c = &summary.curves;
    for i in 0..c.steps.len() {
        wtr.write_record([
            c.steps[i].to_string(),
            c.worst[i].to_string(),
            c.median[i].to_string(),
            c.mean[i].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_tnocb_histogram(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["lo", "hi", "count"])?;
    for bin in &summary.tnocb_histogram {
        wtr.write_record([bin.lo.to_string(), bin.hi.to_string(), bin.count.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_diagnostics(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "trial",
        "seed",
        "status",
        "t_nocb",
        "t_nocb_censored",
        "t_stab",
        "t_stab_censored",
        "noise_event_holds",
        "max_state_norm_ratio",
        "final_regret",
        "final_relative_regret",
        "max_decomposition_residual",
    ])?;
    for t in &summary.trials {
        let status = match t.status {
            TrialStatus::Completed => "completed",
            TrialStatus::Diverged => "diverged",
        };
        let mut row = vec![t.index.to_string(), t.seed.to_string(), status.to_string()];
        match &t.diagnostics {
            Some(d) => {
                row.push(d.t_nocb.step.to_string());
                row.push(d.t_nocb.censored.to_string());
                match d.t_stab {
                    Some(ts) => {
                        row.push(ts.step.to_string());
                        row.push(ts.censored.to_string());
                    }
                    None => row.extend([String::new(), String::new()]),
                }
                row.push(d.noise_event_holds.to_string());
                row.push(d.max_state_norm_ratio.to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row.push(t.final_regret.to_string());
        row.push(t.final_relative_regret.to_string());
        row.push(t.max_decomposition_residual.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
