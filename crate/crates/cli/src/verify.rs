//! Built-in oracle suite.

use alqr_core::control_math::{dare_residual, DareOptions};
use alqr_core::estimator::estimation_error;
use alqr_core::regret::decompose;
use alqr_core::{
    solve_discrete_lyapunov, stability_margin, CostWeights, Error, EstimatorState, ExperimentConfig, PlantSource,
    SystemMatrices,
};
use alqr_core::plant::PlantSpecJson;
use nalgebra::{dmatrix, dvector, DMatrix};
use serde_json::Value;

use crate::error::{CliError, CliResult, Failure};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Tunable knobs (`rtol`, `max_iter`) of the DARE used by the suite.
pub fn options(overrides: &[(String, Value)]) -> CliResult<DareOptions> {
    let mut opts = DareOptions::default();
    for (key, value) in overrides {
        match key.as_str() {
            "rtol" => {
                opts.rtol = value
                    .as_f64()
                    .filter(|v| *v > 0.0)
                    .ok_or_else(|| Error::config("/rtol", "must be a number > 0"))?;
            }
            "max_iter" => {
                opts.max_iter = value
                    .as_u64()
                    .filter(|v| *v > 0)
                    .ok_or_else(|| Error::config("/max_iter", "must be an integer >= 1"))?
                    as usize;
            }
            other => return Err(Error::config(format!("/{other}"), "unknown verify option").into()),
        }
    }
    Ok(opts)
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn scalar_dare(opts: &DareOptions) -> Vec<Check> {
    let sys = SystemMatrices::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
    let cost = CostWeights::identity(1, 1);
    let root = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
    let gain = -0.5 * root / (1.0 + root);
    match alqr_core::control_math::solve_dare_with(&sys, &cost, &dmatrix![1.0], opts) {
        Ok(sol) => {
            let p = sol.p_star[(0, 0)];
            let k = sol.k_star[(0, 0)];
            let residual = dare_residual(&sys, &cost, &sol.p_star);
            let bound = 1e-9 * (1.0 + sol.p_star.norm());
            vec![
                check(
                    "scalar DARE root",
                    (p - root).abs() <= 1e-10,
                    format!("p = {p:.15}, expected {root:.15}"),
                ),
                check(
                    "scalar DARE gain",
                    (k - gain).abs() <= 1e-10,
                    format!("K = {k:.15}, expected {gain:.15}"),
                ),
                check(
                    "scalar DARE residual",
                    residual <= bound,
                    format!("residual {residual:.3e}, bound {bound:.3e}"),
                ),
            ]
        }
        Err(e) => vec![check("scalar DARE root", false, e.to_string())],
    }
}

fn lyapunov() -> Vec<Check> {
    let mut out = Vec::new();
    let cases: [(&'static str, DMatrix<f64>, DMatrix<f64>); 2] = [
        ("Lyapunov scalar", dmatrix![0.5], dmatrix![4.0 / 3.0]),
        (
            "Lyapunov diagonal",
            dmatrix![0.5, 0.0; 0.0, -0.8],
            dmatrix![4.0 / 3.0, 0.0; 0.0, 1.0 / 0.36],
        ),
    ];
    for (name, a, expected) in cases {
        let q = DMatrix::identity(a.nrows(), a.nrows());
        match solve_discrete_lyapunov(&a, &q) {
            Ok(cert) => {
                let err = (&cert.p0 - &expected).amax();
                out.push(check(name, err <= 1e-12, format!("max entry error {err:.3e}")));
            }
            Err(e) => out.push(check(name, false, e.to_string())),
        }
    }
    let margin = stability_margin(&dmatrix![0.5], &dmatrix![2.0]);
    out.push(check(
        "stability margin scalar",
        (margin - 0.25).abs() <= 1e-15,
        format!("margin {margin}"),
    ));
    out
}

fn decomposition() -> Check {
    let cfg = ExperimentConfig {
        plant: PlantSource::Matrices(PlantSpecJson {
            a: vec![vec![0.6, 0.2], vec![0.0, 0.5]],
            b: vec![vec![1.0], vec![0.5]],
            w: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![1.0]],
        }),
        horizon: 500,
        trials: 1,
        base_seed: 20,
        checkpoint_ratio: 2.0,
        delta: 0.05,
        controller: Default::default(),
        slope_window: None,
        output: Default::default(),
    };
    let outcome = cfg
        .prepare()
        .and_then(|exp| exp.run_trial(0).and_then(|run| decompose(&run.record, &exp.oracle, &exp.plant)));
    match outcome {
        Ok(report) => check(
            "decomposition identity",
            report.holds(),
            format!("relative residual {:.3e} at T=500", report.relative_residual()),
        ),
        Err(e) => check("decomposition identity", false, e.to_string()),
    }
}

fn identification() -> Check {
    let (a, b) = (0.5, 1.0);
    let mut est = EstimatorState::new(1, 1);
    let mut x = 0.0;
    for k in 1..=10 {
        let u = (k as f64 * 1.7).sin() + 0.3;
        let x_next = a * x + b * u;
        est.absorb_step(&dvector![x], &dvector![u], &dvector![x_next])
            .expect("scalar dimensions");
        x = x_next;
    }
    let truth = SystemMatrices::new(dmatrix![a], dmatrix![b]).unwrap();
    let err = estimation_error(&est.estimate(), &truth);
    check("noiseless identification", err <= 1e-10, format!("error {err:.3e}"))
}

pub fn run(opts: &DareOptions) -> Vec<Check> {
    let mut checks = scalar_dare(opts);
    checks.extend(lyapunov());
    checks.push(decomposition());
    checks.push(identification());
    checks
}

pub fn render(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:width$}  {}\n", c.name, c.detail));
    }
    out
}

pub fn outcome(checks: &[Check]) -> CliResult<()> {
    let failures: Vec<Failure> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| Failure {
            location: c.name.to_string(),
            message: c.detail.clone(),
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed {
            failed: failures.len(),
            failures,
        })
    }
}
