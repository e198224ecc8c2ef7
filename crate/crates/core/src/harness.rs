//! Seeded multi-trial experiments.
//!
//! A trial is a pure function of `(config, trial_index)`: its noise seed is
//! `base_seed ⊕ splitmix64(trial_index)` and every draw is keyed by that
//! seed, so trials can run on any worker in any order. Aggregation is a
//! reduction over trial outputs sorted by index.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control_math::{
    controllability_rank, solve_dare, spectral_radius, CostWeights, RiccatiSolution, SystemMatrices,
};
use crate::controller::{ControllerConfig, ControllerState};
use crate::diagnostics::{
    check_noise_event, detect_t_nocb, detect_t_stab, fit_regret_slope, max_state_norm_ratio, run_monitors,
    tnocb_histogram, HistogramBin, SlopeEstimate, TrialDiagnostics,
};
use crate::error::{Error, Result};
use crate::estimator::estimation_error;
use crate::plant::{draw_process_noise, splitmix64, step, NoiseStream, PlantSpec, PlantSpecJson, PlantState};
use crate::record::{GainRecord, TrialRecord};
use crate::regret::{decompose_at, DecompositionReport, RegretLedger};

const GENERATION_ATTEMPTS: u32 = 100;

/// Where the ground-truth plant comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSource {
    Matrices(PlantSpecJson),
    Generate(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub m: usize,
    pub target_rho: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write `trials/trial_<idx>.csv` for every trial.
    pub write_trials: bool,
    /// Also run the covariance / cross-term / estimation-error monitors.
    pub verbose_monitors: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            write_trials: true,
            verbose_monitors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSource,
    pub horizon: u64,
    pub trials: u32,
    pub base_seed: u64,
    /// Geometric ratio between regret checkpoints.
    pub checkpoint_ratio: f64,
    /// Confidence parameter of the noise and state-norm monitors.
    pub delta: f64,
    #[serde(default)]
    pub controller: ControllerConfig,
    /// Fitting window for the regret slope; defaults to `[T/100, T]`.
    #[serde(default)]
    pub slope_window: Option<(f64, f64)>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Checks every field; error paths are JSON pointers into the config.
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("/horizon", "must be >= 1"));
        }
        if self.trials < 1 {
            return Err(Error::config("/trials", "must be >= 1"));
        }
        if !(self.checkpoint_ratio > 1.0 && self.checkpoint_ratio.is_finite()) {
            return Err(Error::config("/checkpoint_ratio", "must be a finite number > 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::config("/delta", "must lie in (0, 0.5]"));
        }
        if let Some((lo, hi)) = self.slope_window {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::config("/slope_window", "must satisfy 0 < lo < hi"));
            }
        }
        let c = &self.controller;
        if let Some(base) = c.log_base {
            if !(base > 1.0 && base.is_finite()) {
                return Err(Error::config("/controller/log_base", "must be a finite number > 1"));
            }
        }
        if !(c.rank_tol > 0.0 && c.rank_tol < 1.0) {
            return Err(Error::config("/controller/rank_tol", "must lie in (0, 1)"));
        }
        if c.dare_rtol.is_nan() || c.dare_rtol <= 0.0 {
            return Err(Error::config("/controller/dare_rtol", "must be > 0"));
        }
        if c.dare_max_iter < 1 {
            return Err(Error::config("/controller/dare_max_iter", "must be >= 1"));
        }
        match &self.plant {
            PlantSource::Generate(g) => {
                if g.n < 1 {
                    return Err(Error::config("/plant/generate/n", "must be >= 1"));
                }
                if g.m < 1 {
                    return Err(Error::config("/plant/generate/m", "must be >= 1"));
                }
                if !(g.target_rho > 0.0 && g.target_rho < 1.0) {
                    return Err(Error::config("/plant/generate/target_rho", "must lie in (0, 1)"));
                }
            }
            PlantSource::Matrices(spec) => {
                spec.to_spec().map_err(|e| match e {
                    Error::ConfigInvalid { path, message } => {
                        Error::config(format!("/plant/matrices{path}"), message)
                    }
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    pub fn resolve_plant(&self) -> Result<PlantSpec> {
        match &self.plant {
            PlantSource::Matrices(spec) => spec.to_spec(),
            PlantSource::Generate(g) => generate_stand_in_plant(g.n, g.m, g.target_rho, g.seed),
        }
    }

    pub fn slope_window(&self) -> (f64, f64) {
        self.slope_window.unwrap_or_else(|| {
            let t = self.horizon as f64;
            ((t / 100.0).max(1.0), t)
        })
    }

    /// Validates, builds the plant and solves the ground-truth DARE.
    pub fn prepare(&self) -> Result<Experiment> {
        self.validate()?;
        let plant = self.resolve_plant()?;
        let oracle = solve_dare(plant.sys(), plant.cost(), plant.w())?;
        Ok(Experiment {
            checkpoints: checkpoints(self.horizon, self.checkpoint_ratio),
            config: self.clone(),
            plant,
            oracle,
        })
    }
}

/// Random stable plant: dense Gaussian `A` rescaled to spectral radius
/// `target_rho`, unit-variance Gaussian `B`, and `W = Q = I_n`, `R = I_m`.
/// Uncontrollable draws are rejected and redrawn from `seed + 1`, ….
pub fn generate_stand_in_plant(n: usize, m: usize, target_rho: f64, seed: u64) -> Result<PlantSpec> {
    if n < 1 || m < 1 {
        return Err(Error::DimensionMismatch("plant dimensions must be >= 1".into()));
    }
    if !(target_rho > 0.0 && target_rho < 1.0) {
        return Err(Error::config("/target_rho", "must lie in (0, 1)"));
    }
    for attempt in 0..GENERATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&a);
        if rho <= f64::EPSILON {
            continue;
        }
        let a = a * (target_rho / rho);
        let Ok(sys) = SystemMatrices::new(a, b) else {
            continue;
        };
        if controllability_rank(&sys) != n {
            continue;
        }
        return PlantSpec::new(sys, DMatrix::identity(n, n), CostWeights::identity(n, m));
    }
    Err(Error::GenerationFailed {
        attempts: GENERATION_ATTEMPTS,
    })
}

/// Sorted, deduplicated checkpoints: `⌈ratio^j⌉`, the powers of ten, and `T`.
pub fn checkpoints(horizon: u64, ratio: f64) -> Vec<u64> {
    let mut points = vec![horizon];
    let mut j = 0i32;
    loop {
        let c = ratio.powi(j).ceil();
        if c.is_nan() || c > horizon as f64 {
            break;
        }
        points.push(c as u64);
        j += 1;
    }
    let mut decade = 1u64;
    while decade <= horizon {
        points.push(decade);
        decade = match decade.checked_mul(10) {
            Some(d) => d,
            None => break,
        };
    }
    points.sort_unstable();
    points.dedup();
    points
}

pub fn trial_seed(base_seed: u64, trial_index: u32) -> u64 {
    base_seed ^ splitmix64(trial_index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSample {
    pub step: u64,
    pub regret: f64,
    pub relative_regret: f64,
    /// `‖Θ̂ − Θ‖` using every pair absorbed up to and including this step.
    pub estimation_error: f64,
}

/// Everything produced by one completed trial.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub index: u32,
    pub seed: u64,
    pub record: TrialRecord,
    pub ledger: RegretLedger,
    pub diagnostics: TrialDiagnostics,
    pub samples: Vec<CheckpointSample>,
    pub decomposition: Vec<DecompositionReport>,
}

impl TrialRun {
    pub fn max_decomposition_residual(&self) -> f64 {
        self.decomposition
            .iter()
            .map(DecompositionReport::relative_residual)
            .fold(0.0, f64::max)
    }
}

/// A validated config with its plant and ground-truth solution.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub plant: PlantSpec,
    pub oracle: RiccatiSolution,
    pub checkpoints: Vec<u64>,
}

impl Experiment {
    pub fn run_trial(&self, trial_index: u32) -> Result<TrialRun> {
        let cfg = &self.config;
        let plant = &self.plant;
        let (n, m) = (plant.n(), plant.m());
        let seed = trial_seed(cfg.base_seed, trial_index);
        let horizon = cfg.horizon;

        let mut ctrl = ControllerState::new(plant.cost().clone());
        let mut state = PlantState::initial(n);
        let mut ledger = RegretLedger::new(self.oracle.j_star);
        let mut record = TrialRecord::with_capacity(n, m, horizon as usize);
        record.track_gains();
        let mut samples = Vec::with_capacity(self.checkpoints.len());
        let mut next_cp = self.checkpoints.iter().peekable();

        for k in 1..=horizon {
            let stream = NoiseStream::at(seed, k);
            if let Some(update) = ctrl.update_gain(k, &cfg.controller) {
                record.push_gain(GainRecord {
                    k,
                    gain: ctrl.gain().clone(),
                    outcome: update.outcome,
                });
            }
            let input = ctrl.compute_input(k, &state.x, &stream, &cfg.controller);
            let w = draw_process_noise(&stream, plant.w_factor());
            let cost = ledger.accrue(&state.x, &input.u, plant.cost());
            record.push(&state.x, &input, &w, cost);

            let next = step(&state, &input.u, &w, plant)?;
            ctrl.estimator_mut().absorb_step(&state.x, &input.u, &next.x)?;
            state = next;

            if next_cp.peek().is_some_and(|&&c| c == k) {
                next_cp.next();
                samples.push(CheckpointSample {
                    step: k,
                    regret: ledger.regret(),
                    relative_regret: ledger.relative_average_regret(),
                    estimation_error: estimation_error(&ctrl.estimator().estimate(), plant.sys()),
                });
            }
        }
        record.set_final_state(state.x);

        let decomposition = decompose_at(&record, &self.oracle, plant, &self.checkpoints)?;
        let mut diagnostics = TrialDiagnostics {
            t_nocb: detect_t_nocb(&record),
            t_stab: Some(detect_t_stab(&record, &self.oracle, plant, &cfg.controller)?),
            noise_event_holds: check_noise_event(&record, cfg.delta),
            max_state_norm_ratio: max_state_norm_ratio(&record, cfg.delta),
            monitors: None,
        };
        if cfg.output.verbose_monitors {
            let errors: Vec<(u64, f64)> = samples.iter().map(|s| (s.step, s.estimation_error)).collect();
            diagnostics.monitors = Some(run_monitors(&record, &self.oracle, plant, cfg.delta, &errors)?);
        }

        Ok(TrialRun {
            index: trial_index,
            seed,
            record,
            ledger,
            diagnostics,
            samples,
            decomposition,
        })
    }

    /// Runs the listed trials in parallel, handing each completed run to
    /// `sink` on its worker and keeping only its summary.
    pub fn run_trials<F>(&self, indices: &[u32], sink: F) -> Result<Vec<TrialSummary>>
    where
        F: Fn(&TrialRun) -> Result<()> + Sync,
    {
        indices
            .par_iter()
            .map(|&index| match self.run_trial(index) {
                Ok(run) => {
                    sink(&run)?;
                    Ok(TrialSummary::from_run(&run))
                }
                Err(Error::DivergedState { k, norm }) => Ok(TrialSummary::diverged(
                    index,
                    trial_seed(self.config.base_seed, index),
                    k,
                    norm,
                )),
                Err(e) => Err(e),
            })
            .collect()
    }

    /// Runs all configured trials and aggregates them.
    pub fn run(&self) -> Result<ExperimentSummary> {
        self.run_with(|_| Ok(()))
    }

    pub fn run_with<F>(&self, sink: F) -> Result<ExperimentSummary>
    where
        F: Fn(&TrialRun) -> Result<()> + Sync,
    {
        let indices: Vec<u32> = (0..self.config.trials).collect();
        let trials = self.run_trials(&indices, sink)?;
        Ok(self.summarize(trials))
    }

    /// Aggregates trial summaries; the result does not depend on their order.
    pub fn summarize(&self, mut trials: Vec<TrialSummary>) -> ExperimentSummary {
        trials.sort_by_key(|t| t.index);
        let completed: Vec<&TrialSummary> = trials.iter().filter(|t| t.status == TrialStatus::Completed).collect();

        let mut curves = Curves::default();
        for (i, &step) in self.checkpoints.iter().enumerate() {
            let mut values: Vec<f64> = completed.iter().map(|t| t.samples[i].relative_regret).collect();
            if values.is_empty() {
                continue;
            }
            values.sort_by(f64::total_cmp);
            curves.steps.push(step);
            curves.worst.push(*values.last().unwrap());
            curves.median.push(median_sorted(&values));
            curves.mean.push(values.iter().sum::<f64>() / values.len() as f64);
        }

        let window = self.config.slope_window();
        let fit = |series: &[f64]| {
            let curve: Vec<(f64, f64)> = curves.steps.iter().map(|&s| s as f64).zip(series.iter().copied()).collect();
            fit_regret_slope(&curve, window).ok()
        };
        let slopes = Slopes {
            window,
            mean: fit(&curves.mean),
            median: fit(&curves.median),
        };

        let tnocb: Vec<u64> = completed.iter().map(|t| t.diagnostics.as_ref().unwrap().t_nocb.step).collect();
        let tnocb_histogram = tnocb_histogram(&tnocb, self.config.horizon);

        let mut by_final: Vec<&TrialSummary> = completed.clone();
        by_final.sort_by(|a, b| {
            a.final_relative_regret
                .total_cmp(&b.final_relative_regret)
                .then(a.index.cmp(&b.index))
        });
        let worst_trial = by_final.last().map(|t| t.index);
        let median_trial = by_final.get(by_final.len().saturating_sub(1) / 2).map(|t| t.index);

        ExperimentSummary {
            plant: self.plant.to_json(),
            j_star: self.oracle.j_star,
            rho_star: self.oracle.rho_star,
            horizon: self.config.horizon,
            base_seed: self.config.base_seed,
            trial_count: self.config.trials,
            failed_trials: (trials.len() - completed.len()) as u32,
            curves,
            slopes,
            tnocb_histogram,
            worst_trial,
            median_trial,
            trials,
        }
    }
}

fn median_sorted(values: &[f64]) -> f64 {
    let len = values.len();
    if len % 2 == 1 {
        values[len / 2]
    } else {
        0.5 * (values[len / 2 - 1] + values[len / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: u32,
    pub seed: u64,
    pub status: TrialStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<u64>,
    pub final_regret: f64,
    pub final_relative_regret: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<TrialDiagnostics>,
    pub max_decomposition_residual: f64,
    pub samples: Vec<CheckpointSample>,
}

impl TrialSummary {
    pub fn from_run(run: &TrialRun) -> Self {
        Self {
            index: run.index,
            seed: run.seed,
            status: TrialStatus::Completed,
            diverged_at: None,
            final_regret: run.ledger.regret(),
            final_relative_regret: run.ledger.relative_average_regret(),
            diagnostics: Some(run.diagnostics.clone()),
            max_decomposition_residual: run.max_decomposition_residual(),
            samples: run.samples.clone(),
        }
    }

    fn diverged(index: u32, seed: u64, k: u64, norm: f64) -> Self {
        Self {
            index,
            seed,
            status: TrialStatus::Diverged,
            diverged_at: Some(k),
            final_regret: norm,
            final_relative_regret: f64::INFINITY,
            diagnostics: None,
            max_decomposition_residual: 0.0,
            samples: Vec::new(),
        }
    }
}

/// Per-checkpoint statistics of the relative average regret across trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub steps: Vec<u64>,
    pub worst: Vec<f64>,
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slopes {
    pub window: (f64, f64),
    pub mean: Option<SlopeEstimate>,
    pub median: Option<SlopeEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub plant: PlantSpecJson,
    pub j_star: f64,
    pub rho_star: f64,
    pub horizon: u64,
    pub base_seed: u64,
    pub trial_count: u32,
    pub failed_trials: u32,
    pub curves: Curves,
    pub slopes: Slopes,
    pub tnocb_histogram: Vec<HistogramBin>,
    /// Trial with the largest final relative average regret.
    pub worst_trial: Option<u32>,
    pub median_trial: Option<u32>,
    pub trials: Vec<TrialSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_config(horizon: u64, trials: u32) -> ExperimentConfig {
        ExperimentConfig {
            plant: PlantSource::Generate(GeneratorSpec {
                n: 2,
                m: 1,
                target_rho: 0.8,
                seed: 3,
            }),
            horizon,
            trials,
            base_seed: 11,
            checkpoint_ratio: 1.2,
            delta: 0.05,
            controller: ControllerConfig::default(),
            slope_window: None,
            output: OutputConfig::default(),
        }
    }

    #[test]
    fn checkpoint_grid() {
        let cps = checkpoints(100, 1.2);
        assert_eq!(cps.first(), Some(&1));
        assert_eq!(cps.last(), Some(&100));
        assert!(cps.contains(&10));
        assert!(cps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(checkpoints(1, 1.2), vec![1]);
        assert!(checkpoints(100_000, 1.2).contains(&1000));
    }

    #[test]
    fn stand_in_plant_properties() {
        let plant = generate_stand_in_plant(8, 4, 0.95, 17).unwrap();
        assert_abs_diff_eq!(spectral_radius(plant.sys().a()), 0.95, epsilon = 1e-9);
        assert_eq!(controllability_rank(plant.sys()), 8);
        assert_eq!(plant.w(), &DMatrix::identity(8, 8));
        assert_eq!(plant, generate_stand_in_plant(8, 4, 0.95, 17).unwrap());

        let scalar = generate_stand_in_plant(1, 1, 0.6, 5).unwrap();
        assert_abs_diff_eq!(scalar.sys().a()[(0, 0)].abs(), 0.6, epsilon = 1e-15);
        assert!(generate_stand_in_plant(2, 1, 1.0, 5).is_err());
    }

    #[test]
    fn single_step_trial() {
        let exp = small_config(1, 1).prepare().unwrap();
        let run = exp.run_trial(0).unwrap();
        assert_eq!(run.record.len(), 1);
        let row = run.record.row(1);
        assert!(row.x.iter().all(|&v| v == 0.0));
        assert!(row.u_ce.iter().all(|&v| v == 0.0));
        let u = row.u();
        let expected = u.dot(&(exp.plant.cost().r() * &u)) - exp.oracle.j_star;
        assert_abs_diff_eq!(run.ledger.regret(), expected, epsilon = 1e-14);
        assert!(run.decomposition[0].holds());
    }

    #[test]
    fn trials_are_deterministic() {
        let exp = small_config(500, 1).prepare().unwrap();
        let a = exp.run_trial(3).unwrap();
        let b = exp.run_trial(3).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.record, exp.run_trial(4).unwrap().record);
    }

    #[test]
    fn single_trial_curves_coincide() {
        let summary = small_config(200, 1).prepare().unwrap().run().unwrap();
        assert_eq!(summary.curves.worst, summary.curves.median);
        assert_eq!(summary.curves.worst, summary.curves.mean);
    }

    #[test]
    fn summary_is_order_independent() {
        let exp = small_config(300, 5).prepare().unwrap();
        let forward = exp.run_trials(&[0, 1, 2, 3, 4], |_| Ok(())).unwrap();
        let shuffled = exp.run_trials(&[3, 0, 4, 2, 1], |_| Ok(())).unwrap();
        let reversed: Vec<TrialSummary> = forward.iter().rev().cloned().collect();
        let reference = exp.summarize(forward);
        assert_eq!(reference, exp.summarize(shuffled));
        assert_eq!(reference, exp.summarize(reversed));
        for i in 0..reference.curves.steps.len() {
            assert!(reference.curves.worst[i] >= reference.curves.median[i]);
        }
    }

    #[test]
    fn config_validation_paths() {
        let mut cfg = small_config(0, 1);
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid { path, .. }) if path == "/horizon"));
        cfg.horizon = 10;
        cfg.checkpoint_ratio = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid { path, .. }) if path == "/checkpoint_ratio"));
        cfg.checkpoint_ratio = 1.5;
        cfg.plant = PlantSource::Generate(GeneratorSpec {
            n: 2,
            m: 1,
            target_rho: 1.2,
            seed: 0,
        });
        assert!(
            matches!(cfg.validate(), Err(Error::ConfigInvalid { path, .. }) if path == "/plant/generate/target_rho")
        );
    }
}
