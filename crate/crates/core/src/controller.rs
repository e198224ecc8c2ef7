//! Certainty-equivalent LQR with circuit-breaking and decaying probing noise.
//!
//! At each step `k` the controller
//!
//! 1. optionally refreshes its gain `K̂` from the least-squares estimate
//!    (zero gain if the estimate is not controllable or its DARE fails),
//! 2. forms `u_ce = K̂ x`,
//! 3. passes `u_ce` through the breaker: with the counter `ξ = 0`, an input
//!    with `‖u_ce‖ > M_k = log k` trips the breaker and sets `ξ = ⌊log k⌋`;
//!    while `ξ > 0` the feedback part is zeroed and `ξ` counts down,
//! 4. adds probing noise `u_pr = k^{-1/4} v_k`.
//!
//! The applied input is `u = u_cb + u_pr`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control_math::{
    controllability_rank_with_tol, solve_dare_with, CostWeights, DareOptions, DEFAULT_RANK_TOL,
};
use crate::error::Error;
use crate::estimator::EstimatorState;
use crate::plant::{draw_probe_noise, NoiseStream};

/// Exponent of the probing-noise scale `k^{-1/4}`.
pub const PROBE_EXPONENT: f64 = -0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GainSchedule {
    EveryStep,
    /// Refresh at `k = 2, 4, 8, …`.
    #[default]
    PowersOfTwo,
}

impl GainSchedule {
    pub fn fires(self, k: u64) -> bool {
        match self {
            GainSchedule::EveryStep => true,
            GainSchedule::PowersOfTwo => k >= 2 && k.is_power_of_two(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub schedule: GainSchedule,
    /// Base of the logarithm in `M_k` and `t_k`; `None` is the natural log.
    pub log_base: Option<f64>,
    /// Relative singular-value threshold of the controllability test.
    pub rank_tol: f64,
    pub dare_rtol: f64,
    pub dare_max_iter: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let dare = DareOptions::default();
        Self {
            schedule: GainSchedule::PowersOfTwo,
            log_base: None,
            rank_tol: DEFAULT_RANK_TOL,
            dare_rtol: dare.rtol,
            dare_max_iter: dare.max_iter,
        }
    }
}

impl ControllerConfig {
    fn log(&self, k: u64) -> f64 {
        let ln = (k as f64).ln();
        match self.log_base {
            Some(base) => ln / base.ln(),
            None => ln,
        }
    }

    /// Breaker threshold `M_k`.
    pub fn threshold(&self, k: u64) -> f64 {
        self.log(k)
    }

    /// Dwell time `t_k = ⌊log k⌋`.
    pub fn dwell(&self, k: u64) -> u64 {
        self.log(k).floor().max(0.0) as u64
    }

    pub fn probe_scale(k: u64) -> f64 {
        (k as f64).powf(PROBE_EXPONENT)
    }

    pub fn dare_options(&self) -> DareOptions {
        DareOptions {
            rtol: self.dare_rtol,
            max_iter: self.dare_max_iter,
            ..DareOptions::default()
        }
    }
}

/// Result of a scheduled gain refresh.
#[derive(Debug, Clone, PartialEq)]
pub enum GainOutcome {
    Synthesized,
    Uncontrollable { rank: usize },
    DareFailed(Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainUpdate {
    pub k: u64,
    pub outcome: GainOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputBreakdown {
    pub u_ce: DVector<f64>,
    pub u_cb: DVector<f64>,
    pub u_pr: DVector<f64>,
    /// Raw probing draw `v_k`.
    pub v: DVector<f64>,
    pub u: DVector<f64>,
    /// Feedback suppressed this step (trigger step or dwell step).
    pub breaker_active: bool,
    pub breaker_triggered_now: bool,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    xi: u64,
    gain: DMatrix<f64>,
    last_update_step: Option<u64>,
    estimator: EstimatorState,
    cost: CostWeights,
}

impl ControllerState {
    /// `K̂_0 = 0`, `ξ = 0`, empty estimator.
    pub fn new(cost: CostWeights) -> Self {
        let (n, m) = (cost.q().nrows(), cost.r().nrows());
        Self {
            xi: 0,
            gain: DMatrix::zeros(m, n),
            last_update_step: None,
            estimator: EstimatorState::new(n, m),
            cost,
        }
    }

    pub fn xi(&self) -> u64 {
        self.xi
    }

    pub fn set_xi(&mut self, xi: u64) {
        self.xi = xi;
    }

    /// Gain currently in effect.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn last_update_step(&self) -> Option<u64> {
        self.last_update_step
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.estimator
    }

    pub fn estimator_mut(&mut self) -> &mut EstimatorState {
        &mut self.estimator
    }

    /// Refreshes `K̂` if the schedule fires at `k`; returns what happened.
    pub fn update_gain(&mut self, k: u64, cfg: &ControllerConfig) -> Option<GainUpdate> {
        if !cfg.schedule.fires(k) {
            return None;
        }
        let n = self.cost.q().nrows();
        let estimate = self.estimator.estimate();
        let sys = estimate
            .system()
            .expect("estimate dimensions follow the estimator");
        let rank = controllability_rank_with_tol(&sys, cfg.rank_tol);
        let outcome = if rank < n {
            GainOutcome::Uncontrollable { rank }
        } else {
            let w = DMatrix::identity(n, n);
            match solve_dare_with(&sys, &self.cost, &w, &cfg.dare_options()) {
                Ok(sol) => {
                    self.gain = sol.k_star;
                    GainOutcome::Synthesized
                }
                Err(e) => GainOutcome::DareFailed(e),
            }
        };
        if outcome != GainOutcome::Synthesized {
            self.gain.fill(0.0);
        }
        self.last_update_step = Some(k);
        Some(GainUpdate { k, outcome })
    }

    /// Computes the input at step `k` for state `x`. `stream.counter` must
    /// equal `k`.
    pub fn compute_input(
        &mut self,
        k: u64,
        x: &DVector<f64>,
        stream: &NoiseStream,
        cfg: &ControllerConfig,
    ) -> InputBreakdown {
        debug_assert_eq!(stream.counter, k, "noise stream out of step");
        let m = self.gain.nrows();
        let u_ce = &self.gain * x;

        let (u_cb, breaker_active, breaker_triggered_now) = if self.xi == 0 {
            if u_ce.norm() > cfg.threshold(k) {
                self.xi = cfg.dwell(k);
                (DVector::zeros(m), true, true)
            } else {
                (u_ce.clone(), false, false)
            }
        } else {
            self.xi -= 1;
            (DVector::zeros(m), true, false)
        };

        let v = draw_probe_noise(stream, m);
        let u_pr = &v * ControllerConfig::probe_scale(k);
        let u = &u_cb + &u_pr;
        InputBreakdown {
            u_ce,
            u_cb,
            u_pr,
            v,
            u,
            breaker_active,
            breaker_triggered_now,
        }
    }
}
