//! Stage-cost accounting, regret and its exact seven-term decomposition.
//!
//! With `K_k = K̂_k` on steps where feedback passes through the breaker and
//! `K_k = 0` otherwise, `s_k = B u_pr_k + w_k` and `H = R + BᵀP*B`:
//!
//! ```text
//! R1 = Σ xᵀ(K_k − K*)ᵀ H (K_k − K*) x
//! R2 = 2 Σ u_prᵀ BᵀP*(A + BK_k) x
//! R3 = 2 Σ wᵀ P*(A + BK_k) x
//! R4 = Σ (sᵀP*s − wᵀP*w)
//! R5 = Σ wᵀP*w − T J*
//! R6 = x_1ᵀP*x_1 − x_{T+1}ᵀP*x_{T+1}
//! R7 = Σ 2 u_prᵀ R u_cb + u_prᵀ R u_pr
//! ```
//!
//! and `R1 + … + R7 = Σ (xᵀQx + uᵀRu) − T J*` holds exactly, so the residual
//! of a logged trial measures logging fidelity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control_math::{CostWeights, RiccatiSolution};
use crate::error::{Error, Result};
use crate::plant::PlantSpec;
use crate::record::TrialRecord;

/// Relative tolerance of the decomposition identity.
pub const DECOMPOSITION_RTOL: f64 = 1e-6;

/// `xᵀQx + uᵀRu`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, cost: &CostWeights) -> f64 {
    x.dot(&(cost.q() * x)) + u.dot(&(cost.r() * u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub cumulative_cost: f64,
    pub steps: u64,
    pub j_star: f64,
}

impl RegretLedger {
    pub fn new(j_star: f64) -> Self {
        Self {
            cumulative_cost: 0.0,
            steps: 0,
            j_star,
        }
    }

    /// Adds the stage cost of `(x, u)` and returns it.
    pub fn accrue(&mut self, x: &DVector<f64>, u: &DVector<f64>, cost: &CostWeights) -> f64 {
        let c = stage_cost(x, u, cost);
        self.accrue_cost(c);
        c
    }

    pub fn accrue_cost(&mut self, c: f64) {
        self.cumulative_cost += c;
        self.steps += 1;
    }

    /// `Σ stage costs − T J*`. May be negative.
    pub fn regret(&self) -> f64 {
        self.cumulative_cost - self.steps as f64 * self.j_star
    }

    /// `R(T) / (T J*)`.
    pub fn relative_average_regret(&self) -> f64 {
        self.regret() / (self.steps as f64 * self.j_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub steps: u64,
    /// `R1 … R7`.
    pub terms: [f64; 7],
    pub total: f64,
    /// Regret from the logged stage costs.
    pub regret: f64,
    /// `|Σ R_i − R(T)|`.
    pub residual: f64,
}

impl DecompositionReport {
    pub fn relative_residual(&self) -> f64 {
        self.residual / (1.0 + self.regret.abs())
    }

    pub fn holds(&self) -> bool {
        self.relative_residual() <= DECOMPOSITION_RTOL
    }
}

/// Decomposition at the full horizon of the log.
pub fn decompose(trial: &TrialRecord, oracle: &RiccatiSolution, truth: &PlantSpec) -> Result<DecompositionReport> {
    let t = trial.len() as u64;
    decompose_at(trial, oracle, truth, &[t]).map(|mut v| v.remove(0))
}

/// Decompositions at each horizon in `checkpoints` (ascending, each in
/// `1..=T`), computed in a single pass over the log.
///
/// When the log carries its gain history, `K_k x_k` is formed from the
/// gains and breaker flags; otherwise `u_cb` stands in for it.
pub fn decompose_at(
    trial: &TrialRecord,
    oracle: &RiccatiSolution,
    truth: &PlantSpec,
    checkpoints: &[u64],
) -> Result<Vec<DecompositionReport>> {
    let (n, m) = (truth.n(), truth.m());
    if trial.n() != n || trial.m() != m {
        return Err(Error::DimensionMismatch(format!(
            "log is {}x{}, plant is {n}x{m}",
            trial.n(),
            trial.m()
        )));
    }
    let t_max = trial.len() as u64;
    if t_max == 0 {
        return Err(Error::IncompleteLog("log has no rows".into()));
    }
    if let Some(&bad) = checkpoints.iter().find(|&&c| c == 0 || c > t_max) {
        return Err(Error::IncompleteLog(format!(
            "checkpoint {bad} outside logged horizon 1..={t_max}"
        )));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::IncompleteLog("checkpoints must be strictly increasing".into()));
    }

    let (a, b) = (truth.sys().a(), truth.sys().b());
    let r = truth.cost().r();
    let p = &oracle.p_star;
    let k_star = &oracle.k_star;
    let h = r + b.transpose() * p * b;
    let x1 = DVector::from_column_slice(trial.row(1).x);
    let x1_term = x1.dot(&(p * &x1));

    let gains = trial.gains();
    let mut gain_idx = 0usize;
    let mut current_gain = DMatrix::zeros(m, n);

    let mut sums = [0.0f64; 7];
    let mut regret_sum = 0.0;
    let mut reports = Vec::with_capacity(checkpoints.len());
    let mut next_cp = checkpoints.iter().peekable();

    for row in trial.rows() {
        let k = row.k;
        let x = DVector::from_column_slice(row.x);
        let u_cb = DVector::from_column_slice(row.u_cb);
        let u_pr = DVector::from_column_slice(row.u_pr);
        let w = DVector::from_column_slice(row.w);

        let feedback = if trial.has_gain_history() {
            while gain_idx < gains.len() && gains[gain_idx].k <= k {
                current_gain.copy_from(&gains[gain_idx].gain);
                gain_idx += 1;
            }
            if row.breaker.is_active() {
                DVector::zeros(m)
            } else {
                &current_gain * &x
            }
        } else {
            u_cb.clone()
        };

        let closed = a * &x + b * &feedback;
        let p_closed = p * &closed;
        let gap = &feedback - k_star * &x;
        let b_pr = b * &u_pr;
        let s = &b_pr + &w;
        let w_p_w = w.dot(&(p * &w));
        let r_pr = r * &u_pr;

        sums[0] += gap.dot(&(&h * &gap));
        sums[1] += 2.0 * b_pr.dot(&p_closed);
        sums[2] += 2.0 * w.dot(&p_closed);
        sums[3] += s.dot(&(p * &s)) - w_p_w;
        sums[4] += w_p_w;
        sums[6] += 2.0 * u_cb.dot(&r_pr) + u_pr.dot(&r_pr);
        regret_sum += row.stage_cost;

        if next_cp.peek().is_some_and(|&&c| c == k) {
            next_cp.next();
            let x_next = trial
                .state(k + 1, truth)
                .ok_or_else(|| Error::IncompleteLog(format!("state x_{} unavailable", k + 1)))?;
            let t = k as f64;
            let mut terms = sums;
            terms[4] -= t * oracle.j_star;
            terms[5] = x1_term - x_next.dot(&(p * &x_next));
            let total: f64 = terms.iter().sum();
            let regret = regret_sum - t * oracle.j_star;
            reports.push(DecompositionReport {
                steps: k,
                terms,
                total,
                regret,
                residual: (total - regret).abs(),
            });
        }
    }
    Ok(reports)
}
