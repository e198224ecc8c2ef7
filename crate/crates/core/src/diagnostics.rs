//! Post-hoc scans of completed trial logs.
//!
//! Everything here reads a finished [`TrialRecord`]; nothing runs inside the
//! simulation loop. Random times are right-censored: when their defining
//! condition still fails at the horizon, the reported step is `T + 1` with
//! `censored = true`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::control_math::{solve_discrete_lyapunov, stability_margin, RiccatiSolution};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::plant::PlantSpec;
use crate::record::{BreakerFlag, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensoredTime {
    pub step: u64,
    pub censored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub cov_event_holds: bool,
    pub cross_event_holds: bool,
    /// `None` when no sampled step reaches the burn-in `k0`.
    pub est_event_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    pub t_nocb: CensoredTime,
    /// Requires the gain history, so it is absent for logs read from CSV.
    pub t_stab: Option<CensoredTime>,
    pub noise_event_holds: bool,
    pub max_state_norm_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitors: Option<MonitorReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
    /// Points in the window dropped for being non-positive.
    pub excluded: usize,
}

/// One past the last step with the breaker engaged (`1` if never).
pub fn detect_t_nocb(trial: &TrialRecord) -> CensoredTime {
    let t = trial.len() as u64;
    match trial.breaker_flags().iter().rposition(|f| f.is_active()) {
        Some(i) => {
            let last = i as u64 + 1;
            CensoredTime {
                step: last + 1,
                censored: last == t,
            }
        }
        None => CensoredTime {
            step: 1,
            censored: false,
        },
    }
}

/// Smallest `T` such that for every logged `k ≥ T` both
/// `margin(A + B K̂_k, P*) < ρ` and `margin(A^{t_k}, P*) < ρ`, with
/// `ρ = (1 + ρ*) / 2`.
pub fn detect_t_stab(
    trial: &TrialRecord,
    oracle: &RiccatiSolution,
    truth: &PlantSpec,
    cfg: &ControllerConfig,
) -> Result<CensoredTime> {
    if !trial.has_gain_history() {
        return Err(Error::IncompleteLog("log has no gain history".into()));
    }
    let rho = 0.5 * (1.0 + oracle.rho_star);
    let t = trial.len() as u64;
    let a = truth.sys().a();
    let p = &oracle.p_star;

    let gains = trial.gains();
    let mut gain_idx = 0usize;
    let mut gain_ok = stability_margin(a, p) < rho;

    let mut dwell = u64::MAX;
    let mut power_ok = false;

    let mut last_bad = None;
    for k in 1..=t {
        let mut changed = false;
        while gain_idx < gains.len() && gains[gain_idx].k <= k {
            gain_idx += 1;
            changed = true;
        }
        if changed {
            let gain = &gains[gain_idx - 1].gain;
            gain_ok = stability_margin(&truth.sys().closed_loop(gain), p) < rho;
        }
        let t_k = cfg.dwell(k);
        if t_k != dwell {
            dwell = t_k;
            power_ok = stability_margin(&matrix_power(a, t_k), p) < rho;
        }
        if !(gain_ok && power_ok) {
            last_bad = Some(k);
        }
    }
    Ok(match last_bad {
        Some(k) => CensoredTime {
            step: k + 1,
            censored: k == t,
        },
        None => CensoredTime {
            step: 1,
            censored: false,
        },
    })
}

pub fn matrix_power(a: &DMatrix<f64>, e: u64) -> DMatrix<f64> {
    let mut result = DMatrix::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    let mut e = e;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    result
}

/// `2 √(n+1) √(log(k/δ))`.
pub fn noise_bound(n: usize, k: u64, delta: f64) -> f64 {
    2.0 * ((n + 1) as f64).sqrt() * ((k as f64) / delta).ln().sqrt()
}

/// `v_k` recovered from the logged probe `u_pr = k^{-1/4} v_k`.
fn probe_draw(u_pr: &[f64], k: u64) -> DVector<f64> {
    DVector::from_column_slice(u_pr) * (k as f64).powf(0.25)
}

/// Whether `max(‖w_k‖, ‖v_k‖) ≤ 2√(n+1)√(log(k/δ))` at every logged step.
pub fn check_noise_event(trial: &TrialRecord, delta: f64) -> bool {
    let n = trial.n();
    trial.rows().all(|row| {
        let bound = noise_bound(n, row.k, delta);
        let w = row.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w <= bound && probe_draw(row.u_pr, row.k).norm() <= bound
    })
}

/// `max_k ‖x_k‖ / log(k/δ)`.
pub fn max_state_norm_ratio(trial: &TrialRecord, delta: f64) -> f64 {
    trial
        .rows()
        .map(|row| {
            let norm = row.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            norm / ((row.k as f64) / delta).ln()
        })
        .fold(0.0, f64::max)
}

/// First step at which the log disagrees with the breaker rules.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakerViolation {
    pub k: u64,
    pub reason: String,
}

/// Replays the breaker counter from the logged `u_ce` and checks every flag
/// and every `u_cb` (`= u_ce` when passing, `= 0` when suppressed).
pub fn replay_breaker(trial: &TrialRecord, cfg: &ControllerConfig) -> std::result::Result<(), BreakerViolation> {
    let mut xi = 0u64;
    for row in trial.rows() {
        let k = row.k;
        let expected = if xi == 0 {
            let norm = row.u_ce.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > cfg.threshold(k) {
                xi = cfg.dwell(k);
                BreakerFlag::Triggered
            } else {
                BreakerFlag::Inactive
            }
        } else {
            xi -= 1;
            BreakerFlag::Dwell
        };
        if row.breaker != expected {
            return Err(BreakerViolation {
                k,
                reason: format!("breaker flag {:?}, replay expects {:?}", row.breaker, expected),
            });
        }
        let consistent = if expected.is_active() {
            row.u_cb.iter().all(|&v| v == 0.0)
        } else {
            row.u_cb == row.u_ce
        };
        if !consistent {
            return Err(BreakerViolation {
                k,
                reason: format!("u_cb inconsistent with breaker state {expected:?}"),
            });
        }
    }
    Ok(())
}

/// Least-squares line through `(ln T, ln value)` for curve points with
/// `T` in the closed window. Non-positive values are excluded and counted.
pub fn fit_regret_slope(curve: &[(f64, f64)], window: (f64, f64)) -> Result<SlopeEstimate> {
    let in_window: Vec<(f64, f64)> = curve
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .collect();
    let usable: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|&&(t, v)| t > 0.0 && v > 0.0 && v.is_finite())
        .map(|&(t, v)| (t.ln(), v.ln()))
        .collect();
    let excluded = in_window.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let count = usable.len() as f64;
    let mean_x = usable.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = usable.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::EmptyWindow);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(SlopeEstimate {
        slope,
        intercept,
        window,
        r_squared,
        points: usable.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub lo: u64,
    /// Exclusive upper edge.
    pub hi: u64,
    pub count: u64,
}

/// Decade bins `[1,10), [10,100), …` covering `1..=T+1`. The last bin runs
/// from the largest decade below `T` to `T + 2`, so censored values land in it.
pub fn log_bins(horizon: u64) -> Vec<(u64, u64)> {
    let top = horizon + 2;
    let mut edges = vec![1u64];
    let mut edge = 10u64;
    while edge < horizon {
        edges.push(edge);
        edge = edge.saturating_mul(10);
    }
    edges.push(top);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

pub fn tnocb_histogram(values: &[u64], horizon: u64) -> Vec<HistogramBin> {
    let mut bins: Vec<HistogramBin> = log_bins(horizon)
        .into_iter()
        .map(|(lo, hi)| HistogramBin { lo, hi, count: 0 })
        .collect();
    for &v in values {
        if let Some(bin) = bins.iter_mut().find(|b| v >= b.lo && v < b.hi) {
            bin.count += 1;
        }
    }
    bins
}

/// Constants of the state-norm bound.
pub fn state_bound_constant(truth: &PlantSpec) -> Result<f64> {
    let n = truth.n() as f64;
    let cert = solve_discrete_lyapunov(truth.sys().a(), truth.cost().q())?;
    let p0_norm = spectral_norm(&cert.p0);
    let p0_inv = cert
        .p0
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("P0"))?;
    let b_norm = spectral_norm(truth.sys().b());
    Ok((b_norm + 1.0) * (2.0 * (n + 1.0).sqrt() + 1.0) * p0_norm * spectral_norm(&p0_inv)
        / (1.0 - cert.rho0.sqrt()))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Scans of the covariance, cross-term and estimation-error events.
///
/// `estimation_errors` holds `(k, ‖Θ̂_k − Θ‖)` samples.
pub fn run_monitors(
    trial: &TrialRecord,
    oracle: &RiccatiSolution,
    truth: &PlantSpec,
    delta: f64,
    estimation_errors: &[(u64, f64)],
) -> Result<MonitorReport> {
    let n = truth.n();
    let nf = n as f64;
    let (a, b) = (truth.sys().a(), truth.sys().b());

    let mut cov_sum = DMatrix::<f64>::zeros(n, n);
    let identity = DMatrix::<f64>::identity(n, n);
    let mut cov_event_holds = true;

    let c_x = state_bound_constant(truth)?;
    let c_cross = 4.0 * (nf + 1.0).sqrt() * spectral_norm(&oracle.p_star) * (spectral_norm(a) * c_x + spectral_norm(b));
    let mut cross_sum = 0.0;
    let mut cross_event_holds = true;

    for row in trial.rows() {
        let k = row.k as f64;
        let w = DVector::from_column_slice(row.w);
        cov_sum += &w * w.transpose() - &identity;
        let cov_norm = SymmetricEigen::new(cov_sum.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if cov_norm > 7.0 * nf * k.sqrt() * (8.0 * nf * nf * k / delta).ln() {
            cov_event_holds = false;
        }

        let x = DVector::from_column_slice(row.x);
        let u_cb = DVector::from_column_slice(row.u_cb);
        cross_sum += w.dot(&(&oracle.p_star * (a * &x + b * &u_cb)));
        if cross_sum.abs() > c_cross * k.sqrt() * (k / delta).ln().powi(2) {
            cross_event_holds = false;
        }
    }

    let m = truth.m() as f64;
    let k0 = (600.0 * (m + nf) * (1.0 / delta).ln() + 5400.0).ceil() as u64;
    let c_theta = (3200.0 * nf / 9.0) * (5.0 * nf / 2.0 + 2.0);
    let relevant: Vec<&(u64, f64)> = estimation_errors.iter().filter(|(k, _)| *k >= k0).collect();
    let est_event_holds = if relevant.is_empty() {
        None
    } else {
        Some(relevant.iter().all(|&&(k, err)| {
            let k = k as f64;
            err * err <= c_theta * k.powf(-0.5) * (k / delta).ln()
        }))
    };

    Ok(MonitorReport {
        cov_event_holds,
        cross_event_holds,
        est_event_holds,
    })
}
