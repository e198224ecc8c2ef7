//! Exact LQR mathematics shared by the ground-truth oracle and the adaptive
//! controller.
//!
//! Conventions: the plant is `x' = A x + B u + w` with stage cost
//! `xᵀQx + uᵀRu`. Feedback gains are applied as `u = K x`, so the optimal
//! gain carries the minus sign:
//!
//! ```text
//! P* = AᵀP*A − AᵀP*B (R + BᵀP*B)⁻¹ BᵀP*A + Q
//! K* = −(R + BᵀP*B)⁻¹ BᵀP*A
//! J* = tr(W P*)
//! ```
//!
//! Contraction factors (`ρ0`, `ρ*`) are generalized eigenvalues of the pair
//! `(MᵀPM, P)`, inflated by [`RHO_INFLATION`] so that the strict inequality
//! `MᵀPM ≺ ρP` holds numerically.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative Frobenius tolerance used to accept a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Minimum eigenvalue, relative to `max(1, λ_max)`, for positive definiteness.
pub const PD_TOL: f64 = 1e-12;
/// Multiplicative inflation applied to extracted contraction factors.
pub const RHO_INFLATION: f64 = 1.0 + 1e-9;
/// Default relative singular-value threshold (scaled by `n`) for the
/// controllability rank test.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Schur-stability margin required by the Lyapunov solver.
pub const STABILITY_MARGIN_TOL: f64 = 1e-12;

const LYAPUNOV_MAX_DOUBLINGS: usize = 100;
const LYAPUNOV_RESIDUAL_RTOL: f64 = 1e-9;

/// Ground-truth or estimated dynamics `(A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !all_finite(&a) {
            return Err(Error::NonFinite("A"));
        }
        if !all_finite(&b) {
            return Err(Error::NonFinite("B"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `Θ = [A B]`, an `n × (n+m)` matrix.
    pub fn theta(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut theta = DMatrix::zeros(n, n + m);
        theta.view_mut((0, 0), (n, n)).copy_from(&self.a);
        theta.view_mut((0, n), (n, m)).copy_from(&self.b);
        theta
    }

    /// `A + B K`.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * gain
    }
}

/// Stage-cost weights `Q ≻ 0` (n×n) and `R ≻ 0` (m×m).
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_spd(&q, "Q")?;
        check_spd(&r, "R")?;
        Ok(Self { q, r })
    }

    /// `Q = I_n`, `R = I_m`.
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(&self.q * alpha, &self.r * alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p0: DMatrix<f64>,
    pub rho0: f64,
}

/// Stabilizing DARE solution together with the derived optimal gain,
/// contraction factor and average cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p_star: DMatrix<f64>,
    pub k_star: DMatrix<f64>,
    pub rho_star: f64,
    pub j_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    /// Stop once the largest entry of `P⁺ − P` is at most `rtol` times the largest entry of `P`.
    pub rtol: f64,
    pub max_iter: usize,
    /// Upper bound on the condition number of `R + BᵀPB`.
    pub cond_cap: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            max_iter: 100_000,
            cond_cap: 1e12,
        }
    }
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_spd(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if m.nrows() == 0 || !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite(name));
    }
    let asym = (m - m.transpose()).norm();
    if asym > SYMMETRY_TOL * (1.0 + m.norm()) {
        return Err(Error::NotSymmetric(name));
    }
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let min = eig.min();
    let max = eig.max();
    if min <= PD_TOL * max.max(1.0) {
        return Err(Error::NotPositiveDefinite(name));
    }
    Ok(())
}

/// Checks that `m` is a symmetric positive definite matrix of size `n`.
pub fn validate_spd(m: &DMatrix<f64>, n: usize, name: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_spd(m, name)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Smallest `ρ` with `MᵀPM ⪯ ρP`, i.e. the largest generalized eigenvalue
/// of `(MᵀPM, P)`.
///
/// With `P = LLᵀ` this is `σ_max(Lᵀ M L⁻ᵀ)²`. Returns `+∞` if `P` is not
/// positive definite.
pub fn stability_margin(m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(symmetrize(p)) else {
        return f64::INFINITY;
    };
    let l = chol.l();
    // X = M L⁻ᵀ  ⇔  L Xᵀ = Mᵀ
    let Some(xt) = l.clone().solve_lower_triangular(&m.transpose()) else {
        return f64::INFINITY;
    };
    let c = l.transpose() * xt.transpose();
    let sigma = c.singular_values().max();
    sigma * sigma
}

fn inflate_rho(raw: f64) -> f64 {
    (raw * RHO_INFLATION).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Solves `AᵀP A − P + Q = 0` for a Schur-stable `A` by squared Smith
/// iteration of the series `Σ (Aᵀ)ʲ Q Aʲ`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<LyapunovCertificate> {
    let p0 = lyapunov_series(a, q)?;
    let rho0 = inflate_rho(stability_margin(a, &p0));
    Ok(LyapunovCertificate { p0, rho0 })
}

fn lyapunov_series(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov equation needs square A and matching Q, got A {}x{}, Q {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let rho = spectral_radius(a);
    if rho.is_nan() || rho >= 1.0 - STABILITY_MARGIN_TOL {
        return Err(Error::UnstableMatrix { spectral_radius: rho });
    }

    let mut p = symmetrize(q);
    let mut power = a.clone();
    let mut converged = false;
    for _ in 0..LYAPUNOV_MAX_DOUBLINGS {
        let increment = power.transpose() * &p * &power;
        p += &increment;
        p = symmetrize(&p);
        power = &power * &power;
        if !all_finite(&p) {
            break;
        }
        if increment.norm() <= f64::EPSILON * p.norm() || power.norm() == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: LYAPUNOV_MAX_DOUBLINGS,
        });
    }
    let residual = (a.transpose() * &p * a - &p + q).norm();
    if residual > LYAPUNOV_RESIDUAL_RTOL * q.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::NonConvergence {
            iterations: LYAPUNOV_MAX_DOUBLINGS,
        });
    }
    Ok(p)
}

/// `K = −(R + BᵀPB)⁻¹ BᵀPA`.
pub fn synthesize_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    synthesize_gain_capped(a, b, p, r, DareOptions::default().cond_cap)
}

fn synthesize_gain_capped(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cond_cap: f64,
) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = symmetrize(&(r + &bt_p * b));
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > cond_cap {
        return Err(Error::IllConditioned { condition });
    }
    let chol = Cholesky::new(s).ok_or(Error::IllConditioned { condition })?;
    Ok(-chol.solve(&(bt_p * a)))
}

/// One application of the Riccati map.
fn riccati_step(sys: &SystemMatrices, cost: &CostWeights, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (a, b) = (sys.a(), sys.b());
    let at_p = a.transpose() * p;
    let bt_p = b.transpose() * p;
    let s = symmetrize(&(cost.r() + &bt_p * b));
    let g = bt_p * a;
    let chol = Cholesky::new(s)?;
    let next = &at_p * a - g.transpose() * chol.solve(&g) + cost.q();
    Some(symmetrize(&next))
}

/// Residual `‖P − (AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA + Q)‖_F`.
pub fn dare_residual(sys: &SystemMatrices, cost: &CostWeights, p: &DMatrix<f64>) -> f64 {
    match riccati_step(sys, cost, p) {
        Some(next) => (p - next).norm(),
        None => f64::INFINITY,
    }
}

/// Residual of the closed-loop Lyapunov identity
/// `(A+BK)ᵀP(A+BK) − P + Q + KᵀRK = 0`.
pub fn closed_loop_lyapunov_residual(
    sys: &SystemMatrices,
    cost: &CostWeights,
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> f64 {
    let acl = sys.closed_loop(k);
    (acl.transpose() * p * &acl - p + cost.q() + k.transpose() * cost.r() * k).norm()
}

/// Solves the DARE with default options.
pub fn solve_dare(sys: &SystemMatrices, cost: &CostWeights, w: &DMatrix<f64>) -> Result<RiccatiSolution> {
    solve_dare_with(sys, cost, w, &DareOptions::default())
}

/// Fixed-point Riccati iteration from `P⁰ = Q`.
pub fn solve_dare_with(
    sys: &SystemMatrices,
    cost: &CostWeights,
    w: &DMatrix<f64>,
    opts: &DareOptions,
) -> Result<RiccatiSolution> {
    let n = sys.n();
    if cost.q().nrows() != n || cost.r().nrows() != sys.m() {
        return Err(Error::DimensionMismatch(format!(
            "cost weights ({}x{}, {}x{}) do not match system (n={}, m={})",
            cost.q().nrows(),
            cost.q().ncols(),
            cost.r().nrows(),
            cost.r().ncols(),
            n,
            sys.m()
        )));
    }
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "W must be {n}x{n}, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }

    let p_star = riccati_fixed_point(sys, cost, opts)?;
    let k_star = synthesize_gain_capped(sys.a(), sys.b(), &p_star, cost.r(), opts.cond_cap)?;
    let rho_star = inflate_rho(stability_margin(&sys.closed_loop(&k_star), &p_star));
    let j_star = (w * &p_star).trace();
    Ok(RiccatiSolution {
        p_star,
        k_star,
        rho_star,
        j_star,
    })
}

fn riccati_fixed_point(sys: &SystemMatrices, cost: &CostWeights, opts: &DareOptions) -> Result<DMatrix<f64>> {
    let mut p = symmetrize(cost.q());
    for _ in 0..opts.max_iter {
        let Some(next) = riccati_step(sys, cost, &p) else {
            return Err(Error::IllConditioned {
                condition: f64::INFINITY,
            });
        };
        if !all_finite(&next) {
            break;
        }
        let step = (&next - &p).amax();
        let scale = p.amax();
        p = next;
        if step.is_finite() && step <= opts.rtol * scale {
            return Ok(p);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
    })
}

/// Numerical rank of `[B, AB, …, Aⁿ⁻¹B]` with threshold `n · rel_tol · σ_max`.
pub fn controllability_rank_with_tol(sys: &SystemMatrices, rel_tol: f64) -> usize {
    let (n, m) = (sys.n(), sys.m());
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = sys.b().clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        if i + 1 < n {
            block = sys.a() * block;
        }
    }
    if !all_finite(&ctrb) {
        return 0;
    }
    let sv = SVD::new(ctrb, false, false).singular_values;
    let sigma_max = sv.max();
    if sigma_max <= 0.0 {
        return 0;
    }
    let threshold = n as f64 * rel_tol * sigma_max;
    sv.iter().filter(|&&s| s > threshold).count()
}

pub fn controllability_rank(sys: &SystemMatrices) -> usize {
    controllability_rank_with_tol(sys, DEFAULT_RANK_TOL)
}
