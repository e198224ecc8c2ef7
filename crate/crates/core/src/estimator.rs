//! Online ordinary least squares for `Θ = [A B]`.
//!
//! With regressors `z_t = [x_tᵀ u_tᵀ]ᵀ` and responses `x_{t+1}`, the batch
//! estimate over `t < k` is
//!
//! ```text
//! Θ̂_k = (Σ x_{t+1} z_tᵀ) (Σ z_t z_tᵀ)†
//! ```
//!
//! Only the sufficient statistics `V = Σ z zᵀ` and `S = Σ x' zᵀ` are kept, so
//! memory does not grow with the horizon.

use nalgebra::{DMatrix, DVector, SVD};

use crate::control_math::SystemMatrices;
use crate::error::{Error, Result};

/// Relative singular-value cutoff of the pseudoinverse.
pub const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    n: usize,
    m: usize,
    v: DMatrix<f64>,
    s: DMatrix<f64>,
    count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub theta: DMatrix<f64>,
    /// Numerical rank of `V` used in the solve.
    pub rank: usize,
}

impl ParameterEstimate {
    pub fn a_hat(&self) -> DMatrix<f64> {
        let n = self.theta.nrows();
        self.theta.columns(0, n).into_owned()
    }

    pub fn b_hat(&self) -> DMatrix<f64> {
        let n = self.theta.nrows();
        self.theta.columns(n, self.theta.ncols() - n).into_owned()
    }

    pub fn system(&self) -> Result<SystemMatrices> {
        SystemMatrices::new(self.a_hat(), self.b_hat())
    }
}

impl EstimatorState {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            v: DMatrix::zeros(n + m, n + m),
            s: DMatrix::zeros(n, n + m),
            count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Gram matrix `V = Σ z zᵀ`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Cross moment `S = Σ x' zᵀ`.
    pub fn cross_moment(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Absorbs the pair `(z_t, x_{t+1})`.
    pub fn absorb(&mut self, z: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        if z.len() != self.n + self.m || x_next.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "absorb expects z:{}, x_next:{}; got z:{}, x_next:{}",
                self.n + self.m,
                self.n,
                z.len(),
                x_next.len()
            )));
        }
        self.v.ger(1.0, z, z, 1.0);
        self.s.ger(1.0, x_next, z, 1.0);
        self.count += 1;
        Ok(())
    }

    /// Convenience wrapper stacking `z = [x; u]`.
    pub fn absorb_step(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        let z = regressor(x, u);
        self.absorb(&z, x_next)
    }

    /// `Θ̂ = S V†`; rank-deficient `V` gives the minimum-norm solution.
    pub fn estimate(&self) -> ParameterEstimate {
        let (pinv, rank) = pseudo_inverse(&self.v, PINV_RTOL);
        ParameterEstimate {
            theta: &self.s * pinv,
            rank,
        }
    }
}

/// `z = [x; u]`.
pub fn regressor(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Truncated-SVD pseudoinverse; singular values at or below
/// `rtol · σ_max` are dropped. Returns the inverse and the retained rank.
pub fn pseudo_inverse(m: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.iter().all(|&v| v == 0.0) {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = SVD::new(m.clone(), true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = rtol * sigma_max;
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut pinv = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            pinv.ger(1.0 / s, &v_t.row(i).transpose(), &u.column(i), 1.0);
        }
    }
    (pinv, rank)
}

/// Spectral norm `‖Θ̂ − Θ‖`.
pub fn estimation_error(est: &ParameterEstimate, truth: &SystemMatrices) -> f64 {
    let diff = &est.theta - truth.theta();
    diff.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    #[test]
    fn absorb_unit_vector() {
        let mut est = EstimatorState::new(1, 1);
        est.absorb(&dvector![1.0, 0.0], &dvector![1.0]).unwrap();
        assert_eq!(est.gram(), &dmatrix![1.0, 0.0; 0.0, 0.0]);
        assert_eq!(est.cross_moment(), &dmatrix![1.0, 0.0]);
        assert_eq!(est.count(), 1);
    }

    #[test]
    fn absorb_counts() {
        let mut est = EstimatorState::new(2, 1);
        let z = dvector![1.0, 0.0, 0.0];
        for _ in 0..7 {
            est.absorb(&z, &dvector![0.0, 0.0]).unwrap();
        }
        assert_eq!(est.gram()[(0, 0)], 7.0);
        assert_eq!(est.count(), 7);
    }

    #[test]
    fn absorb_rejects_wrong_dimensions() {
        let mut est = EstimatorState::new(2, 1);
        assert!(est.absorb(&dvector![1.0, 0.0], &dvector![0.0, 0.0]).is_err());
        assert!(est.absorb(&dvector![1.0, 0.0, 0.0], &dvector![0.0]).is_err());
    }

    #[test]
    fn empty_estimate_is_zero() {
        let est = EstimatorState::new(3, 2).estimate();
        assert_eq!(est.theta, DMatrix::zeros(3, 5));
        assert_eq!(est.rank, 0);
    }

    #[test]
    fn noiseless_scalar_recovery() {
        let (a, b) = (0.5, 1.0);
        let mut est = EstimatorState::new(1, 1);
        let mut x = 0.0;
        for k in 1..=10 {
            let u = (k as f64 * 1.7).sin() + 0.3;
            let x_next = a * x + b * u;
            est.absorb_step(&dvector![x], &dvector![u], &dvector![x_next]).unwrap();
            x = x_next;
        }
        let theta = est.estimate();
        assert_eq!(theta.rank, 2);
        assert_abs_diff_eq!(theta.a_hat()[(0, 0)], a, epsilon = 1e-10);
        assert_abs_diff_eq!(theta.b_hat()[(0, 0)], b, epsilon = 1e-10);
    }

    #[test]
    fn estimation_error_examples() {
        let truth = SystemMatrices::new(dmatrix![0.5, 0.1; 0.0, 0.3], dmatrix![1.0; 2.0]).unwrap();
        let exact = ParameterEstimate {
            theta: truth.theta(),
            rank: 3,
        };
        assert_eq!(estimation_error(&exact, &truth), 0.0);

        let eps = 0.125;
        let mut perturbed = exact.clone();
        perturbed.theta[(0, 0)] += eps;
        assert_abs_diff_eq!(estimation_error(&perturbed, &truth), eps, epsilon = 1e-15);
    }

    #[test]
    fn rank_deficient_estimate_stays_in_data_span() {
        // Inputs always zero: the B columns are not identifiable.
        let mut est = EstimatorState::new(2, 1);
        let xs = [dvector![1.0, 0.0], dvector![0.3, -1.0], dvector![0.5, 0.5]];
        for pair in xs.windows(2) {
            est.absorb_step(&pair[0], &dvector![0.0], &pair[1]).unwrap();
        }
        let theta = est.estimate();
        assert_eq!(theta.rank, 2);
        let (pinv, _) = pseudo_inverse(est.gram(), PINV_RTOL);
        let projector = DMatrix::identity(3, 3) - est.gram() * pinv;
        assert!((&theta.theta * projector).norm() <= 1e-8);
        assert_eq!(theta.b_hat(), dmatrix![0.0; 0.0]);
    }

    fn matrix_strategy(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-1.0..1.0f64, rows * cols)
            .prop_map(move |v| DMatrix::from_vec(rows, cols, v) * scale)
    }

    proptest! {
        #[test]
        fn absorb_order_commutes(
            zs in prop::collection::vec(matrix_strategy(3, 1, 2.0), 2),
            xs in prop::collection::vec(matrix_strategy(2, 1, 2.0), 2),
        ) {
            let z: Vec<DVector<f64>> = zs.iter().map(|m| m.column(0).into_owned()).collect();
            let x: Vec<DVector<f64>> = xs.iter().map(|m| m.column(0).into_owned()).collect();
            let mut fwd = EstimatorState::new(2, 1);
            fwd.absorb(&z[0], &x[0]).unwrap();
            fwd.absorb(&z[1], &x[1]).unwrap();
            let mut rev = EstimatorState::new(2, 1);
            rev.absorb(&z[1], &x[1]).unwrap();
            rev.absorb(&z[0], &x[0]).unwrap();
            prop_assert!((fwd.gram() - rev.gram()).norm() <= 1e-12);
            prop_assert!((fwd.cross_moment() - rev.cross_moment()).norm() <= 1e-12);
            let trace: f64 = z.iter().map(|v| v.norm_squared()).sum();
            prop_assert!((fwd.gram().trace() - trace).abs() <= 1e-12 * (1.0 + trace));
        }

        #[test]
        fn noiseless_trajectories_are_recovered_exactly(
            a in matrix_strategy(3, 3, 0.3),
            b in matrix_strategy(3, 2, 1.0),
            inputs in matrix_strategy(2, 12, 1.0),
        ) {
            let truth = SystemMatrices::new(a, b).unwrap();
            let mut est = EstimatorState::new(3, 2);
            let mut x = DVector::from_element(3, 0.5);
            for t in 0..inputs.ncols() {
                let u = inputs.column(t).into_owned();
                let x_next = truth.a() * &x + truth.b() * &u;
                est.absorb_step(&x, &u, &x_next).unwrap();
                x = x_next;
            }
            let theta = est.estimate();
            if theta.rank == 5 {
                prop_assert!(estimation_error(&theta, &truth) <= 1e-8);
            }
            // Whatever the rank, the estimate reproduces every observed response.
            let (pinv, _) = pseudo_inverse(est.gram(), PINV_RTOL);
            let projector = DMatrix::identity(5, 5) - est.gram() * pinv;
            prop_assert!((&theta.theta * projector).norm() <= 1e-8);
        }
    }
}
