//! Ground-truth linear-Gaussian plant `x_{k+1} = A x_k + B u_k + w_k`,
//! `x_1 = 0`, and its counter-based noise streams.
//!
//! Every Gaussian draw is a pure function of `(seed, lane, k)`: the key of a
//! ChaCha8 generator is derived from the seed and lane, and the step index
//! selects the ChaCha stream. Trials therefore need no shared generator
//! state, and any step of any trial can be regenerated in isolation.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control_math::{spectral_radius, validate_spd, CostWeights, SystemMatrices};
use crate::error::{Error, Result};

/// States whose Euclidean norm exceeds this are reported as diverged.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Ground-truth system, process-noise covariance and cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    sys: SystemMatrices,
    w: DMatrix<f64>,
    cost: CostWeights,
    w_factor: DMatrix<f64>,
}

impl PlantSpec {
    pub fn new(sys: SystemMatrices, w: DMatrix<f64>, cost: CostWeights) -> Result<Self> {
        let n = sys.n();
        validate_spd(&w, n, "W")?;
        if cost.q().nrows() != n || cost.r().nrows() != sys.m() {
            return Err(Error::DimensionMismatch(format!(
                "cost weights do not match system dimensions (n={n}, m={})",
                sys.m()
            )));
        }
        let rho = spectral_radius(sys.a());
        if rho.is_nan() || rho >= 1.0 {
            return Err(Error::UnstableMatrix { spectral_radius: rho });
        }
        let w_factor = Cholesky::new(w.clone())
            .ok_or(Error::NotPositiveDefinite("W"))?
            .l();
        Ok(Self {
            sys,
            w,
            cost,
            w_factor,
        })
    }

    pub fn sys(&self) -> &SystemMatrices {
        &self.sys
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn cost(&self) -> &CostWeights {
        &self.cost
    }

    /// Lower Cholesky factor of `W`.
    pub fn w_factor(&self) -> &DMatrix<f64> {
        &self.w_factor
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn to_json(&self) -> PlantSpecJson {
        PlantSpecJson {
            a: to_rows(self.sys.a()),
            b: to_rows(self.sys.b()),
            w: to_rows(&self.w),
            q: to_rows(self.cost.q()),
            r: to_rows(self.cost.r()),
        }
    }
}

/// Serialized plant: row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpecJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

impl PlantSpecJson {
    /// Builds and validates the plant. Errors carry a JSON-pointer-like path
    /// relative to this object (`/A`, `/W/1`, ...).
    pub fn to_spec(&self) -> Result<PlantSpec> {
        let a = from_rows(&self.a, "/A")?;
        let b = from_rows(&self.b, "/B")?;
        let w = from_rows(&self.w, "/W")?;
        let q = from_rows(&self.q, "/Q")?;
        let r = from_rows(&self.r, "/R")?;
        let sys = SystemMatrices::new(a, b).map_err(|e| Error::config("/B", e.to_string()))?;
        let cost = CostWeights::new(q, r).map_err(|e| {
            let field = match e {
                Error::NotSymmetric("R") | Error::NotPositiveDefinite("R") | Error::NonFinite("R") => "/R",
                _ => "/Q",
            };
            Error::config(field, e.to_string())
        })?;
        if cost.q().nrows() != sys.n() {
            return Err(Error::config("/Q", format!("Q must be {0}x{0}", sys.n())));
        }
        if cost.r().nrows() != sys.m() {
            return Err(Error::config("/R", format!("R must be {0}x{0}", sys.m())));
        }
        PlantSpec::new(sys, w, cost).map_err(|e| {
            let field = match e {
                Error::UnstableMatrix { .. } => "/A",
                _ => "/W",
            };
            Error::config(field, e.to_string())
        })
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|row| row.iter().copied().collect()).collect()
}

/// Row-major nested arrays to a matrix; `path` prefixes error locations.
pub fn from_rows(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::config(path, "matrix must have at least one row"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::config(format!("{path}/0"), "row must be nonempty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::config(
                format!("{path}/{i}"),
                format!("expected {ncols} columns, found {}", row.len()),
            ));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("{path}/{i}/{j}"), "entry must be finite"));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Independent noise lanes of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    /// Process noise `w_k`.
    Process,
    /// Probing excitation `v_k`.
    Probe,
}

impl Lane {
    fn tag(self) -> u64 {
        match self {
            Lane::Process => 0x77,
            Lane::Probe => 0x76,
        }
    }
}

/// Position in a trial's noise sequence: draws are keyed by
/// `(seed, lane, counter)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    /// Step index `k`, 1-based.
    pub counter: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 1 }
    }

    pub fn at(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn advance(&mut self) {
        self.counter += 1;
    }

    /// `dim` i.i.d. standard normals for this stream position and lane.
    pub fn standard_normals(&self, lane: Lane, dim: usize) -> DVector<f64> {
        let mut rng = ChaCha8Rng::from_seed(lane_key(self.seed, lane));
        rng.set_stream(self.counter);
        DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lane_key(seed: u64, lane: Lane) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed ^ lane.tag().wrapping_mul(0xA24B_AED4_963E_E407);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// `w_k = L g` with `W = L Lᵀ` and `g` standard normal.
pub fn draw_process_noise(stream: &NoiseStream, w_factor: &DMatrix<f64>) -> DVector<f64> {
    w_factor * stream.standard_normals(Lane::Process, w_factor.nrows())
}

/// `v_k ~ N(0, I_m)`, independent of the process-noise lane.
pub fn draw_probe_noise(stream: &NoiseStream, m: usize) -> DVector<f64> {
    stream.standard_normals(Lane::Probe, m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub k: u64,
    pub x: DVector<f64>,
}

impl PlantState {
    /// `k = 1`, `x_1 = 0`.
    pub fn initial(n: usize) -> Self {
        Self {
            k: 1,
            x: DVector::zeros(n),
        }
    }
}

/// Advances the plant one step.
pub fn step(state: &PlantState, u: &DVector<f64>, w: &DVector<f64>, spec: &PlantSpec) -> Result<PlantState> {
    let (n, m) = (spec.n(), spec.m());
    if state.x.len() != n || u.len() != m || w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "step expects x:{n}, u:{m}, w:{n}; got x:{}, u:{}, w:{}",
            state.x.len(),
            u.len(),
            w.len()
        )));
    }
    let x = spec.sys.a() * &state.x + spec.sys.b() * u + w;
    let norm = x.norm();
    if norm.is_nan() || norm > DIVERGENCE_GUARD {
        return Err(Error::DivergedState {
            k: state.k + 1,
            norm,
        });
    }
    Ok(PlantState { k: state.k + 1, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_math::solve_discrete_lyapunov;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn scalar_plant(a: f64, b: f64, w: f64) -> PlantSpec {
        PlantSpec::new(
            SystemMatrices::new(dmatrix![a], dmatrix![b]).unwrap(),
            dmatrix![w],
            CostWeights::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn step_zero_is_fixed_point() {
        let spec = scalar_plant(0.5, 1.0, 1.0);
        let next = step(&PlantState::initial(1), &dvector![0.0], &dvector![0.0], &spec).unwrap();
        assert_eq!(next.x, dvector![0.0]);
        assert_eq!(next.k, 2);
    }

    #[test]
    fn step_scalar_arithmetic() {
        let spec = scalar_plant(0.5, 1.0, 1.0);
        let state = PlantState { k: 4, x: dvector![2.0] };
        let next = step(&state, &dvector![1.0], &dvector![0.25], &spec).unwrap();
        assert_eq!(next.x, dvector![2.25]);
        assert_eq!(next.k, 5);
    }

    #[test]
    fn step_defining_identity() {
        let spec = PlantSpec::new(
            SystemMatrices::new(dmatrix![0.2, 0.5; -0.1, 0.3], dmatrix![1.0; 0.5]).unwrap(),
            DMatrix::identity(2, 2),
            CostWeights::identity(2, 1),
        )
        .unwrap();
        let state = PlantState { k: 1, x: dvector![0.7, -1.3] };
        let (u, w) = (dvector![0.4], dvector![0.125, -2.0]);
        let next = step(&state, &u, &w, &spec).unwrap();
        let drift = spec.sys().a() * &state.x + spec.sys().b() * &u;
        assert_abs_diff_eq!(next.x - drift, w, epsilon = 1e-15);
    }

    #[test]
    fn step_divergence_guard() {
        let spec = scalar_plant(0.5, 1.0, 1.0);
        let state = PlantState { k: 9, x: dvector![1e12] };
        let err = step(&state, &dvector![1e12], &dvector![0.0], &spec).unwrap_err();
        assert_eq!(err, Error::DivergedState { k: 10, norm: 1.5e12 });
    }

    #[test]
    fn plant_rejects_unstable_and_bad_noise() {
        let sys = SystemMatrices::new(dmatrix![1.2], dmatrix![1.0]).unwrap();
        assert!(matches!(
            PlantSpec::new(sys.clone(), dmatrix![1.0], CostWeights::identity(1, 1)),
            Err(Error::UnstableMatrix { .. })
        ));
        let sys = SystemMatrices::new(dmatrix![0.2], dmatrix![1.0]).unwrap();
        assert!(PlantSpec::new(sys, dmatrix![0.0], CostWeights::identity(1, 1)).is_err());
    }

    #[test]
    fn noise_is_deterministic() {
        let stream = NoiseStream::at(42, 17);
        let l = DMatrix::identity(3, 3);
        assert_eq!(draw_process_noise(&stream, &l), draw_process_noise(&stream, &l));
        assert_eq!(draw_probe_noise(&stream, 2), draw_probe_noise(&stream, 2));
        assert_ne!(
            draw_process_noise(&stream, &l),
            draw_process_noise(&NoiseStream::at(42, 18), &l)
        );
        assert_ne!(
            draw_process_noise(&stream, &l),
            draw_process_noise(&NoiseStream::at(43, 17), &l)
        );
    }

    #[test]
    fn noise_cholesky_scaling() {
        let spec1 = scalar_plant(0.5, 1.0, 1.0);
        let spec4 = scalar_plant(0.5, 1.0, 4.0);
        for k in 1..50 {
            let stream = NoiseStream::at(7, k);
            let w1 = draw_process_noise(&stream, spec1.w_factor());
            let w4 = draw_process_noise(&stream, spec4.w_factor());
            assert_eq!(w4, w1 * 2.0);
        }
    }

    #[test]
    fn probe_lane_differs_from_process_lane() {
        let stream = NoiseStream::at(3, 5);
        let w = stream.standard_normals(Lane::Process, 4);
        let v = stream.standard_normals(Lane::Probe, 4);
        assert_ne!(w, v);
    }

    #[test]
    fn json_round_trip_and_errors() {
        let spec = scalar_plant(0.5, 1.0, 2.0);
        let json = serde_json::to_string(&spec.to_json()).unwrap();
        assert!(json.contains("\"A\":[[0.5]]"));
        let back: PlantSpecJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_spec().unwrap(), spec);

        let mut bad = spec.to_json();
        bad.a = vec![vec![1.5]];
        assert!(matches!(bad.to_spec(), Err(Error::ConfigInvalid { path, .. }) if path == "/A"));

        let mut ragged = spec.to_json();
        ragged.q = vec![vec![1.0, 0.0], vec![0.0]];
        assert!(matches!(ragged.to_spec(), Err(Error::ConfigInvalid { path, .. }) if path == "/Q/1"));
    }

    // Monte Carlo checks below use 10⁶ draws; standard error per entry ≈ 1e-3.

    #[test]
    fn process_noise_empirical_covariance() {
        let l = DMatrix::<f64>::identity(2, 2);
        let count = 1_000_000u64;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for k in 1..=count {
            let w = draw_process_noise(&NoiseStream::at(11, k), &l);
            cov += &w * w.transpose();
        }
        cov /= count as f64;
        for v in (cov - DMatrix::identity(2, 2)).iter() {
            assert!(v.abs() < 0.01, "{v}");
        }
    }

    #[test]
    fn probe_noise_empirical_covariance() {
        let count = 1_000_000u64;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for k in 1..=count {
            let v = draw_probe_noise(&NoiseStream::at(12, k), 2);
            cov += &v * v.transpose();
        }
        cov /= count as f64;
        for v in (cov - DMatrix::identity(2, 2)).iter() {
            assert!(v.abs() < 0.01, "{v}");
        }
    }

    #[test]
    fn lanes_are_uncorrelated() {
        let count = 1_000_000u64;
        let mut cross = 0.0;
        for k in 1..=count {
            let s = NoiseStream::at(13, k);
            cross += s.standard_normals(Lane::Process, 1)[0] * s.standard_normals(Lane::Probe, 1)[0];
        }
        assert!((cross / count as f64).abs() < 0.01);
    }

    #[test]
    fn open_loop_stationary_covariance() {
        let a = dmatrix![0.5, 0.3; -0.2, 0.6];
        let spec = PlantSpec::new(
            SystemMatrices::new(a.clone(), dmatrix![1.0; 0.0]).unwrap(),
            dmatrix![1.0, 0.2; 0.2, 0.5],
            CostWeights::identity(2, 1),
        )
        .unwrap();
        // Σ = AΣAᵀ + W is the Lyapunov equation for Aᵀ.
        let sigma = solve_discrete_lyapunov(&a.transpose(), spec.w()).unwrap().p0;

        let steps = 1_000_000u64;
        let burn_in = 1_000u64;
        let mut state = PlantState::initial(2);
        let u = DVector::zeros(1);
        let mut emp = DMatrix::<f64>::zeros(2, 2);
        for k in 1..=steps + burn_in {
            let w = draw_process_noise(&NoiseStream::at(99, k), spec.w_factor());
            state = step(&state, &u, &w, &spec).unwrap();
            if k > burn_in {
                emp += &state.x * state.x.transpose();
            }
        }
        emp /= steps as f64;
        let rel = (&emp - &sigma).norm() / sigma.norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }
}
