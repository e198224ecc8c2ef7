use alqr_core::control_math::{closed_loop_lyapunov_residual, dare_residual};
use alqr_core::harness::generate_stand_in_plant;
use alqr_core::{solve_dare, stability_margin, PlantSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_plants(count: usize, seed: u64) -> Vec<PlantSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=4);
            let rho = rng.random_range(0.05..=0.95);
            generate_stand_in_plant(n, m, rho, rng.random()).unwrap()
        })
        .collect()
}

#[test]
fn residuals_hold_on_random_controllable_systems() {
    for (i, plant) in random_plants(100, 1).iter().enumerate() {
        let sol = solve_dare(plant.sys(), plant.cost(), plant.w()).unwrap();
        let scale = 1.0 + sol.p_star.norm();
        let dare = dare_residual(plant.sys(), plant.cost(), &sol.p_star);
        assert!(dare <= 1e-9 * scale, "system {i}: DARE residual {dare:e}");
        let lyap = closed_loop_lyapunov_residual(plant.sys(), plant.cost(), &sol.p_star, &sol.k_star);
        assert!(lyap <= 1e-8 * scale, "system {i}: Lyapunov residual {lyap:e}");
    }
}

#[test]
fn optimal_closed_loop_contracts_in_riccati_norm() {
    for plant in random_plants(50, 2) {
        let sol = solve_dare(plant.sys(), plant.cost(), plant.w()).unwrap();
        let margin = stability_margin(&plant.sys().closed_loop(&sol.k_star), &sol.p_star);
        assert!(margin < 1.0, "margin {margin}");
        assert!(sol.rho_star < 1.0 && sol.rho_star >= margin);
    }
}

#[test]
fn gain_perturbation_identity() {
    let plant = generate_stand_in_plant(4, 2, 0.9, 11).unwrap();
    let sol = solve_dare(plant.sys(), plant.cost(), plant.w()).unwrap();
    let (a, b) = (plant.sys().a(), plant.sys().b());
    let (q, r, p) = (plant.cost().q(), plant.cost().r(), &sol.p_star);
    let h = r + b.transpose() * p * b;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let dk = DMatrix::from_fn(2, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let k = &sol.k_star + &dk;
        let acl = a + b * &k;
        let lhs = q + k.transpose() * r * &k + acl.transpose() * p * &acl - p;
        let rhs = dk.transpose() * &h * &dk;
        let scale = 1.0 + rhs.amax() + p.amax();
        for (l, rv) in lhs.iter().zip(rhs.iter()) {
            assert!((l - rv).abs() <= 1e-8 * scale, "{l} vs {rv}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn joint_cost_scaling(seed in 0u64..1000, alpha in 0.01f64..100.0) {
        let plant = generate_stand_in_plant(3, 2, 0.9, seed).unwrap();
        let base = solve_dare(plant.sys(), plant.cost(), plant.w()).unwrap();
        let scaled_cost = plant.cost().scaled(alpha).unwrap();
        let scaled = solve_dare(plant.sys(), &scaled_cost, plant.w()).unwrap();
        let p_err = (&scaled.p_star - &base.p_star * alpha).norm() / (alpha * base.p_star.norm());
        let k_err = (&scaled.k_star - &base.k_star).norm() / (1.0 + base.k_star.norm());
        prop_assert!(p_err <= 1e-9, "P error {}", p_err);
        prop_assert!(k_err <= 1e-9, "K error {}", k_err);
    }
}
