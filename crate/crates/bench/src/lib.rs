//! Shared fixtures for the benchmarks.

use alqr_core::harness::{generate_stand_in_plant, Experiment, GeneratorSpec};
use alqr_core::{ExperimentConfig, PlantSource, PlantSpec};

/// Generated plant with `W = Q = I`, `R = I`.
pub fn plant(n: usize, m: usize, rho: f64) -> PlantSpec {
    generate_stand_in_plant(n, m, rho, 3).expect("fixture plant is controllable")
}

/// Single-trial experiment on an `n x m` generated plant.
pub fn experiment(n: usize, m: usize, horizon: u64) -> Experiment {
    ExperimentConfig {
        plant: PlantSource::Generate(GeneratorSpec {
            n,
            m,
            target_rho: 0.9,
            seed: 3,
        }),
        horizon,
        trials: 1,
        base_seed: 0,
        checkpoint_ratio: 1.2,
        delta: 0.05,
        controller: Default::default(),
        slope_window: None,
        output: Default::default(),
    }
    .prepare()
    .expect("fixture config is valid")
}
