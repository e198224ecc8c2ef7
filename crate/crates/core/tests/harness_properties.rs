use std::time::{Duration, Instant};

use alqr_core::diagnostics::replay_breaker;
use alqr_core::ExperimentConfig;

const REFERENCE: &str = include_str!("../../../configs/reference.json");

fn reference(horizon: u64, trials: u32, base_seed: u64) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = serde_json::from_str(REFERENCE).unwrap();
    cfg.horizon = horizon;
    cfg.trials = trials;
    cfg.base_seed = base_seed;
    cfg
}

#[test]
fn breaker_goes_quiet_in_first_half() {
    let exp = reference(100_000, 50, 31).prepare().unwrap();
    let summary = exp.run().unwrap();
    let quiet = summary
        .trials
        .iter()
        .filter(|t| t.diagnostics.as_ref().is_some_and(|d| d.t_nocb.step < 50_000))
        .count();
    assert!(quiet * 100 >= 95 * 50, "{quiet}/50");
}

#[test]
fn noise_event_frequency_respects_floor() {
    let exp = reference(10_000, 200, 8).prepare().unwrap();
    let summary = exp.run().unwrap();
    let holds = summary
        .trials
        .iter()
        .filter(|t| t.diagnostics.as_ref().is_some_and(|d| d.noise_event_holds))
        .count() as f64;
    let floor = 0.90 - 3.0 * (0.09f64 / 200.0).sqrt();
    assert!(holds / 200.0 >= floor, "{holds}/200");
}

#[test]
fn replay_from_config_and_index() {
    let exp = reference(5_000, 4, 1).prepare().unwrap();
    let again = reference(5_000, 4, 1).prepare().unwrap();
    let (a, b) = (exp.run_trial(2).unwrap(), again.run_trial(2).unwrap());
    assert_eq!(a.record, b.record);
    assert_eq!(a.seed, b.seed);
    replay_breaker(&a.record, &exp.config.controller).unwrap();
}

#[test]
fn reference_trial_throughput() {
    let exp = reference(100_000, 1, 0).prepare().unwrap();
    let start = Instant::now();
    exp.run_trial(0).unwrap();
    let elapsed = start.elapsed();
    // Soft budget: report rather than fail on slow or heavily shared hosts.
    if elapsed > Duration::from_secs(5) {
        eprintln!("warning: T=1e5 reference trial took {elapsed:?}, budget 5 s");
    }
}
