use alqr_core::harness::Experiment;
use alqr_core::record::TrialRecord;
use alqr_core::regret::decompose;
use alqr_core::ExperimentConfig;
use nalgebra::{DMatrix, DVector};

fn experiment(horizon: u64, trials: u32) -> Experiment {
    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "plant": { "generate": { "n": 3, "m": 2, "target_rho": 0.9, "seed": 3 } },
        "horizon": horizon,
        "trials": trials,
        "base_seed": 5,
        "checkpoint_ratio": 1.2,
        "delta": 0.05,
        "output": { "write_trials": false }
    }))
    .unwrap();
    cfg.prepare().unwrap()
}

#[test]
fn identity_holds_at_every_checkpoint() {
    let exp = experiment(10_000, 3);
    for idx in 0..3 {
        let run = exp.run_trial(idx).unwrap();
        assert_eq!(run.decomposition.len(), exp.checkpoints.len());
        for report in &run.decomposition {
            assert!(report.holds(), "trial {idx}, T={}: {:e}", report.steps, report.relative_residual());
        }
        let last = run.decomposition.last().unwrap();
        assert!((last.regret - run.ledger.regret()).abs() <= 1e-9 * (1.0 + last.regret.abs()));
    }
}

#[test]
fn gain_error_term_uses_breaker_selected_gain() {
    let exp = experiment(4000, 1);
    let run = exp.run_trial(0).unwrap();
    let (b, r, p) = (exp.plant.sys().b(), exp.plant.cost().r(), &exp.oracle.p_star);
    let h = r + b.transpose() * p * b;
    let mut r1 = 0.0;
    let mut suppressed = 0;
    for row in run.record.rows() {
        let x = DVector::from_column_slice(row.x);
        let k_k = if row.breaker.is_active() {
            suppressed += 1;
            DMatrix::zeros(2, 3)
        } else {
            run.record.gain_in_effect(row.k)
        };
        let feedback = &k_k * &x;
        if !row.breaker.is_active() {
            assert_eq!(feedback.as_slice(), row.u_cb);
        }
        let gap = feedback - &exp.oracle.k_star * &x;
        r1 += gap.dot(&(&h * &gap));
    }
    assert!(suppressed > 0);
    let report = decompose(&run.record, &exp.oracle, &exp.plant).unwrap();
    assert!((report.terms[0] - r1).abs() <= 1e-9 * r1.abs());
}

#[test]
fn boundary_term_is_never_positive() {
    let exp = experiment(2000, 4);
    for idx in 0..4 {
        let run = exp.run_trial(idx).unwrap();
        for report in &run.decomposition {
            assert!(report.terms[5] <= 0.0, "T={}: {}", report.steps, report.terms[5]);
        }
        let x_end = run.record.final_state().unwrap();
        let last = run.decomposition.last().unwrap();
        let expected = -x_end.dot(&(&exp.oracle.p_star * x_end));
        assert!((last.terms[5] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
    }
}

#[test]
fn identity_survives_csv_round_trip() {
    let exp = experiment(3000, 1);
    let run = exp.run_trial(0).unwrap();
    let mut buf = Vec::new();
    run.record.write_csv(&mut buf).unwrap();
    let parsed = TrialRecord::read_csv(buf.as_slice()).unwrap();
    assert!(!parsed.has_gain_history());
    let from_csv = decompose(&parsed, &exp.oracle, &exp.plant).unwrap();
    let in_memory = decompose(&run.record, &exp.oracle, &exp.plant).unwrap();
    assert!(from_csv.holds(), "{:e}", from_csv.relative_residual());
    assert!((from_csv.regret - in_memory.regret).abs() <= 1e-9 * (1.0 + in_memory.regret.abs()));
}
