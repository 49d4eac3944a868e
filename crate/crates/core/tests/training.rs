use qpinn::trainer::{
    probe_entanglement, probe_points, write_run_artifacts, EvalConfig, GridConfig, METRICS_HEADER,
};
use qpinn::*;

fn micro(epochs: usize, ansatz: AnsatzKind) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { hidden_width: 16, rff_features: 16, ..ModelConfig::hybrid(ansatz, ScaleKind::Acos) },
        epochs,
        seed: 5,
        grid: GridConfig { nx: 6, ny: 6, nt: 4 },
        eval: EvalConfig { every: 2, energy_nx: 8, energy_nt: 4, reference_n: 32, reference_snapshots: 9, ..EvalConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_gives_one_row() {
    let log = train(&micro(1, AnsatzKind::StronglyEntangling), None).unwrap();
    assert_eq!(log.rows.len(), 1);
    let r = &log.rows[0];
    assert!(r.i_bh.is_some() && r.l2_err.is_some() && r.mw_q.is_some() && r.grad_norm_q.is_some());
}

#[test]
fn eval_cadence_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let log = train(&micro(5, AnsatzKind::StronglyEntangling), Some(dir.path())).unwrap();
    let evaluated: Vec<usize> = log.rows.iter().filter(|r| r.l2_err.is_some()).map(|r| r.epoch).collect();
    assert_eq!(evaluated, vec![0, 2, 4]);
    assert!(dir.path().join("final.ckpt").exists());
    for w in log.rows.windows(2) {
        assert_eq!(w[1].epoch, w[0].epoch + 1);
    }
    let summary = write_run_artifacts(dir.path(), &log).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER);
    assert_eq!(lines.count(), 5);
    assert_eq!(summary.counts.total, log.counts.total);
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn micro_run_lowers_loss() {
    let log = train(&micro(30, AnsatzKind::StronglyEntangling), None).unwrap();
    assert!(log.final_eval.loss.total < log.rows[0].loss.total);
}

#[test]
fn classical_run_has_no_quantum_diagnostics() {
    let mut cfg = micro(2, AnsatzKind::StronglyEntangling);
    cfg.model = ModelConfig { hidden_width: 16, rff_features: 16, ..ModelConfig::classical(Variant::ClassicalReduced) };
    let log = train(&cfg, None).unwrap();
    assert!(log.rows.iter().all(|r| r.mw_q.is_none() && r.grad_norm_q.is_none()));
}

#[test]
fn meyer_wallach_probe() {
    let probe = probe_points(16, 1.5);
    let none = build_model(&ModelConfig::hybrid(AnsatzKind::NoEntanglement, ScaleKind::Acos)).unwrap();
    let q = probe_entanglement(&none, none.init_params(1).as_slice(), &probe).unwrap().unwrap();
    assert!(q.abs() < 1e-12);

    let strongly = build_model(&ModelConfig::hybrid(AnsatzKind::StronglyEntangling, ScaleKind::Acos)).unwrap();
    let params = strongly.init_params(1);
    let q = probe_entanglement(&strongly, params.as_slice(), &probe).unwrap().unwrap();
    assert!(q > 0.0 && q <= 1.0);
    assert_eq!(q, probe_entanglement(&strongly, params.as_slice(), &probe).unwrap().unwrap());

    let classical = build_model(&ModelConfig::classical(Variant::ClassicalRegular)).unwrap();
    assert!(probe_entanglement(&classical, classical.init_params(1).as_slice(), &probe).unwrap().is_none());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = micro(1, AnsatzKind::StronglyEntangling);
    cfg.epochs = 0;
    assert!(matches!(train(&cfg, None), Err(Error::Config(_))));
    let mut cfg = micro(1, AnsatzKind::StronglyEntangling);
    cfg.lr.lr0 = 0.0;
    assert!(matches!(train(&cfg, None), Err(Error::Config(_))));
}
