use std::f64::consts::PI;

use proptest::prelude::*;
use qpinn::ansatz::{scale, AnsatzKind};
use qpinn::config::apply_override;
use qpinn::quantum::{meyer_wallach, run_circuit, AngleSource};
use qpinn::reference::l2_error;
use qpinn::trainer::{bh_index, Adam, LrSchedule};
use qpinn::{build_circuit, ScaleKind};

fn kind_strategy() -> impl Strategy<Value = AnsatzKind> {
    prop::sample::select(AnsatzKind::ALL.to_vec())
}

fn random_state(kind: AnsatzKind, n: usize, layers: usize, seed: u64) -> qpinn::quantum::StateVectorBatch {
    let circuit = build_circuit(kind, n, layers).unwrap();
    let params: Vec<f64> = (0..circuit.param_count).map(|i| ((i as u64 * 7919 + seed) as f64 * 0.618).sin() * PI).collect();
    let emb = ndarray::Array2::from_shape_fn((3, n), |(r, q)| ((r * n + q) as f64 + seed as f64).cos() * PI);
    run_circuit(n, 3, &circuit.gates, &AngleSource { params: &params, embedding: Some(emb.view()) }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circuits_preserve_norm(kind in kind_strategy(), n in 2usize..=6, layers in 1usize..=4, seed in 0u64..10_000) {
        let s = random_state(kind, n, layers, seed);
        for norm in s.norms() {
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn meyer_wallach_is_bounded(kind in kind_strategy(), n in 2usize..=6, layers in 1usize..=3, seed in 0u64..10_000) {
        let s = random_state(kind, n, layers, seed);
        for q in meyer_wallach(&s) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&q));
            if kind == AnsatzKind::NoEntanglement {
                prop_assert!(q.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lr_is_step_decay(epoch in 0usize..50_000) {
        let lr = LrSchedule::default().at(epoch);
        prop_assert_eq!(lr, 0.001 * 0.85f64.powi((epoch / 2000) as i32));
    }

    #[test]
    fn l2_of_scaled_reference(k in -3.0f64..3.0, v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let pred: Vec<f64> = v.iter().map(|x| k * x).collect();
        prop_assert!((l2_error(&pred, &v).unwrap() - (k - 1.0).abs()).abs() < 1e-12);
    }

    #[test]
    fn scaled_angles_stay_in_range(a in -1.0f64..=1.0) {
        prop_assert!((0.0..=PI).contains(&scale(ScaleKind::Acos, a).unwrap()));
        prop_assert!((0.0..=PI).contains(&scale(ScaleKind::Asin, a).unwrap()));
        prop_assert!((scale(ScaleKind::Pi, a).unwrap() - PI * a).abs() < 1e-15);
    }

    #[test]
    fn bh_index_is_bounded(u in prop::collection::vec(0.0f64..3.0, 2..30)) {
        let mut energy = vec![1.0];
        energy.extend(&u);
        let times: Vec<f64> = (0..energy.len()).map(|k| k as f64 * 0.1).collect();
        let b = bh_index(&times, &energy, times[1]).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.value));
        prop_assert!(b.raw <= 1.0);
        let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((b.raw - (1.0 - min)).abs() < 1e-15);
    }

    #[test]
    fn adam_ignores_zero_gradients(p in prop::collection::vec(-10.0f64..10.0, 1..20), epoch in 0usize..10_000) {
        let mut q = p.clone();
        let mut adam = Adam::new(p.len(), LrSchedule::default());
        adam.step(&mut q, &vec![0.0; p.len()], epoch).unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn overrides_set_nested_numbers(v in -1e6f64..1e6) {
        let mut root = serde_json::json!({"model": {"rff_sigma": 1.0}});
        apply_override(&mut root, &format!("model.rff_sigma={v:e}")).unwrap();
        prop_assert_eq!(root["model"]["rff_sigma"].as_f64().unwrap(), v);
    }
}
