mod common;

use proptest::prelude::*;

use scarf::eval::{compare, read_runs, welch_t_test, win_matrix, write_runs, ExperimentConfig, ResultsStore};

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..=50)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn welch_agrees_with_reference(a in sample(), b in sample()) {
        prop_assume!(common::variance(&a) > 0.0 || common::variance(&b) > 0.0);
        let w = welch_t_test(&a, &b).unwrap();
        let (t, df, p) = common::welch_oracle(&a, &b);
        prop_assert!((w.t - t).abs() <= 1e-9 * t.abs().max(1.0));
        prop_assert!((w.df - df).abs() <= 1e-9 * df);
        prop_assert!((w.p - p).abs() < 1e-6, "{} vs {}", w.p, p);
    }

    #[test]
    fn comparison_is_affine_invariant(a in sample(), b in sample(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let f = |x: &[f64]| x.iter().map(|v| scale * v + shift).collect::<Vec<_>>();
        let (ta, tb) = (f(&a), f(&b));
        let p = welch_t_test(&a, &b).map(|w| w.p).unwrap_or(1.0);
        // outcomes may only differ when p sits on the threshold to rounding
        prop_assume!((p - 0.05).abs() > 1e-9);
        prop_assert_eq!(compare(&a, &b, 0.05), compare(&ta, &tb, 0.05));
    }

    #[test]
    fn win_matrix_is_antisymmetric_and_matches_enumeration(seed in any::<u64>(), datasets in 1usize..6, trials in 2usize..6) {
        let methods: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let runs = common::synthetic_runs(seed, datasets, &methods, trials);
        let m = win_matrix(&runs, &methods, 0.05);
        let (wins, losses) = common::brute_force_wins(&runs, &methods, 0.05);
        prop_assert_eq!(&m.wins, &wins);
        prop_assert_eq!(&m.losses, &losses);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(m.wins[i][j], m.losses[j][i]);
            }
        }
    }

    #[test]
    fn results_round_trip(seed in any::<u64>()) {
        let methods = vec!["control".to_string(), "scarf".to_string()];
        let mut runs = common::synthetic_runs(seed, 2, &methods, 3);
        runs[0].pretrain_epochs = Some(7);
        runs[0].pretrain_stop_reason = Some(scarf::training::StopReason::MaxEpochs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_runs(&path, &runs).unwrap();
        prop_assert_eq!(read_runs(&path).unwrap(), runs);
    }
}

#[test]
fn store_resumes_and_tolerates_a_torn_last_line() {
    let methods = vec!["control".to_string()];
    let runs = common::synthetic_runs(1, 1, &methods, 3);
    let dir = tempfile::tempdir().unwrap();
    {
        let mut store = ResultsStore::open(dir.path()).unwrap();
        for r in &runs[..2] {
            store.append_run(r, 1.5).unwrap();
        }
    }
    let path = dir.path().join(scarf::eval::RESULTS_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"dataset_id\":\"d0\",\"meth");
    std::fs::write(&path, text).unwrap();
    let mut store = ResultsStore::open(dir.path()).unwrap();
    assert_eq!(store.completed(), 2);
    assert!(store.is_complete(&runs[1].key()));
    assert!(!store.is_complete(&runs[2].key()));
    let timings = std::fs::read_to_string(dir.path().join(scarf::eval::TIMINGS_FILE)).unwrap();
    assert_eq!(timings.lines().count(), 2);
    assert!(!std::fs::read_to_string(&path).unwrap().contains("wall_time"));
    store.append_run(&runs[2], 0.1).unwrap();
    assert_eq!(read_runs(&path).unwrap(), runs);
}

#[test]
fn config_round_trips_through_toml() {
    let mut c = ExperimentConfig::default();
    c.method = "scarf+mixup".into();
    c.trials = 4;
    c.corruption_rate = 0.3;
    let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, c);
    assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    assert!(ExperimentConfig::from_toml_str("trails = 3").is_err());
}

#[test]
fn defaults_follow_the_published_protocol() {
    let c = ExperimentConfig::default();
    assert_eq!((c.batch_size, c.learning_rate, c.corruption_rate, c.temperature), (128, 0.001, 0.6, 1.0));
    assert_eq!((c.patience, c.pretrain_max_epochs, c.finetune_max_epochs, c.val_build_epochs), (3, 1000, 200, 10));
    assert_eq!((c.trials, c.cotrain_lambda, c.label_smoothing, c.dropout, c.mixup_alpha), (30, 0.1, 0.1, 0.04, 0.2));
    assert_eq!((c.self_train_threshold, c.self_train_iterations), (0.75, 10));
}
