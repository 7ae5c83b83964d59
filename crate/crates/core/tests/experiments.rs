use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use stein_subspace::estimators::NearZeroPolicy;
use stein_subspace::experiments::checks::run_checks;
use stein_subspace::experiments::semi::SemiSupervisedStudy;
use stein_subspace::experiments::{
    aggregate_median, check_pca_equivalence, child_seed, fit_rate_slope, median, rate_slopes, records_to_csv,
    run_sweep, run_sweep_serial, write_sweep_outputs, ExperimentConfig, GroupKey, Method, ResultRecord, ScoreMode,
};
use stein_subspace::simulation::{DistributionChoice, Mechanism};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        distributions: vec![DistributionChoice::Gaussian, DistributionChoice::StudentT { nu: None }],
        mechanisms: vec![Mechanism::Linear, Mechanism::NonlinearFixed],
        methods: vec![Method::FirstOrder, Method::SecondOrder, Method::Rrr],
        score_modes: vec![ScoreMode::Known, ScoreMode::PlugIn],
        n_grid: vec![100, 200, 400],
        p_grid: vec![5],
        q: 4,
        r: 2,
        repetitions: 3,
        ..ExperimentConfig::desk()
    }
}

fn record(method: &str, n: usize, rep: usize, distance: Option<f64>) -> ResultRecord {
    ResultRecord {
        method: method.into(),
        dist_kind: "gaussian".into(),
        link_mech: "linear".into(),
        score_mode: "known".into(),
        p: 5,
        q: 4,
        r: 2,
        sigma_eps: 0.5,
        n,
        rep,
        seed: 0,
        distance,
        wall_ms: None,
        warnings: vec![],
    }
}

#[test]
fn median_examples() {
    assert_eq!(median(&[]), None);
    assert_eq!(median(&[3.0]), Some(3.0));
    assert_eq!(median(&[4.0, 1.0, 3.0]), Some(3.0));
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
}

#[test]
fn child_seed_is_prefix_of_digest() {
    let mut h = Sha256::new();
    h.update(7u64.to_le_bytes());
    h.update(b"point");
    h.update(3u64.to_le_bytes());
    let digest = h.finalize();
    let expected = u64::from_le_bytes(digest[..8].try_into().unwrap());
    assert_eq!(child_seed(7, "point", 3), expected);
    assert_ne!(child_seed(7, "point", 3), child_seed(7, "point", 4));
    assert_ne!(child_seed(7, "point", 3), child_seed(8, "point", 3));
    assert_ne!(child_seed(7, "point", 3), child_seed(7, "other", 3));
}

#[test]
fn slope_of_exact_power_law() {
    let pts: Vec<(f64, f64)> = [100.0f64, 200.0, 400.0, 800.0].iter().map(|&n| (n, 3.0 * n.powf(-0.5))).collect();
    let fit = fit_rate_slope(&pts).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
    assert_eq!((fit.points, fit.excluded), (4, 0));
}

#[test]
fn slope_excludes_unusable_points() {
    let pts = vec![(100.0, 1.0), (200.0, 0.0), (400.0, 0.5), (800.0, f64::NAN), (1600.0, 0.25)];
    let fit = fit_rate_slope(&pts).unwrap();
    assert_eq!((fit.points, fit.excluded), (3, 2));
    assert!(fit_rate_slope(&pts[..3]).is_err());
    assert!(fit_rate_slope(&[(5.0, 1.0), (5.0, 2.0), (5.0, 3.0)]).is_err());
}

#[test]
fn aggregation_counts_failures_and_skips_them() {
    let recs = vec![
        record("first-order", 100, 0, Some(0.3)),
        record("first-order", 100, 1, None),
        record("first-order", 100, 2, Some(0.1)),
        record("rrr", 100, 0, None),
    ];
    let rows = aggregate_median(&recs, &[GroupKey::Method, GroupKey::N]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].group, vec!["first-order".to_string(), "100".to_string()]);
    assert_eq!((rows[0].n_ok, rows[0].n_failed), (2, 1));
    assert!((rows[0].median.unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(rows[1].median, None);
}

#[test]
fn slopes_come_from_medians_over_n() {
    let mut recs = Vec::new();
    for n in [100usize, 400, 1600] {
        for (rep, scale) in [0.9, 1.0, 1.1].into_iter().enumerate() {
            recs.push(record("first-order", n, rep, Some(scale * (n as f64).powf(-0.5))));
        }
    }
    let rows = rate_slopes(&recs);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].fit.as_ref().unwrap().slope + 0.5).abs() < 1e-12);

    recs.retain(|r| r.n != 1600);
    let rows = rate_slopes(&recs);
    assert!(rows[0].fit.is_none() && rows[0].note.is_some());
}

#[test]
fn sweep_is_deterministic_and_schedule_independent() {
    let cfg = small_config();
    let a = run_sweep(&cfg).unwrap();
    let b = run_sweep(&cfg).unwrap();
    let serial = run_sweep_serial(&cfg).unwrap();
    assert_eq!(a.len(), 2 * 2 * 3 * 3 * 5);
    assert_eq!(records_to_csv(&a).unwrap(), records_to_csv(&b).unwrap());
    assert_eq!(a, serial);
    assert!(a.iter().all(|r| r.wall_ms.is_none()));
    assert!(a.iter().filter(|r| r.method == "rrr").all(|r| r.distance.is_some()));
    // Second-order on linear links meets a vanishing moment and is flagged.
    assert!(a
        .iter()
        .filter(|r| r.method == "second-order" && r.link_mech == "linear")
        .any(|r| !r.warnings.is_empty()));
}

#[test]
fn failing_policy_records_missing_distances() {
    let cfg = ExperimentConfig {
        mechanisms: vec![Mechanism::Linear],
        methods: vec![Method::SecondOrder],
        score_modes: vec![ScoreMode::Known],
        near_zero: NearZeroPolicy::Fail,
        ..small_config()
    };
    let recs = run_sweep(&cfg).unwrap();
    let failed = recs.iter().filter(|r| r.distance.is_none()).count();
    assert!(failed > 0);
    assert!(recs.iter().filter(|r| r.distance.is_none()).all(|r| !r.warnings.is_empty()));
}

#[test]
fn master_seed_changes_results() {
    let cfg = small_config();
    let other = ExperimentConfig {
        master_seed: cfg.master_seed + 1,
        ..cfg.clone()
    };
    let (a, b) = (run_sweep(&cfg).unwrap(), run_sweep(&other).unwrap());
    assert_ne!(a[0].seed, b[0].seed);
    assert_ne!(a[0].distance, b[0].distance);
}

#[test]
fn invalid_sweeps_are_rejected() {
    let mut cfg = small_config();
    cfg.n_grid.clear();
    assert!(run_sweep(&cfg).is_err());
    let cfg = ExperimentConfig {
        q: 5,
        ..small_config()
    };
    assert!(run_sweep(&cfg).unwrap_err().to_string().contains("q must be even"));
}

#[test]
fn sweep_outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        distributions: vec![DistributionChoice::Gaussian],
        mechanisms: vec![Mechanism::Linear],
        methods: vec![Method::FirstOrder],
        score_modes: vec![ScoreMode::Known],
        ..small_config()
    };
    let recs = run_sweep(&cfg).unwrap();
    write_sweep_outputs(dir.path(), &cfg, &recs).unwrap();
    for f in ["results.csv", "medians.csv", "slopes.json", "config.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + recs.len());
    let medians = std::fs::read_to_string(dir.path().join("medians.csv")).unwrap();
    assert_eq!(medians.lines().count(), 1 + 3);
    let back: ExperimentConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn plugin_first_order_on_design_is_pca() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scales = [3.0, 2.0, 1.5, 1.0, 0.5, 0.2];
    let x = nalgebra::DMatrix::from_fn(500, 6, |_, j| scales[j] * rng.sample::<f64, _>(StandardNormal));
    let eq = check_pca_equivalence(&x, 3).unwrap();
    assert!(!eq.degenerate);
    assert!(eq.distance < 1e-8, "{}", eq.distance);
}

#[test]
fn semi_supervised_study_is_reproducible() {
    let study = SemiSupervisedStudy {
        p: 10,
        n_test: 50,
        n_train: 40,
        n_labeled: 20,
        n_pool: 100,
        repetitions: 2,
        ..SemiSupervisedStudy::default()
    };
    let a = study.run().unwrap();
    let b = study.run().unwrap();
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.semi.pmse, y.semi.pmse);
        assert_eq!(x.labeled_only.distance, y.labeled_only.distance);
        for arm in [&x.semi, &x.unsupervised, &x.labeled_only] {
            assert!(arm.pmse.is_finite() && arm.pmse > 0.0);
            assert!(arm.distance >= 0.0 && arm.distance <= (2.0 * study.r as f64).sqrt() + 1e-12);
        }
    }
}

#[test]
fn self_check_battery_passes() {
    let outcomes = run_checks(20240601).unwrap();
    assert!(!outcomes.is_empty());
    for o in &outcomes {
        assert!(o.passed, "{}: {}", o.name, o.detail);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn median_matches_sorted_oracle(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let mut s = v.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = s.len();
        let oracle = if k % 2 == 1 { s[k / 2] } else { (s[k / 2 - 1] + s[k / 2]) / 2.0 };
        prop_assert_eq!(median(&v), Some(oracle));
        let below = v.iter().filter(|&&x| x < oracle).count();
        let above = v.iter().filter(|&&x| x > oracle).count();
        prop_assert!(below <= k / 2 && above <= k / 2);
    }

    #[test]
    fn slope_recovers_planted_exponent(a in -2.0f64..0.5, c in 0.01f64..10.0) {
        let pts: Vec<(f64, f64)> = [50.0f64, 150.0, 450.0, 1350.0].iter().map(|&n| (n, c * n.powf(a))).collect();
        let fit = fit_rate_slope(&pts).unwrap();
        prop_assert!((fit.slope - a).abs() < 1e-10);
    }
}
