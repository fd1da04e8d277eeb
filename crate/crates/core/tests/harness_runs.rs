use rand::Rng;
use rand_distr::StandardNormal;
use rmd_core::dist::{chisq_cdf, std_normal_cdf};
use rmd_core::entrygame::GameParams;
use rmd_core::harness::{
    ks_critical_1pct, ks_statistic, run_experiment, run_power_experiment, run_rank_consistency, run_size_experiment,
    DgpSpec, ExperimentKind, ExperimentRows, McConfig, SizeRow, TestKind,
};
use rmd_core::rng::rng_from;
use rmd_core::Error;

fn small(dgp: &str, n: usize, reps: usize) -> McConfig {
    McConfig {
        dgp: DgpSpec::Named(dgp.into()),
        sample_sizes: vec![n],
        replications: reps,
        ..McConfig::default()
    }
}

fn size_rows(rows: &ExperimentRows) -> &[SizeRow] {
    match rows {
        ExperimentRows::Size(r) => r,
        other => panic!("expected size rows, got {other:?}"),
    }
}

#[test]
fn results_do_not_depend_on_scheduling() {
    let cfg = small("identified", 300, 24);
    let a = run_size_experiment(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| run_size_experiment(&cfg).unwrap());
    assert_eq!(
        serde_json::to_string(&a.rows).unwrap(),
        serde_json::to_string(&b.rows).unwrap()
    );
    let other = run_size_experiment(&McConfig {
        master_seed: 7,
        ..cfg.clone()
    })
    .unwrap();
    assert_ne!(
        serde_json::to_string(&a.rows).unwrap(),
        serde_json::to_string(&other.rows).unwrap()
    );
}

#[test]
fn level_near_one_rejects_everything() {
    let cfg = McConfig {
        tau: 1.0 - 1e-9,
        ..small("identified", 300, 20)
    };
    let rep = run_size_experiment(&cfg).unwrap();
    let rows = size_rows(&rep.rows);
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row.rejection_rate, 1.0, "{}", row.test);
        assert_eq!(row.mc_std_error, 0.0);
    }
}

#[test]
fn null_point_of_a_power_curve_is_a_size() {
    let cfg = McConfig {
        experiment: ExperimentKind::Power,
        beta_grid: vec![1.5, 1.0],
        tests: vec![TestKind::Robust],
        ..small("identified", 1000, 200)
    };
    let rep = run_power_experiment(&cfg).unwrap();
    let rows = size_rows(&rep.rows);
    let at_null = rows.iter().find(|r| r.beta_dgp == 1.5).unwrap();
    assert!(at_null.rejection_rate <= 0.1, "{}", at_null.rejection_rate);
    let away = rows.iter().find(|r| r.beta_dgp == 1.0).unwrap();
    assert!(away.rejection_rate > at_null.rejection_rate);
    for r in rows {
        let se = (r.rejection_rate * (1.0 - r.rejection_rate) / r.successes as f64).sqrt();
        assert!((r.mc_std_error - se).abs() < 1e-12);
    }
}

fn rank_rows(dgp: &str) -> Vec<rmd_core::harness::RankRow> {
    let cfg = McConfig {
        experiment: ExperimentKind::Rank,
        sample_sizes: vec![100, 1000],
        ..small(dgp, 100, 200)
    };
    match run_rank_consistency(&cfg).unwrap().rows {
        ExperimentRows::Rank(rows) => rows,
        other => panic!("expected rank rows, got {other:?}"),
    }
}

// The identified design's smallest nuisance eigenvalue has to clear the
// threshold; the unidentified design's zero eigenvalue is already below it at n = 100.
#[test]
fn rank_recovery_by_sample_size() {
    let id = rank_rows("identified");
    assert_eq!(id[0].true_r_alpha, 3);
    assert!(id[1].freq_r_alpha_correct > id[0].freq_r_alpha_correct);
    assert!(id[1].freq_r_alpha_correct >= 0.95);

    let un = rank_rows("unidentified");
    assert_eq!(un[0].true_r_alpha, 2);
    assert!(un.iter().all(|r| r.freq_r_alpha_correct >= 0.95 && r.freq_r_sigma_correct == 1.0));
}

#[test]
fn error_budget_is_enforced() {
    let skewed = GameParams {
        state_probs: [0.96, 0.02, 0.02],
        ..GameParams::identified()
    };
    let cfg = McConfig {
        dgp: DgpSpec::Params(skewed),
        ..small("identified", 100, 20)
    };
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, Error::ErrorBudget { replications: 20, .. }));
}

#[test]
fn ks_against_the_sampling_law() {
    let mut rng = rng_from(12);
    let normal: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
    assert!(ks_statistic(&normal, std_normal_cdf).unwrap() < ks_critical_1pct(2000));
    let chi2: Vec<f64> = (0..2000)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            a * a + b * b
        })
        .collect();
    let d = ks_statistic(&chi2, |x| chisq_cdf(x, 2).unwrap()).unwrap();
    assert!(d < ks_critical_1pct(2000));
    // Wrong degrees of freedom are detected.
    assert!(ks_statistic(&chi2, |x| chisq_cdf(x, 4).unwrap()).unwrap() > ks_critical_1pct(2000));
}

#[test]
fn config_files() {
    let cfg: McConfig = serde_json::from_str(
        r#"{"dgp": "unidentified", "sample_sizes": [250, 1000], "replications": 50,
            "tests": ["Robust", "T-test"], "lambda": {"fixed": 0.001}}"#,
    )
    .unwrap();
    assert_eq!(cfg.tests, vec![TestKind::Robust, TestKind::TTest]);
    cfg.validate().unwrap();
    let back: McConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);

    let explicit: McConfig = serde_json::from_str(
        r#"{"dgp": {"beta": 1.2, "alpha1": -0.4, "alpha2": 0.3, "alpha3": 0.1}}"#,
    )
    .unwrap();
    assert_eq!(explicit.dgp.params().unwrap().states, [1.0, 2.0, 3.0]);

    assert!(serde_json::from_str::<McConfig>(r#"{"replication": 5}"#).is_err());
    for bad in [
        McConfig { sample_sizes: vec![40], ..McConfig::default() },
        McConfig { tau: 1.0, ..McConfig::default() },
        McConfig { replications: 0, ..McConfig::default() },
        McConfig { experiment: ExperimentKind::Power, ..McConfig::default() },
        McConfig { dgp: DgpSpec::Named("dgp9".into()), ..McConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
