//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print. The
//! process fails if any check outside `KNOWN_FAILURES` fails.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use rmd_core::dist::chisq_quantile;
use rmd_core::entrygame::{game_jac_alpha, population, GameParams};
use rmd_core::harness::{
    run_null_distribution, run_power_experiment, run_rank_consistency, run_size_experiment, DgpSpec, ExperimentKind,
    ExperimentReport, ExperimentRows, McConfig, RankRow, SizeRow,
};
use rmd_core::linalg::{estimate_rank, singular_values, truncated_pinv};
use rmd_core::power::{
    local_power, local_power_from_noncentrality, max_power_direction, noncentrality, nuisance_projected_weight,
    power_matrix,
};
use rmd_core::rng::rng_from;
use rmd_core::model::{LinearModel, StructuralModel};

/// Checks expected to fail; each one has a written explanation in the project notes.
const KNOWN_FAILURES: &[&str] = &["1", "7-unprofiled", "9-lower"];

const N: usize = 1000;
const R: usize = 2000;

struct Tally {
    unexpected: Vec<String>,
}

impl Tally {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        let status = if pass { "PASS" } else { "FAIL" };
        let known = if !pass && KNOWN_FAILURES.contains(&id) { " (known)" } else { "" };
        println!("[{status}] criterion {id}: {detail}{known}");
        if !pass && known.is_empty() {
            self.unexpected.push(id.to_string());
        }
    }
}

fn size_rows(rep: &ExperimentReport) -> &[SizeRow] {
    match &rep.rows {
        ExperimentRows::Size(rows) => rows,
        _ => panic!("expected size rows"),
    }
}

fn rank_row(rep: &ExperimentReport) -> &RankRow {
    match &rep.rows {
        ExperimentRows::Rank(rows) => &rows[0],
        _ => panic!("expected rank rows"),
    }
}

fn rate(rows: &[SizeRow], test: &str, beta: f64) -> f64 {
    rows.iter()
        .find(|r| r.test == test && (r.beta_dgp - beta).abs() < 1e-12)
        .map(|r| r.rejection_rate)
        .expect("row present")
}

fn config(dgp: &str, kind: ExperimentKind) -> McConfig {
    McConfig {
        dgp: DgpSpec::Named(dgp.into()),
        sample_sizes: vec![N],
        replications: R,
        experiment: kind,
        ..McConfig::default()
    }
}

fn quantile(t: &mut Tally) {
    let q = chisq_quantile(0.95, 4).unwrap();
    t.check("1", (q - 9.487).abs() <= 5e-4, format!("chisq_quantile(0.95, 4) = {q:.7}, target 9.487 +- 5e-4"));
    // Closed form for four degrees of freedom: sf(x) = exp(-x/2)(1 + x/2).
    let sf = (-q / 2.0).exp() * (1.0 + q / 2.0);
    t.check(
        "1-exact",
        (sf - 0.05).abs() < 1e-12 && (q * 1000.0).floor() / 1000.0 == 9.487,
        format!("closed-form tail at q is {sf:.3e}, q truncates to {:.3}", (q * 1000.0).floor() / 1000.0),
    );
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn tables(t: &mut Tally) {
    let one = run_size_experiment(&config("identified", ExperimentKind::Size)).unwrap();
    let rows = size_rows(&one);
    let (o, r, tt) = (rate(rows, "Oracle", 1.5), rate(rows, "Robust", 1.5), rate(rows, "T-test", 1.5));
    t.check(
        "2",
        in_range(o, 0.025, 0.065) && in_range(r, 0.025, 0.065) && in_range(tt, 0.029, 0.069),
        format!("identified game n={N} R={R}: Oracle {o:.4}, Robust {r:.4}, T-test {tt:.4}"),
    );

    let two = run_size_experiment(&config("unidentified", ExperimentKind::Size)).unwrap();
    let rows = size_rows(&two);
    let (o, r, tt) = (rate(rows, "Oracle", 0.3), rate(rows, "Robust", 0.3), rate(rows, "T-test", 0.3));
    t.check(
        "3",
        in_range(o, 0.03, 0.07) && in_range(r, 0.03, 0.07) && tt >= 0.09,
        format!("unidentified game n={N} R={R}: Oracle {o:.4}, Robust {r:.4}, T-test {tt:.4}"),
    );
}

fn ranks(t: &mut Tally) {
    for (dgp, want) in [("unidentified", 2), ("identified", 3)] {
        let rep = run_rank_consistency(&config(dgp, ExperimentKind::Rank)).unwrap();
        let row = rank_row(&rep);
        assert_eq!(row.true_r_alpha, want);
        t.check(
            &format!("4-{dgp}"),
            row.freq_r_alpha_correct >= 0.95 && row.freq_df_correct >= 0.95,
            format!(
                "{dgp} game: freq(r_alpha_hat = {want}) = {:.4}, freq(d_hat = d) = {:.4}",
                row.freq_r_alpha_correct, row.freq_df_correct
            ),
        );
    }
}

fn null_distribution(t: &mut Tally) {
    let rep = run_null_distribution(&config("identified", ExperimentKind::NullDist)).unwrap();
    let ExperimentRows::NullDist(rows) = &rep.rows else { panic!("expected null-dist rows") };
    let row = &rows[0];
    t.check(
        "5",
        row.ks_pass,
        format!(
            "linear-Gaussian design, {R} statistics vs chi2({}): KS {:.4} < {:.4}",
            row.df, row.ks_statistic, row.ks_critical_1pct
        ),
    );
}

fn random_orthogonal(m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn pinv_identities(t: &mut Tally) {
    let mut rng = rng_from(606);
    let mut worst: f64 = 0.0;
    let mut rank_ok = true;
    for _ in 0..100 {
        let m = rng.random_range(2..=8);
        let r = rng.random_range(0..m);
        let n = [100usize, 1000, 10_000][rng.random_range(0..3)];
        let q = random_orthogonal(m, &mut rng);
        // Planted spectrum: r eigenvalues well above n^-b, the rest at or below noise level.
        let eig = DVector::from_fn(m, |i, _| {
            if i < r {
                rng.random_range(0.05..10.0)
            } else {
                rng.random_range(0.0..1e-6)
            }
        });
        let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let tp = truncated_pinv(&a, n, 0.99).unwrap();
        let at = &tp.truncated_source;
        let err = (at * &tp.matrix * at - at).norm() / (1.0 + at.norm());
        worst = worst.max(err);
        let r_hat = estimate_rank(&a, n, 0.99).unwrap().rank;
        let w_rank = singular_values(&tp.matrix).iter().filter(|&&s| s > 1e-9).count();
        rank_ok &= tp.rank == r_hat && w_rank == r_hat && r_hat == r;
    }
    t.check(
        "6",
        worst <= 1e-8 && rank_ok,
        format!("100 planted-rank PSD matrices: max |A W A - A|_F/(1+|A|_F) = {worst:.2e}, ranks agree: {rank_ok}"),
    );
}

fn local_power_calibration(t: &mut Tally) {
    let params = GameParams::identified();
    let pop = population(&params).unwrap();
    let d = pop.df() as usize;
    let profiled = nuisance_projected_weight(&pop.weight, &pop.grad_alpha).unwrap();
    // The equilibrium branch folds just above beta = 1.5, so the drift is taken downward.
    let deltas = [-5.0, -7.0];
    let mut cfg = config("identified", ExperimentKind::Power);
    cfg.beta_grid = deltas.iter().map(|dl| params.beta + dl / (N as f64).sqrt()).collect();
    cfg.tests = vec![rmd_core::harness::TestKind::Robust];
    let rep = run_power_experiment(&cfg).unwrap();
    let rows = size_rows(&rep);
    let mut ok_p = true;
    let mut ok_u = true;
    let mut detail_p = Vec::new();
    let mut detail_u = Vec::new();
    for (&dl, &b) in deltas.iter().zip(&cfg.beta_grid) {
        let sim = rate(rows, "Robust", b);
        let delta = DVector::from_element(1, dl);
        let kp = noncentrality(&pop.grad_beta, &profiled, &delta).unwrap();
        let ku = noncentrality(&pop.grad_beta, &pop.weight, &delta).unwrap();
        let pp = local_power_from_noncentrality(kp, d, 0.05).unwrap();
        let pu = local_power_from_noncentrality(ku, d, 0.05).unwrap();
        ok_p &= (sim - pp).abs() <= 0.03;
        ok_u &= (sim - pu).abs() <= 0.03;
        detail_p.push(format!("delta {dl}: k {kp:.3}, predicted {pp:.4}, simulated {sim:.4}"));
        detail_u.push(format!("delta {dl}: k {ku:.3}, predicted {pu:.4}, simulated {sim:.4}"));
    }
    t.check("7", ok_p, format!("profiled noncentrality, {}", detail_p.join("; ")));
    t.check("7-unprofiled", ok_u, format!("k = delta' Jb' W Jb delta, {}", detail_u.join("; ")));
}

fn power_iteration(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let mut v = DVector::from_fn(m.nrows(), |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    for _ in 0..1_000_000 {
        let w = m * &v;
        let next = &w / w.norm();
        let step = (&next - &v).norm();
        v = next;
        if step < 1e-15 {
            break;
        }
    }
    let lambda = (v.transpose() * m * &v)[(0, 0)];
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-14).copied() {
        if first < 0.0 {
            v = -v;
        }
    }
    (v, lambda)
}

fn max_power(t: &mut Tally) {
    let mut rng = rng_from(808);
    let mut worst_vec: f64 = 0.0;
    let mut worst_k: f64 = 0.0;
    let mut optimal = true;
    for case in 0..20 {
        let (m, q, p) = (6, 2, 3);
        let k = DMatrix::from_fn(m, m, |_, _| 0.1 * rng.random_range(-1.0..1.0));
        let dmat = DMatrix::from_fn(m, q, |_, _| rng.random_range(-1.0..1.0));
        let e = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let model = LinearModel::new(k, dmat, e, c).unwrap();
        let alpha = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
        let beta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let theta = model.fixed_point(&alpha, &beta).unwrap();
        let l = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let w = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
        let dir = max_power_direction(&model, &theta, &alpha, &beta, &w).unwrap();
        let jb = model.analytic_jac_beta(&theta, &alpha, &beta).unwrap();
        let (v, lambda) = power_iteration(&power_matrix(&jb, &w).unwrap());
        worst_vec = worst_vec.max((&v - &dir.delta_star).amax());
        worst_k = worst_k.max((lambda - dir.k_star).abs() / lambda.max(1.0));
        if case < 5 {
            let best = local_power(&dir.delta_star, &model, &theta, &alpha, &beta, &w, 3, 0.05).unwrap();
            for _ in 0..20 {
                let mut u = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                u /= u.norm();
                let other = local_power(&u, &model, &theta, &alpha, &beta, &w, 3, 0.05).unwrap();
                optimal &= best >= other - 1e-12;
            }
        }
    }
    t.check(
        "8",
        worst_vec <= 1e-8 && worst_k <= 1e-8 && optimal,
        format!(
            "20 random designs vs power iteration: max |delta diff| {worst_vec:.2e}, k rel diff {worst_k:.2e}; \
             delta* beats 100 random unit directions: {optimal}"
        ),
    );
}

fn power_consistency(t: &mut Tally) {
    let mut cfg = config("unidentified", ExperimentKind::Power);
    cfg.replications = 1000;
    cfg.beta_grid = vec![0.3 - 1.0, 0.3 + 1.0];
    cfg.tests = vec![rmd_core::harness::TestKind::Robust];
    let rep = run_power_experiment(&cfg).unwrap();
    let rows = size_rows(&rep);
    for (label, b) in [("9-lower", -0.7), ("9-upper", 1.3)] {
        let p = rate(rows, "Robust", b);
        t.check(
            label,
            p >= 0.9,
            format!("unidentified game, beta_alt = {b}, n={N}, R=1000: robust power {p:.4}"),
        );
    }
}

fn jacobian(t: &mut Tally) {
    let mut rng = rng_from(1010);
    let states = GameParams::identified().states;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta = DVector::from_fn(6, |_, _| rng.random_range(0.05..0.95));
        let alpha = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let beta: f64 = rng.random_range(-3.0..3.0);
        let analytic = game_jac_alpha(&states, &theta, &alpha, beta);
        let h = 1e-6;
        for j in 0..3 {
            let mut up = alpha.clone();
            let mut dn = alpha.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (rmd_core::entrygame::game_g(&states, &theta, &up, beta)
                - rmd_core::entrygame::game_g(&states, &theta, &dn, beta))
                / (2.0 * h);
            worst = worst.max((fd - analytic.column(j)).amax());
        }
    }
    let half = DVector::from_element(6, 0.5);
    let mut third_sv: f64 = 0.0;
    for _ in 0..20 {
        let alpha = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let beta: f64 = rng.random_range(-3.0..3.0);
        third_sv = third_sv.max(singular_values(&game_jac_alpha(&states, &half, &alpha, beta))[2]);
    }
    t.check(
        "10",
        worst <= 1e-6 && third_sv <= 1e-10,
        format!("max |analytic - FD| over 50 points {worst:.2e}; largest third singular value at theta = 1/2: {third_sv:.2e}"),
    );
}

fn main() {
    let mut tally = Tally { unexpected: Vec::new() };
    quantile(&mut tally);
    tables(&mut tally);
    ranks(&mut tally);
    null_distribution(&mut tally);
    pinv_identities(&mut tally);
    local_power_calibration(&mut tally);
    max_power(&mut tally);
    power_consistency(&mut tally);
    jacobian(&mut tally);
    if tally.unexpected.is_empty() {
        println!("acceptance: all checks passed except documented known failures");
    } else {
        println!("acceptance: unexpected failures: {}", tally.unexpected.join(", "));
        std::process::exit(1);
    }
}
