//! Acceptance suite: every criterion of the reference study runs here at its
//! stated tolerance and prints one pass/fail line. The heavy reference-study
//! experiment (s = 4, theta = 2, X0 = 0.25, dt = 1e-3, T in {1, 2, 10, 50})
//! is shared by the criteria that consume it.

use std::sync::LazyLock;
use std::time::Instant;

use wflab_core::diffusion::{
    check_uniform_ergodicity, hitting_moment, kappa_l, regeneration_rate, InitialLaw,
};
use wflab_core::estimate::{
    bayes_estimator, lan_remainder_with, lan_statistic, mle_riemann, mle_score, posterior_density,
    sufficient_stats, Loss, Prior, SufficientStats,
};
use wflab_core::lab::{
    run_martingale_and_hellinger, run_normality_experiment, write_report_files, EstimatorChoice,
    ExperimentConfig, ExperimentReport,
};
use wflab_core::quad::{Interval, QuadConfig};
use wflab_core::rng::{mix_seed, replicate_rng};
use wflab_core::simulate::{first_hitting_time, simulate_path, upcrossing_count, Rule, SimConfig};
use wflab_core::stats::{mean_variance, median};
use wflab_core::wright_fisher::{fisher_matrix, WfParams};

const MASTER_SEED: u64 = 20260809;

fn study_params() -> WfParams {
    WfParams::new(4.0, 2.0, 2.0).unwrap()
}

fn study_config(estimator: EstimatorChoice) -> ExperimentConfig {
    ExperimentConfig {
        params: study_params(),
        t_list: vec![1.0, 2.0, 10.0, 50.0],
        dt: 0.001,
        replicates: vec![10_000, 10_000, 2_000, 2_000],
        master_seed: MASTER_SEED,
        estimator,
        start: InitialLaw::Fixed(0.25),
    }
}

// The study runs once per estimator variant. The Riemann-sum form is the
// object plotted in the reference figure (its finite-T bias is what visibly
// melts away as T grows), while the score form is the exact likelihood
// maximizer whose sample mean and variance match the limit law.
static STUDY_RIEMANN: LazyLock<ExperimentReport> = LazyLock::new(|| {
    let start = Instant::now();
    let report = run_normality_experiment(&study_config(EstimatorChoice::MleRiemann))
        .expect("reference-study experiment runs");
    eprintln!(
        "[reference-study riemann experiment: {:.1} s wall]",
        start.elapsed().as_secs_f64()
    );
    report
});

static STUDY_SCORE: LazyLock<ExperimentReport> = LazyLock::new(|| {
    let start = Instant::now();
    let report = run_normality_experiment(&study_config(EstimatorChoice::MleScore))
        .expect("reference-study experiment runs");
    eprintln!(
        "[reference-study score experiment: {:.1} s wall]",
        start.elapsed().as_secs_f64()
    );
    report
});

fn check(criterion: &str, ok: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} - {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

#[test]
fn acceptance_01_reference_study_reproduction() {
    let start = Instant::now();

    // (a) the figure's object: the Riemann-sum estimator of the reference
    // study, whose distance to the limit law visibly shrinks with T
    let riemann = &*STUDY_RIEMANN;
    let ks: Vec<f64> = riemann.per_t.iter().map(|t| t.ks_distance).collect();
    let nonincreasing = ks.windows(2).all(|w| w[1] <= w[0]);
    let last_r = riemann.per_t.last().unwrap();
    check(
        "01a",
        nonincreasing && last_r.ks_distance <= 0.06,
        &format!("KS over T = {ks:?}, final <= 0.06"),
    );

    // (b), (c) normality of the exact likelihood maximizer at T = 50
    let score = &*STUDY_SCORE;
    let i_inv = 1.0 / score.fisher_information;
    let last = score.per_t.last().unwrap();
    let n_eff = (last.requested - last.excluded) as f64;
    let band = 3.0 * (i_inv / n_eff).sqrt();
    check(
        "01b",
        last.mean.abs() <= band,
        &format!("mean rescaled error {:.4} within +/-{:.4}", last.mean, band),
    );

    let rel = (last.variance - i_inv).abs() / i_inv;
    check(
        "01c",
        rel <= 0.15,
        &format!(
            "variance {:.4} vs 1/I(s) {:.4} (rel dev {:.3})",
            last.variance, i_inv, rel
        ),
    );
    check(
        "01-runtime",
        start.elapsed().as_secs_f64() <= 180.0,
        &format!("{:.1} s (target 180 s)", start.elapsed().as_secs_f64()),
    );
}

#[test]
fn acceptance_02_consistency_trend() {
    for (name, report) in [("score", &*STUDY_SCORE), ("riemann", &*STUDY_RIEMANN)] {
        let means: Vec<f64> = report.per_t.iter().map(|t| t.mean_abs_error).collect();
        let decreasing = means.windows(2).all(|w| w[1] < w[0]);
        check(
            "02",
            decreasing,
            &format!("{name}: mean |estimate - s| over T = {means:?}"),
        );
    }
}

#[test]
fn acceptance_02b_estimator_variants_agree_at_t50() {
    // asymptotic equivalence: the two variants' rescaled-error means differ
    // by at most three pooled standard errors at the longest horizon
    let a = STUDY_SCORE.per_t.last().unwrap();
    let b = STUDY_RIEMANN.per_t.last().unwrap();
    let na = (a.requested - a.excluded) as f64;
    let nb = (b.requested - b.excluded) as f64;
    let pooled = (a.variance / na + b.variance / nb).sqrt();
    let diff = (a.mean - b.mean).abs();
    check(
        "02b",
        diff <= 3.0 * pooled,
        &format!(
            "mean difference {diff:.4} vs 3 pooled se {:.4}",
            3.0 * pooled
        ),
    );
}

#[test]
fn acceptance_03_martingale_check() {
    let start = Instant::now();
    let params = study_params();
    let space = Interval::new(-8.0, 16.0).unwrap();
    let report = run_martingale_and_hellinger(
        &params,
        &[1.0],
        &[],
        1.0,
        0.001,
        5_000,
        InitialLaw::Fixed(0.25),
        space,
        mix_seed(MASTER_SEED, 3),
    )
    .unwrap();
    let u = &report.per_u[0];
    let dev = (u.mean_z - 1.0).abs();
    check(
        "03",
        dev <= 3.0 * u.se_z,
        &format!("|E[Z] - 1| = {:.4e} vs 3 se = {:.4e}", dev, 3.0 * u.se_z),
    );
    let elapsed = start.elapsed().as_secs_f64();
    check("03-runtime", elapsed <= 20.0, &format!("{elapsed:.1} s (target 20 s)"));
}

#[test]
fn acceptance_04_hellinger_scaling() {
    let params = study_params();
    let space = Interval::new(-8.0, 16.0).unwrap();
    let seed = mix_seed(MASTER_SEED, 4);

    let slope_rep = run_martingale_and_hellinger(
        &params,
        &[0.25, 0.5, 1.0, 2.0],
        &[0.0, 0.0, 0.0, 0.0],
        1.0,
        0.001,
        5_000,
        InitialLaw::Fixed(0.25),
        space,
        seed,
    )
    .unwrap();
    let slope = slope_rep.hellinger_slope;
    check(
        "04a",
        (1.7..=2.3).contains(&slope),
        &format!("log-log Hellinger slope {slope:.3} in [1.7, 2.3]"),
    );

    let decay_rep = run_martingale_and_hellinger(
        &params,
        &[1.0, 2.0, 4.0, 8.0],
        &[],
        1.0,
        0.001,
        5_000,
        InitialLaw::Fixed(0.25),
        space,
        seed,
    )
    .unwrap();
    let sqrt_means: Vec<f64> = decay_rep.per_u.iter().map(|u| u.mean_sqrt_z).collect();
    let decreasing = sqrt_means.windows(2).all(|w| w[1] < w[0]);
    check(
        "04b",
        decreasing,
        &format!("E[sqrt Z] over u = 1,2,4,8: {sqrt_means:?}"),
    );
}

#[test]
fn acceptance_05_hitting_time_oracle() {
    let params = WfParams::new(0.0, 1.0, 1.0).unwrap();
    let cfg = QuadConfig::default();
    let one = |_: f64| 1.0;
    let (x, b) = (0.25, 0.5);

    let expect = 2.0 * 1.5f64.ln();
    let quad1 = hitting_moment(&params, x, b, 1, &one, &cfg).unwrap();
    check(
        "05a",
        (quad1 - expect).abs() / expect <= 1e-6,
        &format!("quadrature E[T_b] = {quad1:.8} vs 2 ln 1.5 = {expect:.8}"),
    );

    use rayon::prelude::*;
    let n = 10_000usize;
    let seed = mix_seed(MASTER_SEED, 5);
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            first_hitting_time(&params, x, b, 1e-4, 1_000.0, &mut rng)
                .unwrap()
                .expect("level reached")
        })
        .collect();
    let (mc_mean, mc_var) = mean_variance(&samples);
    let se = (mc_var / n as f64).sqrt();
    check(
        "05b",
        (mc_mean - expect).abs() <= 3.0 * se,
        &format!("MC mean {mc_mean:.5} vs {expect:.5} (3 se = {:.5})", 3.0 * se),
    );

    let quad2 = hitting_moment(&params, x, b, 2, &one, &cfg).unwrap();
    let kl = kappa_l(&params, 0.0, b, &cfg).unwrap();
    let bound = 2.0 * kl * kl;
    check(
        "05c",
        quad2 <= bound * (1.0 + 1e-6),
        &format!("E[T_b^2] = {quad2:.5} <= 2 kappa_l(0,b)^2 = {bound:.5}"),
    );

    let squares: Vec<f64> = samples.iter().map(|&t| t * t).collect();
    let (m2, v2) = mean_variance(&squares);
    let se2 = (v2 / squares.len() as f64).sqrt();
    check(
        "05d",
        (m2 - quad2).abs() <= 3.0 * se2,
        &format!("MC E[T_b^2] {m2:.5} vs quadrature {quad2:.5} (3 se = {:.5})", 3.0 * se2),
    );
}

#[test]
fn acceptance_06_kappa_closed_form_and_grid() {
    let cfg = QuadConfig::default();
    let expect = 2.0 * 3.0f64.ln();
    let kl = kappa_l(&WfParams::new(0.0, 1.0, 1.0).unwrap(), 0.25, 0.75, &cfg).unwrap();
    check(
        "06a",
        (kl - expect).abs() / expect <= 1e-6,
        &format!("kappa_l(0.25, 0.75) = {kl:.8} vs 2 ln 3 = {expect:.8}"),
    );

    let mut grid = Vec::new();
    for &s in &[-2.0, -1.0, 0.0, 1.0, 2.0] {
        for &t1 in &[1.0, 1.5, 2.0] {
            for &t2 in &[1.0, 1.5, 2.0] {
                grid.push(WfParams::new(s, t1, t2).unwrap());
            }
        }
    }
    let report = check_uniform_ergodicity(&grid, 0.25, 0.75, &cfg).unwrap();
    check(
        "06b",
        report.pass && report.kappa_l_min > 0.0 && report.kappa_r_min > 0.0,
        &format!(
            "grid of {} points: kappa_l_min = {:.5}, kappa_r_min = {:.5}",
            grid.len(),
            report.kappa_l_min,
            report.kappa_r_min
        ),
    );
}

#[test]
fn acceptance_07_ergodic_averages() {
    let params = study_params();
    let seed = mix_seed(MASTER_SEED, 7);

    let linear = wflab_core::lab::run_ergodic_check(
        &params,
        |x| x,
        500.0,
        1e-3,
        10,
        InitialLaw::Fixed(0.25),
        seed,
    )
    .unwrap();
    check(
        "07a",
        linear.abs_deviation <= 0.01,
        &format!(
            "h = x: time avg {:.5} vs stationary {:.5} (abs dev {:.4})",
            linear.time_average, linear.stationary_expectation, linear.abs_deviation
        ),
    );

    let ratio = wflab_core::lab::run_ergodic_check(
        &params,
        |x| (1.0 - x) / x,
        500.0,
        1e-3,
        10,
        InitialLaw::Fixed(0.25),
        mix_seed(seed, 1),
    )
    .unwrap();
    check(
        "07b",
        ratio.rel_deviation <= 0.05,
        &format!(
            "h = (1-x)/x: time avg {:.5} vs stationary {:.5} (rel dev {:.4})",
            ratio.time_average, ratio.stationary_expectation, ratio.rel_deviation
        ),
    );
}

#[test]
fn acceptance_08_estimator_identities() {
    let params = study_params();
    let mut worst = 0.0f64;
    for r in 0..50 {
        let sim = SimConfig {
            t_end: 2.0,
            dt: 0.001,
            start: InitialLaw::Fixed(0.25),
            seed: mix_seed(MASTER_SEED, 800 + r),
        };
        let path = simulate_path(&params, &sim).unwrap();
        let score = mle_score(&path, 2.0, 2.0).unwrap();
        let riemann = mle_riemann(&path, 2.0, 2.0).unwrap();
        let gap = score.estimate - riemann.estimate;
        let expected = score.stats.delta_x / score.stats.sel_integral;
        worst = worst.max((gap - expected).abs());
    }
    check(
        "08a",
        worst <= 1e-12,
        &format!("max |(score - riemann) - dX/S| = {worst:.3e} over 50 paths"),
    );

    // grid argmax of the log likelihood equals A/B within the grid step
    let sim = SimConfig {
        t_end: 5.0,
        dt: 0.001,
        start: InitialLaw::Fixed(0.25),
        seed: mix_seed(MASTER_SEED, 880),
    };
    let path = simulate_path(&params, &sim).unwrap();
    let stats = sufficient_stats(&path, 2.0, 2.0, Rule::Right).unwrap();
    let target = stats.score_intercept() / stats.observed_information();
    let step = 1e-4;
    let mut best = f64::NEG_INFINITY;
    let mut arg = f64::NAN;
    let mut s = -8.0f64;
    while s <= 8.0 {
        let ll = stats.log_ratio(s, 0.0);
        if ll > best {
            best = ll;
            arg = s;
        }
        s += step;
    }
    check(
        "08b",
        (arg - target).abs() <= step,
        &format!("grid argmax {arg:.5} vs A/B {target:.5} (step {step})"),
    );

    // Bayes under a flat prior and quadratic loss is the posterior mean
    let support = Interval::new(0.0, 8.0).unwrap();
    let prior = Prior::flat(support);
    let b_stats = SufficientStats {
        delta_x: 2.0 * 4.0 * 40.0, // A = 160, B = 40: mode at 4
        mut_integral: 0.0,
        sel_integral: 4.0 * 40.0,
    };
    let bayes = bayes_estimator(&b_stats, &prior, &Loss::quadratic(), 25.0).unwrap();
    let curve = posterior_density(&b_stats, &prior, 512).unwrap();
    let mut mean = 0.0;
    for i in 1..curve.x.len() {
        mean += 0.5 * (curve.x[i - 1] * curve.y[i - 1] + curve.x[i] * curve.y[i])
            * (curve.x[i] - curve.x[i - 1]);
    }
    check(
        "08c",
        (bayes.estimate - mean).abs() <= 1e-6,
        &format!("bayes {:.9} vs posterior mean {:.9}", bayes.estimate, mean),
    );
}

#[test]
fn acceptance_09_lan_statistic_and_remainder() {
    use rayon::prelude::*;
    let params = study_params();
    let fisher = fisher_matrix(&params).unwrap();

    // score-vector variances against the information diagonal
    let n = 2_000usize;
    let seed = mix_seed(MASTER_SEED, 9);
    let stats: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|r| {
            let sim = SimConfig {
                t_end: 10.0,
                dt: 0.001,
                start: InitialLaw::Stationary,
                seed: mix_seed(seed, r as u64),
            };
            let path = simulate_path(&params, &sim).unwrap();
            lan_statistic(&path, &params).components
        })
        .collect();
    let mut devs = Vec::new();
    let mut ok = true;
    for k in 0..3 {
        let comp: Vec<f64> = stats.iter().map(|c| c[k]).collect();
        let (_, var) = mean_variance(&comp);
        let target = fisher.entries[k][k];
        let rel = (var - target).abs() / target;
        devs.push(rel);
        ok &= rel <= 0.15;
    }
    check(
        "09a",
        ok,
        &format!("score-component variance rel devs {devs:?} (target <= 0.15)"),
    );

    // remainder shrinks with the horizon
    let u = [1.0, 0.0, 0.0];
    let mut medians = Vec::new();
    for (i, &t) in [5.0, 20.0, 80.0].iter().enumerate() {
        let vals: Vec<f64> = (0..200)
            .into_par_iter()
            .map(|r| {
                let sim = SimConfig {
                    t_end: t,
                    dt: 0.001,
                    start: InitialLaw::Fixed(0.25),
                    seed: mix_seed(mix_seed(seed, 100 + i as u64), r as u64),
                };
                let path = simulate_path(&params, &sim).unwrap();
                lan_remainder_with(&path, &params, u, InitialLaw::Fixed(0.25), &fisher)
                    .unwrap()
                    .abs()
            })
            .collect();
        medians.push(median(&vals));
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    check(
        "09b",
        decreasing,
        &format!("median |r_T| over T = 5, 20, 80: {medians:?}"),
    );
}

#[test]
fn acceptance_10_moment_convergence() {
    let report = &*STUDY_SCORE;
    let last = report.per_t.last().unwrap();
    let mut ok = true;
    let mut details = Vec::new();
    for row in &last.moment_table {
        let rel = (row.empirical - row.theoretical).abs() / row.theoretical;
        details.push(format!(
            "p = {}: empirical {:.4} vs theory {:.4} (rel {:.3})",
            row.p, row.empirical, row.theoretical, rel
        ));
        ok &= rel <= 0.10;
    }
    check("10", ok, &details.join("; "));
}

#[test]
fn acceptance_11_determinism_across_thread_counts() {
    let config = ExperimentConfig {
        params: study_params(),
        t_list: vec![0.5, 1.0],
        dt: 0.01,
        replicates: vec![100, 100],
        master_seed: MASTER_SEED,
        estimator: EstimatorChoice::MleScore,
        start: InitialLaw::Fixed(0.25),
    };
    let run_with = |threads: usize, dir: &std::path::Path| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let report = pool.install(|| run_normality_experiment(&config).unwrap());
        write_report_files(&report, dir).unwrap();
    };
    let base = std::env::temp_dir().join(format!("wflab_acc11_{}", std::process::id()));
    let d1 = base.join("one");
    let d2 = base.join("many");
    run_with(1, &d1);
    run_with(8, &d2);
    let mut all_equal = true;
    let mut checked = 0;
    for name in ["report.json", "errors_T0.5.csv", "errors_T1.csv", "kde_T0.5.csv", "kde_T1.csv"] {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        all_equal &= a == b;
        checked += 1;
    }
    std::fs::remove_dir_all(&base).ok();
    check(
        "11",
        all_equal && checked == 5,
        &format!("{checked} report files byte-identical between 1 and 8 threads"),
    );
}

#[test]
fn acceptance_regeneration_rate_crosscheck() {
    // upcrossing counts along one long path against the quadrature rate
    let params = study_params();
    let cfg = QuadConfig::default();
    let rate = regeneration_rate(&params, 0.4, 0.6, &cfg).unwrap();
    let sim = SimConfig {
        t_end: 500.0,
        dt: 1e-3,
        start: InitialLaw::Fixed(0.25),
        seed: mix_seed(MASTER_SEED, 12),
    };
    let path = simulate_path(&params, &sim).unwrap();
    let count = upcrossing_count(&path, 0.4, 0.6).unwrap();
    let empirical = count as f64 / sim.t_end;
    let rel = (empirical - rate).abs() / rate;
    check(
        "regeneration",
        rel <= 0.2,
        &format!("N_T/T = {empirical:.4} vs quadrature rate {rate:.4} (rel dev {rel:.3})"),
    );
}

#[test]
fn acceptance_clamp_fraction_in_entrance_regime() {
    // boundary projections stay rare across the desk parameter range
    use rayon::prelude::*;
    for (s, t1, t2) in [
        (-5.0, 1.0, 1.0),
        (5.0, 1.0, 1.0),
        (0.0, 1.0, 1.0),
        (4.0, 2.0, 2.0),
        (-3.0, 1.5, 1.0),
    ] {
        let params = WfParams::new(s, t1, t2).unwrap();
        let counts: Vec<(usize, usize)> = (0..100u64)
            .into_par_iter()
            .map(|r| {
                let sim = SimConfig {
                    t_end: 10.0,
                    dt: 1e-3,
                    start: InitialLaw::Stationary,
                    seed: mix_seed(777, r),
                };
                let path = simulate_path(&params, &sim).unwrap();
                (path.clamp_count, path.n_steps())
            })
            .collect();
        let clamps: usize = counts.iter().map(|c| c.0).sum();
        let steps: usize = counts.iter().map(|c| c.1).sum();
        let fraction = clamps as f64 / steps as f64;
        check(
            "clamp-fraction",
            fraction <= 1e-3,
            &format!("({s}, {t1}, {t2}): clamp fraction {fraction:.2e} <= 1e-3"),
        );
    }
}

#[test]
fn acceptance_dt_halving_is_within_mc_noise() {
    // halving the step moves the estimator distribution by less than the
    // Monte Carlo uncertainty at dt = 1e-3
    let base = ExperimentConfig {
        params: study_params(),
        t_list: vec![2.0],
        dt: 1e-3,
        replicates: vec![2_000],
        master_seed: mix_seed(MASTER_SEED, 14),
        estimator: EstimatorChoice::MleScore,
        start: InitialLaw::Fixed(0.25),
    };
    let halved = ExperimentConfig { dt: 5e-4, ..base.clone() };
    let a = &run_normality_experiment(&base).unwrap().per_t[0];
    let b = &run_normality_experiment(&halved).unwrap().per_t[0];
    let n = (a.requested - a.excluded) as f64;
    let se_mean = (a.variance / n + b.variance / n).sqrt();
    let dm = (a.mean - b.mean).abs();
    check(
        "dt-halving-mean",
        dm <= 3.0 * se_mean,
        &format!("mean shift {dm:.4} vs 3 se {:.4}", 3.0 * se_mean),
    );
    // standard error of a sample variance from the empirical fourth moment
    // (the estimator distribution is heavy-tailed at short horizons)
    let var_se = |t: &wflab_core::lab::TReport| {
        let m = t.mean;
        let m4 = t
            .rescaled_errors
            .iter()
            .map(|&x| (x - m).powi(4))
            .sum::<f64>()
            / t.rescaled_errors.len() as f64;
        ((m4 - t.variance * t.variance) / t.rescaled_errors.len() as f64).sqrt()
    };
    let se_var = (var_se(a).powi(2) + var_se(b).powi(2)).sqrt();
    let dv = (a.variance - b.variance).abs();
    check(
        "dt-halving-variance",
        dv <= 3.0 * se_var,
        &format!("variance shift {dv:.4} vs 3 se {:.4}", 3.0 * se_var),
    );
}
