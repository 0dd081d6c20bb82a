//! Acceptance suite. Every check prints one `criterion N: PASS|FAIL` line with
//! the measured quantities, then asserts.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shiftbai::diagnostics::{
    bias_decomposition, bias_identity_check, consistency_probe, estimator_moments, noiseless_stats,
    ConsistencyConfig, FixedDesign, Truth,
};
use shiftbai::env::{make_instance, ChangePointSpec, InstanceConfig, Observation, ShiftSpec};
use shiftbai::harness::{
    run_experiment, scenario_bounds, simulate, Configuration, ExperimentConfig, Scenario,
};
use shiftbai::ols::{
    design_matrices, exploration_rate, fit_ols, fit_ols_separated, mean_covariance, ucb,
    NoiseVariance,
};
use shiftbai::policies::{
    select_best, select_best_sample_mean, shift_adjusted_stats, PolicyKind, PolicySpec, Scorer,
};
use shiftbai::stats::SufficientStats;

fn report(n: u32, name: &str, pass: bool, started: Instant, detail: String) {
    println!(
        "criterion {n}: {} [{name}] {detail} ({:.2?})",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed()
    );
}

fn shifted_mdm(arms: usize, cp_min: u64, cp_max: u64) -> shiftbai::env::BanditInstance {
    make_instance(
        InstanceConfig::mdm(arms, 0.5, 1.0)
            .with_shift(ShiftSpec::UniformContinuous { lo: 0.0, hi: 20.0 })
            .with_changepoints(ChangePointSpec::UniformDiscrete { cp_min, cp_max }),
    )
    .unwrap()
}

fn record_all(arms: usize, rows: &[(usize, usize, f64)]) -> SufficientStats {
    let mut stats = SufficientStats::new(arms);
    for &(j, i, r) in rows {
        stats.record(j, i, r).unwrap();
    }
    stats
}

/// Inverse of a 3x3 matrix by cofactors.
fn inverse3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    let cof = Matrix3::new(
        c(1, 2, 1, 2),
        -c(1, 2, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 1, 2),
        c(0, 2, 0, 2),
        -c(0, 2, 0, 1),
        c(0, 1, 1, 2),
        -c(0, 1, 0, 2),
        c(0, 1, 0, 1),
    );
    let det = m[(0, 0)] * cof[(0, 0)] + m[(0, 1)] * cof[(0, 1)] + m[(0, 2)] * cof[(0, 2)];
    cof.transpose() / det
}

#[test]
fn criterion_01_ols_exact_small_system() {
    let started = Instant::now();
    // (env, arm, reward)
    let rows = [
        (0, 0, 0.0),
        (0, 0, 2.0),
        (0, 1, 1.0),
        (1, 0, 4.0),
        (1, 1, 5.0),
    ];
    let fit = fit_ols(&record_all(2, &rows)).unwrap();

    // brute-force normal equations over columns (arm0, arm1, shift1)
    let mut gram = Matrix3::zeros();
    let mut xr = Vector3::zeros();
    let mut xs = Vec::new();
    for &(j, i, r) in &rows {
        let mut x = Vector3::zeros();
        x[i] = 1.0;
        if j == 1 {
            x[2] = 1.0;
        }
        gram += x * x.transpose();
        xr += x * r;
        xs.push((x, r));
    }
    let theta = inverse3(&gram) * xr;
    let rss: f64 = xs.iter().map(|(x, r)| (r - x.dot(&theta)).powi(2)).sum();
    let oracle_sigma2 = rss / 2.0;

    let expect = [6.0 / 7.0, 9.0 / 7.0, 24.0 / 7.0];
    let got = [fit.mu_hat[0], fit.mu_hat[1], fit.s_hat[0]];
    let sigma2 = fit.sigma2_hat.unwrap_or(f64::NAN);
    let err_expect = got
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold((sigma2 - 8.0 / 7.0).abs(), f64::max);
    let err_oracle = (0..3)
        .map(|k| (got[k] - theta[k]).abs())
        .fold((sigma2 - oracle_sigma2).abs(), f64::max);
    let pass = err_expect < 1e-9 && err_oracle < 1e-9 && fit.dof == 2;
    report(
        1,
        "OLS exactness",
        pass,
        started,
        format!("mu={:?} s={:?} sigma2={sigma2} |err| vs exact {err_expect:.2e}, vs oracle {err_oracle:.2e}", fit.mu_hat, fit.s_hat),
    );
    assert!(pass);
}

/// Random log with `arms` arms and `envs` environments whose design is connected.
fn random_connected_log(rng: &mut ChaCha8Rng) -> (usize, Vec<Observation>) {
    loop {
        let arms = rng.random_range(2..=6usize);
        let envs = rng.random_range(1..=6usize);
        let mut log = Vec::new();
        let mu: Vec<f64> = (0..arms).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut t = 0;
        for j in 0..envs {
            let s = rng.random_range(0.0..20.0);
            let len = rng.random_range(2..=10usize);
            for _ in 0..len {
                t += 1;
                let arm = rng.random_range(0..arms);
                let noise: f64 = rng.random_range(-1.0..1.0);
                log.push(Observation {
                    t,
                    env: j,
                    arm,
                    reward: mu[arm] + s + noise,
                });
            }
        }
        if log.len() > 60 {
            continue;
        }
        let mut stats = SufficientStats::new(arms);
        for o in &log {
            stats.record(o.env, o.arm, o.reward).unwrap();
        }
        if stats.is_connected() {
            return (arms, log);
        }
    }
}

#[test]
fn criterion_02_joint_and_separated_fits_agree() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_fit: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    for _ in 0..100 {
        let (arms, log) = random_connected_log(&mut rng);
        let mut stats = SufficientStats::new(arms);
        for o in &log {
            stats.record(o.env, o.arm, o.reward).unwrap();
        }
        let fit = fit_ols(&stats).unwrap();
        let (mu, s) = fit_ols_separated(&log, arms).unwrap();
        for (a, b) in fit.mu_hat.iter().zip(&mu).chain(fit.s_hat.iter().zip(&s)) {
            worst_fit = worst_fit.max((a - b).abs());
        }
        let (a, b, r) = design_matrices(&log, arms).unwrap();
        let theta = DVector::from_iterator(
            fit.mu_hat.len() + fit.s_hat.len(),
            fit.mu_hat.iter().chain(&fit.s_hat).copied(),
        );
        let x = DMatrix::from_fn(log.len(), theta.len(), |row, col| {
            if col < arms {
                a[(row, col)]
            } else {
                b[(row, col - arms)]
            }
        });
        let resid = &r - &x * &theta;
        worst_orth = worst_orth.max((x.transpose() * resid).amax());
    }
    let pass = worst_fit < 1e-9 && worst_orth < 1e-8;
    report(
        2,
        "joint/separated agreement",
        pass,
        started,
        format!("max |joint - separated| = {worst_fit:.2e}, max |X'e| = {worst_orth:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_unbiasedness_and_covariance() {
    let started = Instant::now();
    let design = FixedDesign::balanced(2, 2, 5);
    let truth = Truth {
        mu: vec![0.0, 0.5],
        shifts: vec![0.0, 3.0],
        sigma: 1.0,
    };
    let r = estimator_moments(&design, &truth, 100_000, 31).unwrap();
    let pass = r.max_bias_z() < 4.0 && r.max_rel_error < 0.05 && r.sigma2_bias_z() < 4.0;
    report(
        3,
        "unbiasedness and covariance",
        pass,
        started,
        format!(
            "max |bias|/SE = {:.2}, max rel cov error = {:.4}, sigma2 |bias|/SE = {:.2}",
            r.max_bias_z(),
            r.max_rel_error,
            r.sigma2_bias_z()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_mean_differences_consistent_means_not() {
    let started = Instant::now();
    let cfg = ConsistencyConfig::standard(vec![500, 1000, 2000, 4000], 10_000, 44);
    let r = consistency_probe(&cfg).unwrap();
    let diffs: Vec<f64> = r.rows.iter().map(|x| x.var_diff).collect();
    let mus: Vec<f64> = r.rows.iter().map(|x| x.var_mu0).collect();
    let decreasing = diffs.windows(2).all(|w| w[1] < w[0]);
    // calibration: at least halving over an 8x sample-size increase, and
    // Var(mu_hat) keeping at least half its value
    let halved = diffs[3] < 0.5 * diffs[0];
    let persists = mus[3] >= 0.5 * mus[0];
    let pass = decreasing && halved && persists;
    report(
        4,
        "large-sample probe",
        pass,
        started,
        format!("Var(diff) = {diffs:?}, Var(mu0) = {mus:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_shift_subtracted_means_equal_ols() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for trace_idx in 0..100u64 {
        let arms = rng.random_range(2..=6usize);
        let cp_max = rng.random_range(2..=30u64);
        let instance = shifted_mdm(arms, 2, cp_max);
        let budget = rng.random_range(6 * arms as u64..=400);
        let spec = PolicySpec::new(PolicyKind::ReduceToMab {
            inner: Box::new(PolicyKind::Linlucb),
        });
        let mut policy = spec.build(arms, budget, trace_idx, 1.0).unwrap();
        let out = simulate(&instance, policy.as_mut(), budget, &[], trace_idx, true).unwrap();
        let fit = fit_ols(&out.stats).unwrap();
        let trace = out.trace.unwrap();
        let mut sums = vec![0.0; arms];
        let mut counts = vec![0u64; arms];
        for k in 0..trace.arms.len() {
            sums[trace.arms[k]] += trace.rewards[k] - fit.shift(trace.envs[k]);
            counts[trace.arms[k]] += 1;
        }
        let adjusted = shift_adjusted_stats(&out.stats, &fit);
        for i in 0..arms {
            worst = worst.max((sums[i] / counts[i] as f64 - fit.mu_hat[i]).abs());
            worst = worst.max((adjusted.sample_mean(i).unwrap() - fit.mu_hat[i]).abs());
        }
    }
    let pass = worst < 1e-9;
    report(
        5,
        "shift-subtracted identity",
        pass,
        started,
        format!("max |mean(r - s_hat) - mu_hat| = {worst:.2e} over 100 traces"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_structural_invariants() {
    let started = Instant::now();
    let arms = 5;
    let budget = 300u64;
    let spec = PolicySpec::new(PolicyKind::Linlucb);
    let init_len = spec.min_budget(arms);
    let scenarios = [
        Scenario::WorstCase,
        Scenario::CannotSampleAllArms,
        Scenario::Sample1To10PerArm,
        Scenario::General,
    ];
    let mut disconnected = 0;
    let mut repeated_starts = 0;
    let mut budget_errors = 0;
    let mut checked_envs = 0;
    for run in 0..1000u64 {
        let scenario = scenarios[(run % 4) as usize];
        let (lo, hi) = scenario_bounds(scenario, arms).unwrap();
        let instance = shifted_mdm(arms, lo, hi);
        let seed = 6_000 + run;

        let mut p = spec.build(arms, init_len, seed, 1.0).unwrap();
        let init = simulate(&instance, p.as_mut(), init_len, &[], seed, false).unwrap();
        if !init.stats.is_connected() {
            disconnected += 1;
        }

        let mut p = spec.build(arms, budget, seed, 1.0).unwrap();
        let out = simulate(&instance, p.as_mut(), budget, &[budget], seed, true).unwrap();
        let trace = out.trace.unwrap();
        if trace.arms.len() as u64 != budget
            || out.stats.total() != budget
            || out.stats.per_arm().iter().sum::<u64>() != budget
        {
            budget_errors += 1;
        }
        // trace index k is time step k + 1
        for k in 1..trace.envs.len() - 1 {
            let starts_env = trace.envs[k] != trace.envs[k - 1];
            let after_init = k as u64 + 1 > init_len;
            if starts_env && after_init && trace.envs[k + 1] == trace.envs[k] {
                checked_envs += 1;
                if trace.arms[k] == trace.arms[k + 1] {
                    repeated_starts += 1;
                }
            }
        }
    }
    let pass = disconnected == 0 && repeated_starts == 0 && budget_errors == 0;
    report(
        6,
        "structural invariants",
        pass,
        started,
        format!(
            "1000 runs: disconnected after init {disconnected}, environments starting with a repeated arm {repeated_starts}/{checked_envs}, budget mismatches {budget_errors}"
        ),
    );
    assert!(pass);
}

fn general_config(budget: u64, policies: Vec<PolicySpec>, seed: u64) -> ExperimentConfig {
    let config = ExperimentConfig {
        configuration: Configuration::Mdm,
        arms: 5,
        delta: 0.5,
        sigma: 1.0,
        shift: ShiftSpec::UniformContinuous { lo: 0.0, hi: 20.0 },
        scenario: Scenario::General,
        budgets: vec![budget],
        replications: 10_000,
        base_seed: seed,
        policies,
    };
    config.validate().unwrap();
    config
}

#[test]
fn criterion_07_linlucb_beats_round_robin() {
    let started = Instant::now();
    let config = general_config(
        1000,
        vec![
            PolicySpec::new(PolicyKind::Linlucb),
            PolicySpec::new(PolicyKind::RoundRobin),
        ],
        7,
    );
    let series = run_experiment(&config).unwrap();
    let lin = *series.row("linlucb", 1000).unwrap();
    let rr = *series.row("round-robin", 1000).unwrap();
    let cmp = series.paired("linlucb", "round-robin", 1000).unwrap();
    let margin = (rr.pics - lin.pics) / cmp.combined_stderr;
    let pass = margin >= 3.0;
    report(
        7,
        "LinLUCB vs round-robin, MDM general",
        pass,
        started,
        format!(
            "PICS linlucb {:.4} (se {:.4}), round-robin {:.4} (se {:.4}); margin {margin:.1} combined SE, paired SE {:.4}",
            lin.pics, lin.pics_stderr, rr.pics, rr.pics_stderr, cmp.paired_stderr
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_sample_mean_policies_lag_round_robin() {
    let started = Instant::now();
    let config = general_config(
        2000,
        vec![
            PolicySpec::new(PolicyKind::SampleMeanLucb),
            PolicySpec::new(PolicyKind::RoundRobin),
            PolicySpec::new(PolicyKind::SuccessiveRejects),
        ],
        8,
    );
    assert_eq!(scenario_bounds(config.scenario, 5).unwrap(), (2, 50));
    let series = run_experiment(&config).unwrap();
    let sm = *series.row("sample-mean-lucb", 2000).unwrap();
    let rr = *series.row("round-robin", 2000).unwrap();
    let sr = *series.row("successive-rejects", 2000).unwrap();
    let sr_cmp = series
        .paired("successive-rejects", "round-robin", 2000)
        .unwrap();
    let sm_worse = sm.pics > rr.pics;
    let sr_not_better = sr.pics >= rr.pics - 2.0 * sr_cmp.combined_stderr;
    let pass = sm_worse && sr_not_better;
    report(
        8,
        "sample-mean policies vs round-robin, cp in U(2,50)",
        pass,
        started,
        format!(
            "PICS sample-mean-lucb {:.4}, round-robin {:.4} (se {:.4}), successive-rejects {:.4}",
            sm.pics, rr.pics, rr.pics_stderr, sr.pics
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_stationary_bound_reduction() {
    let started = Instant::now();
    let arms = 4;
    let instance = make_instance(
        InstanceConfig::mdm(arms, 0.3, 1.5)
            .with_shift(ShiftSpec::Zero)
            .with_changepoints(ChangePointSpec::stationary()),
    )
    .unwrap();
    let budget = 400;
    let mut policy = PolicySpec::new(PolicyKind::Linlucb)
        .build(arms, budget, 99, 2.25)
        .unwrap();
    let out = simulate(&instance, policy.as_mut(), budget, &[], 99, true).unwrap();
    let trace = out.trace.unwrap();
    let mut stats = SufficientStats::new(arms);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for k in 0..trace.arms.len() {
        stats
            .record(trace.envs[k], trace.arms[k], trace.rewards[k])
            .unwrap();
        if stats.per_arm().contains(&0) {
            continue;
        }
        let t = stats.total();
        let fit = fit_ols(&stats).unwrap();
        for variance in [
            NoiseVariance::Known { sigma2: 2.25 },
            NoiseVariance::Estimated { prior: 1.0 },
        ] {
            let sigma2 = variance.resolve(fit.sigma2_hat);
            let cov = mean_covariance(&fit, sigma2);
            let ols = Scorer::Ols(variance).scores(&stats, t).unwrap();
            let sm = Scorer::SampleMean(variance).scores(&stats, t).unwrap();
            for i in 0..arms {
                let n = stats.pulls(i) as f64;
                let rbar = stats.sample_mean(i).unwrap();
                let direct = rbar + (16.0 * (t as f64).ln() * sigma2 / (n * n)).sqrt();
                let via_fit = ucb(&fit, &cov, i, t, stats.pulls(i));
                worst = worst
                    .max((via_fit - direct).abs())
                    .max((ols.ucbs[i] - direct).abs())
                    .max((sm.ucbs[i] - direct).abs())
                    .max(
                        (exploration_rate(t, stats.pulls(i)) * (sigma2 / n).sqrt() + rbar - direct)
                            .abs(),
                    );
                checks += 1;
            }
        }
    }
    let pass = worst < 1e-9 && checks > 0;
    report(
        9,
        "stationary bound reduction",
        pass,
        started,
        format!("{checks} comparisons, max deviation {worst:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_bias_identity_and_inferior_pick() {
    let started = Instant::now();
    let identity = bias_identity_check(100, 10);

    // Both arms equally sampled in the first environment; arm 0 sampled more
    // once a large shift arrives.
    let mu = [0.0, 0.5];
    let shifts = [0.0, 10.0];
    let stats = noiseless_stats(&[vec![2, 2], vec![4, 1]], &mu, &shifts).unwrap();
    let bias = bias_decomposition(&stats, &shifts, 0, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let by_sample_mean = select_best_sample_mean(&stats, &mut rng).unwrap();
    let by_ols = select_best(&fit_ols(&stats).unwrap(), &mut rng);
    let pass = identity.max_residual() < 1e-12 && bias > 0.0 && by_sample_mean == 0 && by_ols == 1;
    report(
        10,
        "bias demonstration",
        pass,
        started,
        format!(
            "max identity residual {:.2e}; example bias {bias:.4}, sample mean picks arm {by_sample_mean}, OLS picks arm {by_ols} (best is 1)",
            identity.max_residual()
        ),
    );
    assert!(pass);
}
