//! Monte Carlo checks of the estimator's statistical behavior.
//!
//! Every routine is a pure function of its inputs and seed. Replications run
//! in parallel and are collected in index order, so results do not depend on
//! the thread count.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    make_instance, ChangePointSpec, EnvError, InstanceConfig, ObservationStream, ShiftSpec,
};
use crate::harness::{sig10, write_text, HarnessError};
use crate::ols::{fit_ols, OlsError};
use crate::rng::{replication_seed, substream, Purpose};
use crate::stats::SufficientStats;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error(transparent)]
    Ols(#[from] OlsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("arm {0} has no samples")]
    UnsampledArm(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Output(#[from] HarnessError),
}

/// A fixed allocation plan: the `(environment, arm)` of every observation,
/// in time order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedDesign {
    pub arms: usize,
    pub plan: Vec<(usize, usize)>,
}

impl FixedDesign {
    /// `per_cell` pulls of every arm in each of `envs` environments.
    pub fn balanced(arms: usize, envs: usize, per_cell: usize) -> Self {
        let plan = (0..envs)
            .flat_map(|j| (0..per_cell).flat_map(move |_| (0..arms).map(move |i| (j, i))))
            .collect();
        FixedDesign { arms, plan }
    }

    /// Round-robin over the arms across environments of the given lengths.
    pub fn round_robin(arms: usize, env_lengths: &[usize]) -> Self {
        let mut plan = Vec::new();
        for (j, &len) in env_lengths.iter().enumerate() {
            for _ in 0..len {
                plan.push((j, plan.len() % arms));
            }
        }
        FixedDesign { arms, plan }
    }

    pub fn envs(&self) -> usize {
        self.plan.iter().map(|&(j, _)| j + 1).max().unwrap_or(0)
    }

    /// Statistics of the design with rewards `reward(obs_index, env, arm)`.
    pub fn stats_with(
        &self,
        mut reward: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<SufficientStats, DiagError> {
        let mut stats = SufficientStats::new(self.arms);
        for (k, &(j, i)) in self.plan.iter().enumerate() {
            stats
                .record(j, i, reward(k, j, i))
                .map_err(|e| DiagError::InvalidInput(e.to_string()))?;
        }
        Ok(stats)
    }
}

/// True parameters; `shifts` holds the shift of every environment including the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub mu: Vec<f64>,
    pub shifts: Vec<f64>,
    pub sigma: f64,
}

impl Truth {
    /// What the fit estimates: `mu_i + s_0` and `s_j - s_0` for `j >= 1`.
    pub fn target(&self) -> Vec<f64> {
        let s0 = self.shifts.first().copied().unwrap_or(0.0);
        self.mu
            .iter()
            .map(|m| m + s0)
            .chain(self.shifts.iter().skip(1).map(|s| s - s0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    /// `mu_0..mu_{K-1}, s_1..s_{J-1}`.
    pub names: Vec<String>,
    pub target: Vec<f64>,
    pub mc_mean: Vec<f64>,
    /// Standard error of each Monte Carlo mean.
    pub mean_stderr: Vec<f64>,
    pub mc_cov: DMatrix<f64>,
    /// `sigma^2 (X'X)^-1`.
    pub analytic_cov: DMatrix<f64>,
    pub max_rel_error: f64,
    pub sigma2_mean: f64,
    pub sigma2_stderr: f64,
    pub sigma2_true: f64,
    pub reps: u64,
    pub seed: u64,
}

impl MomentReport {
    /// Largest `|bias| / SE` over all parameters.
    pub fn max_bias_z(&self) -> f64 {
        self.mc_mean
            .iter()
            .zip(&self.target)
            .zip(&self.mean_stderr)
            .map(|((m, t), se)| if *se > 0.0 { (m - t).abs() / se } else { 0.0 })
            .fold(0.0, f64::max)
    }

    pub fn sigma2_bias_z(&self) -> f64 {
        if self.sigma2_stderr > 0.0 {
            (self.sigma2_mean - self.sigma2_true).abs() / self.sigma2_stderr
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("seed,reps,row,col,target,mc_mean,mean_stderr,mc_cov,analytic_cov\n");
        let p = self.names.len();
        for a in 0..p {
            for b in 0..p {
                let (target, mean, se) = if a == b {
                    (
                        sig10(self.target[a]),
                        sig10(self.mc_mean[a]),
                        sig10(self.mean_stderr[a]),
                    )
                } else {
                    Default::default()
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    self.seed,
                    self.reps,
                    self.names[a],
                    self.names[b],
                    target,
                    mean,
                    se,
                    sig10(self.mc_cov[(a, b)]),
                    sig10(self.analytic_cov[(a, b)])
                ));
            }
        }
        out.push_str(&format!(
            "{},{},sigma2,sigma2,{},{},{},,\n",
            self.seed,
            self.reps,
            sig10(self.sigma2_true),
            sig10(self.sigma2_mean),
            sig10(self.sigma2_stderr)
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagError> {
        Ok(write_text(&self.to_csv(), path)?)
    }
}

fn parameter_names(arms: usize, envs: usize) -> Vec<String> {
    (0..arms)
        .map(|i| format!("mu{i}"))
        .chain((1..envs).map(|j| format!("s{j}")))
        .collect()
}

/// Column means and unbiased sample covariance of `samples` (rows).
fn sample_moments(samples: &[Vec<f64>], p: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; p];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for s in samples {
        for a in 0..p {
            let da = s[a] - mean[a];
            for b in a..p {
                cov[(a, b)] += da * (s[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

/// Entrywise relative error; entries with a (near) zero analytic value are
/// scaled by the geometric mean of the two variances instead.
pub fn max_relative_error(mc: &DMatrix<f64>, analytic: &DMatrix<f64>) -> f64 {
    let p = analytic.nrows();
    let mut worst: f64 = 0.0;
    for a in 0..p {
        for b in 0..p {
            let scale = (analytic[(a, a)] * analytic[(b, b)]).sqrt();
            let denom = if analytic[(a, b)].abs() > 1e-9 * scale {
                analytic[(a, b)].abs()
            } else {
                scale
            };
            worst = worst.max((mc[(a, b)] - analytic[(a, b)]).abs() / denom);
        }
    }
    worst
}

/// Redraw the noise `reps` times on a fixed design and compare the fitted
/// parameters' moments with their analytic values.
///
/// At least `10^4` replications are needed for the moments to be meaningful;
/// fewer are accepted for smoke runs.
pub fn estimator_moments(
    design: &FixedDesign,
    truth: &Truth,
    reps: u64,
    seed: u64,
) -> Result<MomentReport, DiagError> {
    let envs = design.envs();
    if truth.mu.len() != design.arms || truth.shifts.len() != envs {
        return Err(DiagError::InvalidInput(format!(
            "truth has {} means and {} shifts; design has {} arms and {envs} environments",
            truth.mu.len(),
            truth.shifts.len(),
            design.arms
        )));
    }
    if reps < 2 || truth.sigma.is_nan() || truth.sigma <= 0.0 {
        return Err(DiagError::InvalidInput(
            "need reps >= 2 and sigma > 0".into(),
        ));
    }
    let template = design.stats_with(|_, _, _| 0.0)?;
    let template_fit = fit_ols(&template)?;
    let sigma2 = truth.sigma * truth.sigma;
    let analytic_cov = template_fit.theta_cov_unit(&template) * sigma2;
    let p = analytic_cov.nrows();

    let draws: Vec<(Vec<f64>, Option<f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, Purpose::Diagnostic, rep);
            let stats = design.stats_with(|_, j, i| {
                let z: f64 = rng.sample(StandardNormal);
                truth.mu[i] + truth.shifts[j] + truth.sigma * z
            })?;
            let fit = fit_ols(&stats)?;
            let theta = fit.mu_hat.iter().chain(&fit.s_hat).copied().collect();
            Ok((theta, fit.sigma2_hat))
        })
        .collect::<Result<_, DiagError>>()?;

    let thetas: Vec<Vec<f64>> = draws.iter().map(|d| d.0.clone()).collect();
    let (mc_mean, mc_cov) = sample_moments(&thetas, p);
    let n = reps as f64;
    let mean_stderr = (0..p).map(|a| (mc_cov[(a, a)] / n).sqrt()).collect();
    let s2: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
    let (sigma2_mean, sigma2_stderr) = crate::harness::mean_stderr(&s2);
    Ok(MomentReport {
        names: parameter_names(design.arms, envs),
        target: truth.target(),
        mc_mean,
        mean_stderr,
        max_rel_error: max_relative_error(&mc_cov, &analytic_cov),
        mc_cov,
        analytic_cov,
        sigma2_mean,
        sigma2_stderr,
        sigma2_true: sigma2,
        reps,
        seed,
    })
}

/// Setup of the large-sample probe: two (or more) arms sampled round-robin
/// while shifts and change points are redrawn in every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub arm_means: Vec<f64>,
    pub sigma: f64,
    pub shift: ShiftSpec,
    pub changepoints: ChangePointSpec,
    pub n_grid: Vec<u64>,
    pub reps: u64,
    pub seed: u64,
}

impl ConsistencyConfig {
    /// Two arms, shifts `U(0, 20)`, environment lengths `U{2..=10}`, sigma 1.
    pub fn standard(n_grid: Vec<u64>, reps: u64, seed: u64) -> Self {
        ConsistencyConfig {
            arm_means: vec![0.0, 0.5],
            sigma: 1.0,
            shift: ShiftSpec::UniformContinuous { lo: 0.0, hi: 20.0 },
            changepoints: ChangePointSpec::UniformDiscrete {
                cp_min: 2,
                cp_max: 10,
            },
            n_grid,
            reps,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyRow {
    pub n: u64,
    pub mean_mu0: f64,
    pub var_mu0: f64,
    pub mean_diff: f64,
    /// Variance of `mu_hat_0 - mu_hat_1`.
    pub var_diff: f64,
    pub mean_envs: f64,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub reps: u64,
    pub seed: u64,
}

impl ConsistencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,reps,n,mean_mu0,var_mu0,mean_diff,var_diff,mean_envs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.seed,
                self.reps,
                r.n,
                sig10(r.mean_mu0),
                sig10(r.var_mu0),
                sig10(r.mean_diff),
                sig10(r.var_diff),
                sig10(r.mean_envs)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagError> {
        Ok(write_text(&self.to_csv(), path)?)
    }
}

/// Monte Carlo variance of `mu_hat_0` and of `mu_hat_0 - mu_hat_1` at every
/// sample size of the grid, under round-robin allocation.
pub fn consistency_probe(config: &ConsistencyConfig) -> Result<ConsistencyReport, DiagError> {
    let grid = &config.n_grid;
    if grid.windows(2).any(|w| w[0] >= w[1]) || config.reps < 2 {
        return Err(DiagError::InvalidInput(
            "n_grid must be strictly ascending and reps >= 2".into(),
        ));
    }
    let arms = config.arm_means.len();
    if grid.first().is_some_and(|&n| n < arms as u64) {
        return Err(DiagError::InvalidInput(
            "every N must sample each arm".into(),
        ));
    }
    let instance = make_instance(InstanceConfig {
        arm_means: config.arm_means.clone(),
        noise_sd: config.sigma,
        shift: config.shift.clone(),
        changepoints: config.changepoints.clone(),
    })?;
    let max_n = grid.last().copied().unwrap_or(0);

    // per replication: (mu0, diff, envs) at every grid point
    let draws: Vec<Vec<(f64, f64, usize)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut stream =
                ObservationStream::new(instance.clone(), replication_seed(config.seed, rep));
            let mut stats = SufficientStats::new(arms);
            let mut out = Vec::with_capacity(grid.len());
            let mut next = grid.iter().peekable();
            for t in 1..=max_n {
                let arm = ((t - 1) % arms as u64) as usize;
                let env = stream.env_of(t);
                let r = stream.observe(arm, t)?;
                stats
                    .record(env, arm, r)
                    .map_err(|e| DiagError::InvalidInput(e.to_string()))?;
                if next.peek() == Some(&&t) {
                    next.next();
                    let fit = fit_ols(&stats)?;
                    out.push((fit.mu_hat[0], fit.mu_hat[0] - fit.mu_hat[1], stats.envs()));
                }
            }
            Ok(out)
        })
        .collect::<Result<_, DiagError>>()?;

    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let col = |f: fn(&(f64, f64, usize)) -> f64| -> (f64, f64) {
                let xs: Vec<f64> = draws.iter().map(|d| f(&d[g])).collect();
                let (mean, se) = crate::harness::mean_stderr(&xs);
                (mean, se * se * xs.len() as f64)
            };
            let (mean_mu0, var_mu0) = col(|d| d.0);
            let (mean_diff, var_diff) = col(|d| d.1);
            let (mean_envs, _) = col(|d| d.2 as f64);
            ConsistencyRow {
                n,
                mean_mu0,
                var_mu0,
                mean_diff,
                var_diff,
                mean_envs,
            }
        })
        .collect();
    Ok(ConsistencyReport {
        rows,
        reps: config.reps,
        seed: config.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureConfig {
    pub arms: usize,
    /// Pulls of every arm in each environment (round-robin within the environment).
    pub per_arm: usize,
    /// Number of environments, the first included.
    pub envs: usize,
    pub sigma: f64,
    pub reps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjectureRow {
    pub j: usize,
    pub m: usize,
    pub mc_cov: f64,
    pub analytic_cov: f64,
    pub conjectured: f64,
    pub abs_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct ConjectureReport {
    pub rows: Vec<ConjectureRow>,
    pub reps: u64,
    pub seed: u64,
}

impl ConjectureReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,reps,j,m,mc_cov,analytic_cov,conjectured,abs_deviation\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.seed,
                self.reps,
                r.j,
                r.m,
                sig10(r.mc_cov),
                sig10(r.analytic_cov),
                sig10(r.conjectured),
                sig10(r.abs_deviation)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagError> {
        Ok(write_text(&self.to_csv(), path)?)
    }
}

/// Off-diagonal covariances of the shift estimates against the conjectured
/// limit `sigma^2 / sum_i n_i0`, the inverse sample size of the first
/// environment. Informational only.
pub fn covariance_conjecture_probe(
    config: &ConjectureConfig,
) -> Result<ConjectureReport, DiagError> {
    if config.arms < 2 || config.per_arm < 1 || config.envs < 1 {
        return Err(DiagError::InvalidInput(
            "need at least 2 arms, 1 pull per cell and 1 environment".into(),
        ));
    }
    let design = FixedDesign::balanced(config.arms, config.envs, config.per_arm);
    let truth = Truth {
        mu: vec![0.0; config.arms],
        shifts: vec![0.0; config.envs],
        sigma: config.sigma,
    };
    let conjectured = config.sigma.powi(2) / (config.arms * config.per_arm) as f64;
    if config.envs <= 2 {
        return Ok(ConjectureReport {
            rows: Vec::new(),
            reps: config.reps,
            seed: config.seed,
        });
    }
    let report = estimator_moments(&design, &truth, config.reps, config.seed)?;
    let k = config.arms;
    let mut rows = Vec::new();
    for j in 1..config.envs {
        for m in j + 1..config.envs {
            let (a, b) = (k + j - 1, k + m - 1);
            let mc = report.mc_cov[(a, b)];
            rows.push(ConjectureRow {
                j,
                m,
                mc_cov: mc,
                analytic_cov: report.analytic_cov[(a, b)],
                conjectured,
                abs_deviation: (mc - conjectured).abs(),
            });
        }
    }
    Ok(ConjectureReport {
        rows,
        reps: config.reps,
        seed: config.seed,
    })
}

/// Shift-induced part of the sample-mean difference of arms `i1` and `i2`:
/// `sum_j s_j (n_{i1 j} / N_i1 - n_{i2 j} / N_i2)`.
pub fn bias_decomposition(
    stats: &SufficientStats,
    shifts: &[f64],
    i1: usize,
    i2: usize,
) -> Result<f64, DiagError> {
    if shifts.len() < stats.envs() {
        return Err(DiagError::InvalidInput(format!(
            "{} shifts for {} environments",
            shifts.len(),
            stats.envs()
        )));
    }
    let (n1, n2) = (stats.pulls(i1), stats.pulls(i2));
    if n1 == 0 {
        return Err(DiagError::UnsampledArm(i1));
    }
    if n2 == 0 {
        return Err(DiagError::UnsampledArm(i2));
    }
    Ok((0..stats.envs())
        .map(|j| {
            shifts[j]
                * (stats.count(i1, j) as f64 / n1 as f64 - stats.count(i2, j) as f64 / n2 as f64)
        })
        .sum())
}

/// Noiseless statistics: `counts[j][i]` pulls of arm `i` in environment `j`,
/// each with reward `mu_i + s_j`. Every environment needs at least one pull.
pub fn noiseless_stats(
    counts: &[Vec<u64>],
    mu: &[f64],
    shifts: &[f64],
) -> Result<SufficientStats, DiagError> {
    if shifts.len() < counts.len() || counts.iter().any(|row| row.len() != mu.len()) {
        return Err(DiagError::InvalidInput(
            "counts, means and shifts disagree in shape".into(),
        ));
    }
    let mut stats = SufficientStats::new(mu.len());
    for (j, row) in counts.iter().enumerate() {
        if row.iter().all(|&n| n == 0) {
            return Err(DiagError::InvalidInput(format!(
                "environment {j} has no pulls"
            )));
        }
        for (i, &n) in row.iter().enumerate() {
            for _ in 0..n {
                stats
                    .record(j, i, mu[i] + shifts[j])
                    .map_err(|e| DiagError::InvalidInput(e.to_string()))?;
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRow {
    pub pattern: u64,
    pub bias: f64,
    /// `(rbar_0 - rbar_1) - (mu_0 - mu_1) - bias`.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
    pub seed: u64,
}

impl BiasReport {
    pub fn max_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.residual.abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,pattern,bias,residual\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:e}\n",
                self.seed,
                r.pattern,
                sig10(r.bias),
                r.residual
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagError> {
        Ok(write_text(&self.to_csv(), path)?)
    }
}

/// The bias identity on `patterns` random count patterns: up to 6 arms and
/// 6 environments, 0 to 5 pulls per cell, shifts `U(0, 20)`.
pub fn bias_identity_check(patterns: u64, seed: u64) -> BiasReport {
    let rows = (0..patterns)
        .map(|p| {
            let mut rng = substream(seed, Purpose::Diagnostic, p);
            let arms = rng.random_range(2..=6usize);
            let envs = rng.random_range(1..=6usize);
            let mu: Vec<f64> = (0..arms).map(|_| rng.random_range(-5.0..5.0)).collect();
            let shifts: Vec<f64> = (0..envs).map(|_| rng.random_range(0.0..20.0)).collect();
            let mut counts: Vec<Vec<u64>> = (0..envs)
                .map(|_| (0..arms).map(|_| rng.random_range(0..=5u64)).collect())
                .collect();
            // every environment and arms 0 and 1 need at least one pull
            for row in counts.iter_mut() {
                if row.iter().all(|&n| n == 0) {
                    let i = rng.random_range(0..arms);
                    row[i] = 1;
                }
            }
            for i in 0..2 {
                if counts.iter().all(|row| row[i] == 0) {
                    let j = rng.random_range(0..envs);
                    counts[j][i] = 1;
                }
            }
            let stats = noiseless_stats(&counts, &mu, &shifts).expect("valid pattern");
            let bias = bias_decomposition(&stats, &shifts, 0, 1).expect("both arms sampled");
            let diff = stats.sample_mean(0).unwrap() - stats.sample_mean(1).unwrap();
            BiasRow {
                pattern: p,
                bias,
                residual: diff - (mu[0] - mu[1]) - bias,
            }
        })
        .collect();
    BiasReport { rows, seed }
}
