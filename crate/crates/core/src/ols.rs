//! Joint least-squares estimation of arm means and environment shifts.
//!
//! The model is `r = mu_arm + s_env + noise` with the first environment's shift
//! pinned to zero, so reported shifts are relative to environment 0. The Gram
//! matrix of this design has a diagonal arm block `diag(N_i)`, a diagonal
//! environment block `diag(m_j)` (j >= 1) and cross entries `n_ij`; it is built
//! from counts, never from the per-observation design.
//!
//! The fit eliminates the diagonal environment block first and factors the
//! K x K Schur complement `S = diag(N_i) - sum_j n_j n_j' / m_j` by Cholesky.
//! `S^-1` is exactly the arm block of the inverse Gram matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Observation;
use crate::linalg::Cholesky;
use crate::stats::SufficientStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlsError {
    #[error("design is disconnected: arm means are not identifiable")]
    DisconnectedDesign,
    #[error("Gram matrix is numerically singular")]
    SingularGram,
    #[error("observation log is malformed: {0}")]
    BadLog(String),
}

/// Source of the noise variance used in confidence widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum NoiseVariance {
    Known {
        sigma2: f64,
    },
    /// Plug-in estimate, or `prior` while the fit has no residual degrees of freedom.
    Estimated {
        prior: f64,
    },
}

impl Default for NoiseVariance {
    fn default() -> Self {
        NoiseVariance::Estimated { prior: 1.0 }
    }
}

impl NoiseVariance {
    pub fn resolve(&self, sigma2_hat: Option<f64>) -> f64 {
        match *self {
            NoiseVariance::Known { sigma2 } => sigma2,
            NoiseVariance::Estimated { prior } => sigma2_hat.unwrap_or(prior),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Estimated arm means (relative to environment 0's shift).
    pub mu_hat: Vec<f64>,
    /// Estimated shifts of environments 1..J; environment 0 is pinned to 0.
    pub s_hat: Vec<f64>,
    /// Residual variance estimate; present iff `dof >= 1`.
    pub sigma2_hat: Option<f64>,
    /// `N - (K + J - 1)`.
    pub dof: i64,
    pub rss: f64,
    mean_cov_unit: DMatrix<f64>,
}

impl OlsFit {
    pub fn arms(&self) -> usize {
        self.mu_hat.len()
    }

    /// Shift of environment `env` with environment 0 pinned at zero.
    pub fn shift(&self, env: usize) -> f64 {
        if env == 0 {
            0.0
        } else {
            self.s_hat[env - 1]
        }
    }

    /// Arm block of `(X'X)^-1`.
    pub fn mean_cov_unit(&self) -> &DMatrix<f64> {
        &self.mean_cov_unit
    }

    /// Full `(X'X)^-1` over `(mu, s_1..s_{J-1})`, expanded from the arm block.
    ///
    /// `stats` must be the statistics this fit was computed from.
    pub fn theta_cov_unit(&self, stats: &SufficientStats) -> DMatrix<f64> {
        let k = self.arms();
        let envs = stats.envs();
        assert_eq!(stats.arms(), k, "statistics do not match the fit");
        assert_eq!(
            envs,
            self.s_hat.len() + 1,
            "statistics do not match the fit"
        );
        let p = k + envs - 1;
        let s_inv = &self.mean_cov_unit;
        // W = S^-1 C D^-1, the negated upper-right block
        let mut w = DMatrix::<f64>::zeros(k, envs - 1);
        for j in 1..envs {
            let m = stats.env_count(j) as f64;
            let col = stats.env_column(j);
            for a in 0..k {
                let mut acc = 0.0;
                for (b, &n) in col.iter().enumerate() {
                    if n > 0 {
                        acc += s_inv[(a, b)] * n as f64;
                    }
                }
                w[(a, j - 1)] = acc / m;
            }
        }
        let mut out = DMatrix::<f64>::zeros(p, p);
        out.view_mut((0, 0), (k, k)).copy_from(s_inv);
        for a in 0..k {
            for j in 0..envs - 1 {
                out[(a, k + j)] = -w[(a, j)];
                out[(k + j, a)] = -w[(a, j)];
            }
        }
        // D^-1 + D^-1 C' S^-1 C D^-1 = D^-1 + (C D^-1)' W
        for j1 in 1..envs {
            let m1 = stats.env_count(j1) as f64;
            let col1 = stats.env_column(j1);
            for j2 in j1..envs {
                let mut acc = 0.0;
                for (a, &n) in col1.iter().enumerate() {
                    if n > 0 {
                        acc += n as f64 / m1 * w[(a, j2 - 1)];
                    }
                }
                if j1 == j2 {
                    acc += 1.0 / m1;
                }
                out[(k + j1 - 1, k + j2 - 1)] = acc;
                out[(k + j2 - 1, k + j1 - 1)] = acc;
            }
        }
        out
    }
}

/// Least-squares fit from sufficient statistics.
pub fn fit_ols(stats: &SufficientStats) -> Result<OlsFit, OlsError> {
    let k = stats.arms();
    let envs = stats.envs();
    if envs == 0 || !stats.is_connected() {
        return Err(OlsError::DisconnectedDesign);
    }
    let mut schur = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..k {
        schur[(i, i)] += stats.count(i, 0) as f64;
        rhs[i] += stats.cell_sum(i, 0);
    }
    for j in 1..envs {
        let m = stats.env_count(j);
        let mf = m as f64;
        let total = stats.env_total(j);
        let col = stats.env_column(j);
        for (a, &na) in col.iter().enumerate() {
            if na == 0 {
                continue;
            }
            // integer numerators keep single-arm environments exactly neutral
            schur[(a, a)] += (na * (m - na)) as f64 / mf;
            rhs[a] += (stats.cell_sum(a, j) * mf - na as f64 * total) / mf;
            for (b, &nb) in col.iter().enumerate() {
                if b != a && nb > 0 {
                    schur[(a, b)] -= (na * nb) as f64 / mf;
                }
            }
        }
    }
    let chol = Cholesky::new(&schur).ok_or(OlsError::SingularGram)?;
    let mu = chol.solve(&rhs);
    let mu_hat: Vec<f64> = mu.iter().copied().collect();
    let s_hat: Vec<f64> = (1..envs)
        .map(|j| {
            let fitted: f64 = stats
                .env_column(j)
                .iter()
                .zip(&mu_hat)
                .map(|(&n, &m)| n as f64 * m)
                .sum();
            (stats.env_total(j) - fitted) / stats.env_count(j) as f64
        })
        .collect();

    let explained: f64 = (0..k).map(|i| mu_hat[i] * stats.arm_total(i)).sum::<f64>()
        + (1..envs)
            .map(|j| s_hat[j - 1] * stats.env_total(j))
            .sum::<f64>();
    let rss = (stats.sq_sum() - explained).max(0.0);
    let dof = stats.total() as i64 - (k + envs - 1) as i64;
    let sigma2_hat = (dof >= 1).then(|| rss / dof as f64);

    Ok(OlsFit {
        mu_hat,
        s_hat,
        sigma2_hat,
        dof,
        rss,
        mean_cov_unit: chol.inverse(),
    })
}

/// `sigma2` times the arm block of `(X'X)^-1`.
pub fn mean_covariance(fit: &OlsFit, sigma2: f64) -> DMatrix<f64> {
    fit.mean_cov_unit() * sigma2
}

/// `sqrt(16 ln t / N_i)`.
pub fn exploration_rate(t: u64, pulls: u64) -> f64 {
    (16.0 * (t.max(1) as f64).ln() / pulls as f64).sqrt()
}

/// Upper confidence bound of arm `arm`'s mean.
pub fn ucb(fit: &OlsFit, cov: &DMatrix<f64>, arm: usize, t: u64, pulls: u64) -> f64 {
    fit.mu_hat[arm] + exploration_rate(t, pulls) * cov[(arm, arm)].max(0.0).sqrt()
}

/// Dense Gram matrix `X'X` and right-hand side `X'r` assembled from counts.
pub fn normal_equations(stats: &SufficientStats) -> (DMatrix<f64>, DVector<f64>) {
    let k = stats.arms();
    let envs = stats.envs();
    let p = k + envs.saturating_sub(1);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut xr = DVector::<f64>::zeros(p);
    for i in 0..k {
        gram[(i, i)] = stats.pulls(i) as f64;
        xr[i] = stats.arm_total(i);
    }
    for j in 1..envs {
        let c = k + j - 1;
        gram[(c, c)] = stats.env_count(j) as f64;
        xr[c] = stats.env_total(j);
        for i in 0..k {
            let n = stats.count(i, j) as f64;
            gram[(i, c)] = n;
            gram[(c, i)] = n;
        }
    }
    (gram, xr)
}

/// Arm indicators `A`, shift indicators `B` and rewards `r`, one row per observation.
pub type Design = (DMatrix<f64>, DMatrix<f64>, DVector<f64>);

/// Per-observation design `(A, B, r)`: arm indicators, shift indicators for
/// environments 1..J, and rewards.
pub fn design_matrices(log: &[Observation], arms: usize) -> Result<Design, OlsError> {
    let mut envs = 0usize;
    for (idx, o) in log.iter().enumerate() {
        if o.arm >= arms {
            return Err(OlsError::BadLog(format!("arm {} at row {idx}", o.arm)));
        }
        if o.env > envs || (idx == 0 && o.env != 0) {
            return Err(OlsError::BadLog(format!(
                "environment {} at row {idx} skips an environment",
                o.env
            )));
        }
        if idx > 0 && o.env < log[idx - 1].env {
            return Err(OlsError::BadLog(format!(
                "environment decreases at row {idx}"
            )));
        }
        envs = envs.max(o.env + 1);
    }
    let n = log.len();
    let mut a = DMatrix::<f64>::zeros(n, arms);
    let mut b = DMatrix::<f64>::zeros(n, envs.saturating_sub(1));
    let mut r = DVector::<f64>::zeros(n);
    for (row, o) in log.iter().enumerate() {
        a[(row, o.arm)] = 1.0;
        if o.env > 0 {
            b[(row, o.env - 1)] = 1.0;
        }
        r[row] = o.reward;
    }
    Ok((a, b, r))
}

/// Sufficient statistics of a log.
pub fn stats_from_log(log: &[Observation], arms: usize) -> Result<SufficientStats, OlsError> {
    let mut stats = SufficientStats::new(arms);
    for o in log {
        stats
            .record(o.env, o.arm, o.reward)
            .map_err(|e| OlsError::BadLog(e.to_string()))?;
    }
    Ok(stats)
}

fn hat(m: &DMatrix<f64>) -> Result<DMatrix<f64>, OlsError> {
    let inv = (m.transpose() * m)
        .try_inverse()
        .ok_or(OlsError::SingularGram)?;
    Ok(m * inv * m.transpose())
}

/// Block-separated solution on an explicit observation log:
/// `mu = (A'(I-H_B)A)^-1 A'(I-H_B) r` and `s = (B'(I-H_A)B)^-1 B'(I-H_A) r`,
/// with `H_M = M (M'M)^-1 M'`. An independent route to the same estimate as
/// [`fit_ols`].
pub fn fit_ols_separated(
    log: &[Observation],
    arms: usize,
) -> Result<(Vec<f64>, Vec<f64>), OlsError> {
    let stats = stats_from_log(log, arms)?;
    if !stats.is_connected() {
        return Err(OlsError::DisconnectedDesign);
    }
    let (a, b, r) = design_matrices(log, arms)?;
    let n = log.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let resid_b = if b.ncols() == 0 {
        eye.clone()
    } else {
        &eye - hat(&b)?
    };
    let mu = (a.transpose() * &resid_b * &a)
        .try_inverse()
        .ok_or(OlsError::SingularGram)?
        * a.transpose()
        * &resid_b
        * &r;
    let s = if b.ncols() == 0 {
        Vec::new()
    } else {
        let resid_a = &eye - hat(&a)?;
        let s = (b.transpose() * &resid_a * &b)
            .try_inverse()
            .ok_or(OlsError::SingularGram)?
            * b.transpose()
            * &resid_a
            * &r;
        s.iter().copied().collect()
    };
    Ok((mu.iter().copied().collect(), s))
}

/// `sigma2 (A'(I-H_B)A)^-1` computed from the explicit design.
pub fn mean_covariance_separated(
    log: &[Observation],
    arms: usize,
    sigma2: f64,
) -> Result<DMatrix<f64>, OlsError> {
    let (a, b, _) = design_matrices(log, arms)?;
    let n = log.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let resid_b = if b.ncols() == 0 { eye } else { eye - hat(&b)? };
    let inv = (a.transpose() * resid_b * &a)
        .try_inverse()
        .ok_or(OlsError::SingularGram)?;
    Ok(inv * sigma2)
}
