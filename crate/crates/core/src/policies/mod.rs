//! Allocation and selection policies.
//!
//! A policy is a deterministic state machine driven by the runner: at every
//! time step it sees a [`PolicyContext`] (including whether the environment
//! just changed), picks an arm, and the runner records the reward into the
//! shared [`SufficientStats`]. Recommendations never sample.

mod baselines;
mod init;
mod lucb;
mod reduce;

pub use baselines::{RoundRobin, SuccessiveRejects};
pub use init::RandomizedRoundRobinInit;
pub use lucb::{Lucb, Scorer};
pub use reduce::{shift_adjusted_stats, ReduceToMab};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ols::{NoiseVariance, OlsError, OlsFit};
use crate::rng::{substream, Purpose};
use crate::stats::SufficientStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("OLS fit unavailable: {0}")]
    FitUnavailable(#[from] OlsError),
    #[error("arm {0} has no samples")]
    UnsampledArm(usize),
    #[error("invalid policy spec: {0}")]
    InvalidSpec(String),
}

/// What a policy may look at before choosing the arm for step `t`.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub t: u64,
    /// True exactly at the first step of every environment after the first.
    pub env_changed: bool,
    pub env: usize,
    pub budget: u64,
    /// Arm played at `t - 1`.
    pub last_arm: Option<usize>,
    /// Whether step `t - 1` was the first step of its environment.
    pub last_env_changed: bool,
    pub stats: &'a SufficientStats,
}

pub trait Policy: Send {
    fn label(&self) -> String;

    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<usize, PolicyError>;

    /// Recommended best arm given the history in `stats`.
    fn recommend(&self, stats: &SufficientStats) -> Result<usize, PolicyError>;

    /// Policies whose schedule is planned around the final budget must be run
    /// separately for every budget of interest.
    fn budget_dependent(&self) -> bool {
        false
    }

    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

/// How a policy obtains the noise variance for its confidence widths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    Known,
    #[default]
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyKind {
    Linlucb,
    RoundRobin,
    SampleMeanLucb,
    SuccessiveRejects,
    ReduceToMab { inner: Box<PolicyKind> },
}

impl PolicyKind {
    pub const KIND_NAMES: [&'static str; 5] = [
        "linlucb",
        "round-robin",
        "sample-mean-lucb",
        "successive-rejects",
        "reduce-to-mab",
    ];

    pub fn label(&self) -> String {
        match self {
            PolicyKind::Linlucb => "linlucb".into(),
            PolicyKind::RoundRobin => "round-robin".into(),
            PolicyKind::SampleMeanLucb => "sample-mean-lucb".into(),
            PolicyKind::SuccessiveRejects => "successive-rejects".into(),
            PolicyKind::ReduceToMab { inner } => format!("reduce-to-mab({})", inner.label()),
        }
    }

    /// Whether the policy starts with randomized round-robin initialization.
    pub fn uses_initialization(&self) -> bool {
        !matches!(self, PolicyKind::RoundRobin | PolicyKind::SuccessiveRejects)
    }
}

fn default_n0() -> u32 {
    6
}

fn default_prior() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default = "default_n0")]
    pub n0: u32,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
    /// Variance used by `estimated` mode before residual degrees of freedom exist.
    #[serde(default = "default_prior")]
    pub sigma2_prior: f64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            n0: default_n0(),
            sigma_mode: SigmaMode::default(),
            sigma2_prior: default_prior(),
        }
    }

    pub fn with_n0(mut self, n0: u32) -> Self {
        self.n0 = n0;
        self
    }

    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.sigma_mode = mode;
        self
    }

    pub fn label(&self) -> String {
        self.kind.label()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.n0 < 2 {
            return Err(PolicyError::InvalidSpec(format!(
                "n0 must be at least 2, got {}",
                self.n0
            )));
        }
        if self.sigma2_prior.is_nan() || self.sigma2_prior <= 0.0 {
            return Err(PolicyError::InvalidSpec(
                "sigma2_prior must be positive".into(),
            ));
        }
        if let PolicyKind::ReduceToMab { inner } = &self.kind {
            if matches!(**inner, PolicyKind::ReduceToMab { .. }) {
                return Err(PolicyError::InvalidSpec(
                    "reduce-to-mab cannot wrap itself".into(),
                ));
            }
        }
        Ok(())
    }

    /// Smallest budget the policy can run to completion.
    pub fn min_budget(&self, arms: usize) -> u64 {
        if self.kind.uses_initialization() {
            self.n0 as u64 * arms as u64
        } else {
            arms as u64
        }
    }

    fn variance(&self, known_sigma2: f64) -> NoiseVariance {
        match self.sigma_mode {
            SigmaMode::Known => NoiseVariance::Known {
                sigma2: known_sigma2,
            },
            SigmaMode::Estimated => NoiseVariance::Estimated {
                prior: self.sigma2_prior,
            },
        }
    }

    /// Instantiate the policy for one replication.
    pub fn build(
        &self,
        arms: usize,
        budget: u64,
        seed: u64,
        known_sigma2: f64,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        self.validate()?;
        let variance = self.variance(known_sigma2);
        let n0 = self.n0;
        let policy: Box<dyn Policy> = match &self.kind {
            PolicyKind::Linlucb => Box::new(Lucb::new(arms, n0, Scorer::Ols(variance), seed)),
            PolicyKind::SampleMeanLucb => {
                Box::new(Lucb::new(arms, n0, Scorer::SampleMean(variance), seed))
            }
            PolicyKind::RoundRobin => Box::new(RoundRobin::new(arms, seed)),
            PolicyKind::SuccessiveRejects => Box::new(SuccessiveRejects::new(arms, budget, seed)),
            PolicyKind::ReduceToMab { inner } => {
                let inner_policy: Box<dyn Policy> = match **inner {
                    PolicyKind::Linlucb => {
                        Box::new(Lucb::without_init(arms, Scorer::Ols(variance), seed))
                    }
                    PolicyKind::SampleMeanLucb => {
                        Box::new(Lucb::without_init(arms, Scorer::SampleMean(variance), seed))
                    }
                    PolicyKind::RoundRobin => Box::new(RoundRobin::new(arms, seed)),
                    PolicyKind::SuccessiveRejects => {
                        Box::new(SuccessiveRejects::new(arms, budget, seed))
                    }
                    PolicyKind::ReduceToMab { .. } => unreachable!("rejected by validate"),
                };
                Box::new(ReduceToMab::new(arms, n0, inner_policy, seed))
            }
        };
        Ok(policy)
    }
}

/// Uniformly random index among the maxima of `values` (exact ties), skipping
/// `exclude`.
pub(crate) fn argmax_random_tie(
    values: &[f64],
    exclude: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut winners: Vec<usize> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        if v > best || winners.is_empty() {
            best = v;
            winners.clear();
            winners.push(i);
        } else if v == best {
            winners.push(i);
        }
    }
    match winners.len() {
        1 => winners[0],
        n => winners[rng.random_range(0..n)],
    }
}

/// Tie-break stream for a recommendation made after `samples` observations.
pub(crate) fn recommend_rng(seed: u64, samples: u64) -> ChaCha8Rng {
    substream(seed, Purpose::Recommend, samples)
}

/// Arm with the largest OLS mean; ties broken uniformly with `rng`.
pub fn select_best(fit: &OlsFit, rng: &mut ChaCha8Rng) -> usize {
    argmax_random_tie(&fit.mu_hat, None, rng)
}

/// Arm with the largest sample mean; ties broken uniformly with `rng`.
pub fn select_best_sample_mean(
    stats: &SufficientStats,
    rng: &mut ChaCha8Rng,
) -> Result<usize, PolicyError> {
    let means = sample_means(stats)?;
    Ok(argmax_random_tie(&means, None, rng))
}

pub(crate) fn sample_means(stats: &SufficientStats) -> Result<Vec<f64>, PolicyError> {
    (0..stats.arms())
        .map(|i| stats.sample_mean(i).ok_or(PolicyError::UnsampledArm(i)))
        .collect()
}
