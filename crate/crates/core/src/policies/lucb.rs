use rand_chacha::ChaCha8Rng;

use super::{
    argmax_random_tie, recommend_rng, sample_means, select_best, select_best_sample_mean, Policy,
    PolicyContext, PolicyError, RandomizedRoundRobinInit,
};
use crate::ols::{exploration_rate, fit_ols, mean_covariance, ucb, NoiseVariance};
use crate::rng::{substream, Purpose};
use crate::stats::SufficientStats;

/// Source of the greedy index and the upper confidence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    /// OLS means; widths from the OLS covariance.
    Ols(NoiseVariance),
    /// Sample means with the stationary bound `r_i + sqrt(16 ln t * var / N_i^2)`.
    SampleMean(NoiseVariance),
}

/// Means and upper confidence bounds of every arm.
#[derive(Debug, Clone)]
pub struct Scores {
    pub means: Vec<f64>,
    pub ucbs: Vec<f64>,
}

impl Scorer {
    /// Scores from `stats`, with the exploration clock at `t`.
    pub fn scores(&self, stats: &SufficientStats, t: u64) -> Result<Scores, PolicyError> {
        match *self {
            Scorer::Ols(variance) => {
                let fit = fit_ols(stats)?;
                let cov = mean_covariance(&fit, variance.resolve(fit.sigma2_hat));
                let ucbs = (0..stats.arms())
                    .map(|i| ucb(&fit, &cov, i, t, stats.pulls(i)))
                    .collect();
                Ok(Scores {
                    means: fit.mu_hat,
                    ucbs,
                })
            }
            Scorer::SampleMean(variance) => {
                let means = sample_means(stats)?;
                let sigma2 = variance.resolve(pooled_variance(stats));
                let ucbs = (0..stats.arms())
                    .map(|i| {
                        let n = stats.pulls(i);
                        means[i] + exploration_rate(t, n) * (sigma2 / n as f64).sqrt()
                    })
                    .collect();
                Ok(Scores { means, ucbs })
            }
        }
    }

    fn recommend(
        &self,
        stats: &SufficientStats,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, PolicyError> {
        match self {
            Scorer::Ols(_) => Ok(select_best(&fit_ols(stats)?, rng)),
            Scorer::SampleMean(_) => select_best_sample_mean(stats, rng),
        }
    }
}

/// `sum_i sum_k (r - r_i)^2 / (N - K)`, ignoring environments.
pub fn pooled_variance(stats: &SufficientStats) -> Option<f64> {
    let k = stats.arms();
    let n = stats.total();
    if n <= k as u64 || stats.per_arm().contains(&0) {
        return None;
    }
    let within: f64 = (0..k)
        .map(|i| stats.arm_sq_sum(i) - stats.arm_total(i).powi(2) / stats.pulls(i) as f64)
        .sum();
    Some(within.max(0.0) / (n - k as u64) as f64)
}

/// LUCB-style allocation: after initialization, play pairs (greedy arm, then
/// the highest-UCB arm among the others), both computed from the fit at the
/// start of the pair. If the previous step opened a new environment and the
/// greedy arm is the one just played, the pair is played in reverse order so
/// that every environment starts with two distinct arms.
#[derive(Debug, Clone)]
pub struct Lucb {
    arms: usize,
    init: Option<RandomizedRoundRobinInit>,
    scorer: Scorer,
    pending: Option<usize>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl Lucb {
    pub fn new(arms: usize, n0: u32, scorer: Scorer, seed: u64) -> Self {
        let mut rng = substream(seed, Purpose::Policy, 0);
        let init = RandomizedRoundRobinInit::new(arms, n0, &mut rng);
        Lucb {
            arms,
            init: Some(init),
            scorer,
            pending: None,
            rng,
            seed,
        }
    }

    /// Pair schedule only; for wrappers that run their own initialization.
    pub fn without_init(arms: usize, scorer: Scorer, seed: u64) -> Self {
        Lucb {
            arms,
            init: None,
            scorer,
            pending: None,
            rng: substream(seed, Purpose::Policy, 0),
            seed,
        }
    }

    pub fn scorer(&self) -> Scorer {
        self.scorer
    }

    /// The (greedy, challenger) pair from the current statistics.
    pub fn pair(&mut self, stats: &SufficientStats) -> Result<(usize, usize), PolicyError> {
        let scores = self.scorer.scores(stats, stats.total())?;
        let leader = argmax_random_tie(&scores.means, None, &mut self.rng);
        let challenger = argmax_random_tie(&scores.ucbs, Some(leader), &mut self.rng);
        Ok((leader, challenger))
    }
}

impl Policy for Lucb {
    fn label(&self) -> String {
        match self.scorer {
            Scorer::Ols(_) => "linlucb".into(),
            Scorer::SampleMean(_) => "sample-mean-lucb".into(),
        }
    }

    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<usize, PolicyError> {
        if let Some(init) = self.init.as_mut() {
            if !init.is_done() {
                return Ok(init.next(ctx.env_changed, &mut self.rng));
            }
        }
        if let Some(arm) = self.pending.take() {
            return Ok(arm);
        }
        debug_assert!(self.arms >= 2);
        let (leader, challenger) = self.pair(ctx.stats)?;
        let swap = !ctx.env_changed && ctx.last_env_changed && ctx.last_arm == Some(leader);
        let (first, second) = if swap {
            (challenger, leader)
        } else {
            (leader, challenger)
        };
        self.pending = Some(second);
        Ok(first)
    }

    fn recommend(&self, stats: &SufficientStats) -> Result<usize, PolicyError> {
        let mut rng = recommend_rng(self.seed, stats.total());
        self.scorer.recommend(stats, &mut rng)
    }
}
