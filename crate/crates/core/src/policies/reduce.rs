use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Policy, PolicyContext, PolicyError, RandomizedRoundRobinInit};
use crate::ols::{fit_ols, OlsFit};
use crate::rng::{substream, Purpose};
use crate::stats::SufficientStats;

/// Statistics of the history with every reward replaced by `r - s_hat[env]`,
/// collapsed into a single environment.
pub fn shift_adjusted_stats(stats: &SufficientStats, fit: &OlsFit) -> SufficientStats {
    let cells: Vec<(u64, f64, f64)> = (0..stats.arms())
        .map(|i| {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for j in 0..stats.envs() {
                let n = stats.count(i, j);
                if n == 0 {
                    continue;
                }
                let s = fit.shift(j);
                let cell = stats.cell_sum(i, j);
                sum += cell - n as f64 * s;
                sq += stats.cell_sq_sum(i, j) - 2.0 * s * cell + n as f64 * s * s;
            }
            (stats.pulls(i), sum, sq)
        })
        .collect();
    SufficientStats::stationary_from_cells(&cells)
}

/// Runs a stationary-bandit policy on shift-subtracted rewards.
///
/// The wrapper performs randomized round-robin initialization itself, then
/// refits OLS before every decision and hands the inner policy statistics of
/// `r - s_hat` over the whole history. Every new environment still starts
/// with two distinct arms.
pub struct ReduceToMab {
    arms: usize,
    init: RandomizedRoundRobinInit,
    inner: Box<dyn Policy>,
    rng: ChaCha8Rng,
}

impl ReduceToMab {
    pub fn new(arms: usize, n0: u32, inner: Box<dyn Policy>, seed: u64) -> Self {
        // same stream as the unwrapped policies, so initialization matches theirs
        let mut rng = substream(seed, Purpose::Policy, 0);
        let init = RandomizedRoundRobinInit::new(arms, n0, &mut rng);
        ReduceToMab {
            arms,
            init,
            inner,
            rng,
        }
    }

    fn adjusted(stats: &SufficientStats) -> Result<SufficientStats, PolicyError> {
        let fit = fit_ols(stats)?;
        Ok(shift_adjusted_stats(stats, &fit))
    }
}

impl Policy for ReduceToMab {
    fn label(&self) -> String {
        format!("reduce-to-mab({})", self.inner.label())
    }

    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<usize, PolicyError> {
        if !self.init.is_done() {
            return Ok(self.init.next(ctx.env_changed, &mut self.rng));
        }
        let adjusted = Self::adjusted(ctx.stats)?;
        let inner_ctx = PolicyContext {
            stats: &adjusted,
            ..*ctx
        };
        let arm = self.inner.select(&inner_ctx)?;
        let repeats_first = !ctx.env_changed && ctx.last_env_changed && ctx.last_arm == Some(arm);
        if !repeats_first {
            return Ok(arm);
        }
        // least-sampled other arm, ties uniform
        let others: Vec<usize> = (0..self.arms).filter(|&a| a != arm).collect();
        let fewest = others
            .iter()
            .map(|&a| ctx.stats.pulls(a))
            .min()
            .unwrap_or(0);
        let tied: Vec<usize> = others
            .into_iter()
            .filter(|&a| ctx.stats.pulls(a) == fewest)
            .collect();
        Ok(tied[self.rng.random_range(0..tied.len())])
    }

    fn recommend(&self, stats: &SufficientStats) -> Result<usize, PolicyError> {
        self.inner.recommend(&Self::adjusted(stats)?)
    }

    fn budget_dependent(&self) -> bool {
        self.inner.budget_dependent()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings()
    }
}
