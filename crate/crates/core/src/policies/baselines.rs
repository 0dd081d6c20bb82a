use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{
    argmax_random_tie, recommend_rng, sample_means, select_best_sample_mean, Policy, PolicyContext,
    PolicyError,
};
use crate::rng::{substream, Purpose};
use crate::stats::SufficientStats;

/// Cycles through the arms in index order; recommends the best sample mean.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    arms: usize,
    next: usize,
    seed: u64,
}

impl RoundRobin {
    pub fn new(arms: usize, seed: u64) -> Self {
        RoundRobin {
            arms,
            next: 0,
            seed,
        }
    }
}

impl Policy for RoundRobin {
    fn label(&self) -> String {
        "round-robin".into()
    }

    fn select(&mut self, _ctx: &PolicyContext<'_>) -> Result<usize, PolicyError> {
        let arm = self.next;
        self.next = (self.next + 1) % self.arms;
        Ok(arm)
    }

    fn recommend(&self, stats: &SufficientStats) -> Result<usize, PolicyError> {
        select_best_sample_mean(stats, &mut recommend_rng(self.seed, stats.total()))
    }
}

/// `1/2 + sum_{i=2}^{K} 1/i`.
pub(crate) fn log_bar(arms: usize) -> f64 {
    0.5 + (2..=arms).map(|i| 1.0 / i as f64).sum::<f64>()
}

/// Cumulative per-arm sample targets of phases `1..K-1`:
/// `floor((T - K) / (log_bar(K) * (K + 1 - k)))`.
pub(crate) fn phase_targets(arms: usize, budget: u64) -> Vec<u64> {
    let lb = log_bar(arms);
    let spare = budget.saturating_sub(arms as u64) as f64;
    (1..arms)
        .map(|k| (spare / (lb * (arms + 1 - k) as f64)).floor() as u64)
        .collect()
}

/// Successive Rejects with randomized round-robin sampling inside each phase.
///
/// Phase `k` samples the surviving arms until each has the phase's cumulative
/// target, then drops the arm with the lowest sample mean. The last phase
/// absorbs whatever budget the floored schedule leaves over.
#[derive(Debug, Clone)]
pub struct SuccessiveRejects {
    arms: usize,
    budget: u64,
    targets: Vec<u64>,
    survivors: Vec<usize>,
    phase: usize,
    queue: Vec<usize>,
    rng: ChaCha8Rng,
    seed: u64,
    fallback: Option<RoundRobin>,
    warnings: Vec<String>,
}

impl SuccessiveRejects {
    pub fn new(arms: usize, budget: u64, seed: u64) -> Self {
        let targets = phase_targets(arms, budget);
        let mut warnings = Vec::new();
        let fallback = if targets.first().is_none_or(|&n| n < 1) {
            let msg = format!(
                "successive-rejects: budget {budget} too small for {arms} arms; using round-robin"
            );
            log::warn!("{msg}");
            warnings.push(msg);
            Some(RoundRobin::new(arms, seed))
        } else {
            None
        };
        SuccessiveRejects {
            arms,
            budget,
            targets,
            survivors: (0..arms).collect(),
            phase: 0,
            queue: Vec::new(),
            rng: substream(seed, Purpose::Policy, 0),
            seed,
            fallback,
            warnings,
        }
    }

    pub fn survivors(&self) -> &[usize] {
        &self.survivors
    }

    pub fn targets(&self) -> &[u64] {
        &self.targets
    }

    fn last_phase(&self) -> bool {
        self.phase + 2 >= self.arms
    }

    fn needs_sample(&self, arm: usize, stats: &SufficientStats) -> bool {
        self.last_phase() || stats.pulls(arm) < self.targets[self.phase]
    }

    fn eliminate_worst(&mut self, stats: &SufficientStats) -> Result<(), PolicyError> {
        let means = sample_means(stats)?;
        let negated: Vec<f64> = self.survivors.iter().map(|&a| -means[a]).collect();
        let idx = argmax_random_tie(&negated, None, &mut self.rng);
        self.survivors.remove(idx);
        self.queue.clear();
        self.phase += 1;
        Ok(())
    }
}

impl Policy for SuccessiveRejects {
    fn label(&self) -> String {
        "successive-rejects".into()
    }

    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<usize, PolicyError> {
        if let Some(rr) = self.fallback.as_mut() {
            return rr.select(ctx);
        }
        let stats = ctx.stats;
        while !self.last_phase()
            && self
                .survivors
                .iter()
                .all(|&a| stats.pulls(a) >= self.targets[self.phase])
        {
            self.eliminate_worst(stats)?;
        }
        loop {
            while let Some(arm) = self.queue.pop() {
                if self.survivors.contains(&arm) && self.needs_sample(arm, stats) {
                    return Ok(arm);
                }
            }
            let mut pass: Vec<usize> = self
                .survivors
                .iter()
                .copied()
                .filter(|&a| self.needs_sample(a, stats))
                .collect();
            pass.shuffle(&mut self.rng);
            // popped from the back
            pass.reverse();
            self.queue = pass;
        }
    }

    fn recommend(&self, stats: &SufficientStats) -> Result<usize, PolicyError> {
        let mut rng = recommend_rng(self.seed, stats.total());
        if self.fallback.is_some() {
            return select_best_sample_mean(stats, &mut rng);
        }
        let means = sample_means(stats)?;
        let candidates: Vec<f64> = self.survivors.iter().map(|&a| means[a]).collect();
        Ok(self.survivors[argmax_random_tie(&candidates, None, &mut rng)])
    }

    fn budget_dependent(&self) -> bool {
        true
    }

    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }
}

impl SuccessiveRejects {
    pub fn budget(&self) -> u64 {
        self.budget
    }
}
