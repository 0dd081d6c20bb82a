use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig};
use super::metrics::{MetricSeries, PolicyOutcomes};
use crate::env::{true_best, BanditInstance, EnvError, ObservationStream};
use crate::policies::{Policy, PolicyError, PolicySpec};
use crate::rng::replication_seed;
use crate::stats::{StatsError, SufficientStats};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("replication {rep} of {policy}: {source}")]
    Runtime {
        rep: u64,
        policy: String,
        #[source]
        source: SimError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-step record of one run.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub arms: Vec<usize>,
    pub envs: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// One recommendation per checkpoint.
    pub recommendations: Vec<usize>,
    pub stats: SufficientStats,
    pub trace: Option<Trace>,
    pub warnings: Vec<String>,
}

/// Run `policy` for `budget` steps on a fresh stream with seed `seed`,
/// recommending at every checkpoint (each must be `<= budget`).
pub fn simulate(
    instance: &BanditInstance,
    policy: &mut dyn Policy,
    budget: u64,
    checkpoints: &[u64],
    seed: u64,
    keep_trace: bool,
) -> Result<SimOutcome, SimError> {
    let arms = instance.arms();
    let mut stream = ObservationStream::new(instance.clone(), seed);
    let mut stats = SufficientStats::new(arms);
    let mut trace = keep_trace.then(Trace::default);
    let mut recommendations = Vec::with_capacity(checkpoints.len());
    let mut next_checkpoint = checkpoints.iter().peekable();
    while next_checkpoint.peek().is_some_and(|&&c| c == 0) {
        next_checkpoint.next();
        recommendations.push(policy.recommend(&stats)?);
    }
    let mut prev_env = 0usize;
    let mut last_arm = None;
    let mut last_env_changed = false;
    for t in 1..=budget {
        let env = stream.env_of(t);
        let env_changed = t > 1 && env != prev_env;
        let ctx = crate::policies::PolicyContext {
            t,
            env_changed,
            env,
            budget,
            last_arm,
            last_env_changed,
            stats: &stats,
        };
        let arm = policy.select(&ctx)?;
        let reward = stream.observe(arm, t)?;
        stats.record(env, arm, reward)?;
        if let Some(tr) = trace.as_mut() {
            tr.arms.push(arm);
            tr.envs.push(env);
            tr.rewards.push(reward);
        }
        prev_env = env;
        last_arm = Some(arm);
        last_env_changed = env_changed;
        while next_checkpoint.peek().is_some_and(|&&c| c == t) {
            next_checkpoint.next();
            recommendations.push(policy.recommend(&stats)?);
        }
    }
    Ok(SimOutcome {
        recommendations,
        stats,
        trace,
        warnings: policy.warnings(),
    })
}

#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub environments: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub recommendations: Vec<usize>,
    pub correct: Vec<bool>,
    pub opportunity_cost: Vec<f64>,
    pub summary: TraceSummary,
}

/// One replication of one policy over the config's budget grid.
///
/// The stream seed depends only on `(base_seed, rep_index)`, so every policy
/// faces the same shifts, change points and per-pull noise.
pub fn run_replication(
    config: &ExperimentConfig,
    instance: &BanditInstance,
    policy: &PolicySpec,
    rep_index: u64,
) -> Result<ReplicationResult, HarnessError> {
    let seed = replication_seed(config.base_seed, rep_index);
    let wrap = |source: SimError| HarnessError::Runtime {
        rep: rep_index,
        policy: policy.label(),
        source,
    };
    let best = true_best(instance).map_err(|e| wrap(e.into()))?;
    let known_sigma2 = config.sigma * config.sigma;
    let budgets = &config.budgets;
    let Some(&max_budget) = budgets.last() else {
        return Ok(ReplicationResult {
            recommendations: Vec::new(),
            correct: Vec::new(),
            opportunity_cost: Vec::new(),
            summary: TraceSummary {
                environments: 0,
                warnings: Vec::new(),
            },
        });
    };
    let build = |budget: u64| {
        policy
            .build(config.arms, budget, seed, known_sigma2)
            .map_err(|e| wrap(e.into()))
    };

    let mut probe = build(max_budget)?;
    let (recommendations, environments, warnings) = if probe.budget_dependent() {
        let mut recs = Vec::with_capacity(budgets.len());
        let mut envs = 0;
        let mut warnings = Vec::new();
        for &b in budgets {
            let mut p = if b == max_budget {
                std::mem::replace(&mut probe, build(b)?)
            } else {
                build(b)?
            };
            let out = simulate(instance, p.as_mut(), b, &[b], seed, false).map_err(wrap)?;
            recs.extend(out.recommendations);
            envs = envs.max(out.stats.envs());
            warnings.extend(out.warnings);
        }
        (recs, envs, warnings)
    } else {
        let out =
            simulate(instance, probe.as_mut(), max_budget, budgets, seed, false).map_err(wrap)?;
        (out.recommendations, out.stats.envs(), out.warnings)
    };

    let means = instance.arm_means();
    let correct = recommendations.iter().map(|&r| r == best).collect();
    let opportunity_cost = recommendations
        .iter()
        .map(|&r| means[best] - means[r])
        .collect();
    Ok(ReplicationResult {
        recommendations,
        correct,
        opportunity_cost,
        summary: TraceSummary {
            environments,
            warnings,
        },
    })
}

/// All replications of every policy, aggregated into PICS/EOC per budget.
///
/// Replications run in parallel; results are collected in replication order,
/// so the output does not depend on the number of threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricSeries, HarnessError> {
    config.validate()?;
    let instance = config.instance()?;
    let mut outcomes = Vec::with_capacity(config.policies.len());
    for policy in &config.policies {
        let results: Vec<ReplicationResult> = (0..config.replications)
            .into_par_iter()
            .map(|rep| run_replication(config, &instance, policy, rep))
            .collect::<Result<_, _>>()?;
        let mut warned = std::collections::BTreeSet::new();
        for r in &results {
            for w in &r.summary.warnings {
                if warned.insert(w.clone()) {
                    log::warn!("{}: {w}", policy.label());
                }
            }
        }
        outcomes.push(PolicyOutcomes::from_results(
            policy.label(),
            &config.budgets,
            &results,
        ));
    }
    Ok(MetricSeries::new(config, outcomes))
}
