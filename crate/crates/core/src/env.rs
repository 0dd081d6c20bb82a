//! Problem instances and the common-random-number observation stream.
//!
//! Rewards follow `r = mu_i + s_j + sigma * eps`, where `j` is the environment
//! active at the time of the pull. Arms and environments are zero-based here;
//! time steps start at 1.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("arm {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("time step {t} does not follow previous step {last}")]
    NonIncreasingTime { t: u64, last: u64 },
    #[error("best arm is not unique: arms {0:?} share the largest mean")]
    TieInTruth(Vec<usize>),
}

/// How the shift of each environment is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShiftSpec {
    /// `s_j ~ U(lo, hi)`, drawn independently per environment.
    UniformContinuous {
        lo: f64,
        hi: f64,
    },
    /// `s_j = values[j mod len]`.
    FixedSequence {
        values: Vec<f64>,
    },
    Zero,
}

/// How the length of each environment is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChangePointSpec {
    /// Lengths drawn from the discrete uniform distribution on `cp_min..=cp_max`.
    UniformDiscrete { cp_min: u64, cp_max: u64 },
    /// Environments take these lengths in order; the environment after the
    /// last listed one never ends. An empty list is a stationary problem.
    FixedSequence { lengths: Vec<u64> },
}

impl ChangePointSpec {
    pub fn stationary() -> Self {
        ChangePointSpec::FixedSequence {
            lengths: Vec::new(),
        }
    }

    /// Shortest length an environment may have (before horizon truncation).
    pub fn min_length(&self) -> Option<u64> {
        match self {
            ChangePointSpec::UniformDiscrete { cp_min, .. } => Some(*cp_min),
            ChangePointSpec::FixedSequence { lengths } => lengths.iter().copied().min(),
        }
    }
}

/// Ground truth of a problem, before any configuration-specific validation.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub arm_means: Vec<f64>,
    pub noise_sd: f64,
    pub shift: ShiftSpec,
    pub changepoints: ChangePointSpec,
}

impl InstanceConfig {
    /// Monotone decreasing means: arm `i` has mean `delta * i`, so the last arm is best.
    pub fn mdm(arms: usize, delta: f64, noise_sd: f64) -> Self {
        InstanceConfig {
            arm_means: (0..arms).map(|i| delta * i as f64).collect(),
            noise_sd,
            shift: ShiftSpec::Zero,
            changepoints: ChangePointSpec::stationary(),
        }
    }

    /// Slippage: every arm has mean 0 except the last, which has mean `delta`.
    pub fn slippage(arms: usize, delta: f64, noise_sd: f64) -> Self {
        let mut arm_means = vec![0.0; arms];
        if let Some(last) = arm_means.last_mut() {
            *last = delta;
        }
        InstanceConfig {
            arm_means,
            noise_sd,
            shift: ShiftSpec::Zero,
            changepoints: ChangePointSpec::stationary(),
        }
    }

    pub fn with_shift(mut self, shift: ShiftSpec) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_changepoints(mut self, changepoints: ChangePointSpec) -> Self {
        self.changepoints = changepoints;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    arm_means: Vec<f64>,
    noise_sd: f64,
    shift: ShiftSpec,
    changepoints: ChangePointSpec,
}

/// Validates `config` and freezes it into an instance. Consumes no randomness.
pub fn make_instance(config: InstanceConfig) -> Result<BanditInstance, EnvError> {
    let InstanceConfig {
        arm_means,
        noise_sd,
        shift,
        changepoints,
    } = config;
    if arm_means.len() < 2 {
        return Err(EnvError::InvalidConfig(format!(
            "need at least 2 arms, got {}",
            arm_means.len()
        )));
    }
    if arm_means.iter().any(|m| !m.is_finite()) {
        return Err(EnvError::InvalidConfig("arm means must be finite".into()));
    }
    if !(noise_sd > 0.0 && noise_sd.is_finite()) {
        return Err(EnvError::InvalidConfig(format!(
            "noise_sd must be positive, got {noise_sd}"
        )));
    }
    match &shift {
        ShiftSpec::UniformContinuous { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(EnvError::InvalidConfig(format!(
                    "shift bounds must satisfy lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        ShiftSpec::FixedSequence { values } => {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EnvError::InvalidConfig(
                    "shift values must be finite".into(),
                ));
            }
        }
        ShiftSpec::Zero => {}
    }
    match &changepoints {
        ChangePointSpec::UniformDiscrete { cp_min, cp_max } => {
            if *cp_min < 2 {
                return Err(EnvError::InvalidConfig(format!(
                    "cp_min must be at least 2, got {cp_min}"
                )));
            }
            if cp_max < cp_min {
                return Err(EnvError::InvalidConfig(format!(
                    "cp_max ({cp_max}) below cp_min ({cp_min})"
                )));
            }
        }
        ChangePointSpec::FixedSequence { lengths } => {
            if let Some(bad) = lengths.iter().find(|&&l| l < 2) {
                return Err(EnvError::InvalidConfig(format!(
                    "environment lengths must be at least 2, got {bad}"
                )));
            }
        }
    }
    Ok(BanditInstance {
        arm_means,
        noise_sd,
        shift,
        changepoints,
    })
}

impl BanditInstance {
    pub fn arms(&self) -> usize {
        self.arm_means.len()
    }

    pub fn arm_means(&self) -> &[f64] {
        &self.arm_means
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn shift_spec(&self) -> &ShiftSpec {
        &self.shift
    }

    pub fn changepoint_spec(&self) -> &ChangePointSpec {
        &self.changepoints
    }

    /// Largest gap between the best mean and any other mean.
    pub fn max_gap(&self) -> f64 {
        let hi = self
            .arm_means
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let lo = self.arm_means.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

/// Index of the arm with the largest true mean. Shifts are irrelevant.
pub fn true_best(instance: &BanditInstance) -> Result<usize, EnvError> {
    let means = instance.arm_means();
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..means.len()).filter(|&i| means[i] == best).collect();
    match winners.as_slice() {
        [only] => Ok(*only),
        _ => Err(EnvError::TieInTruth(winners)),
    }
}

/// One recorded pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: u64,
    pub env: usize,
    pub arm: usize,
    pub reward: f64,
}

/// Reward source for one replication.
///
/// Noise for the k-th pull of arm `i` is the k-th draw of arm `i`'s own
/// sub-stream, so two policies built from the same seed see the same draw for
/// the same (arm, pull count) no matter when the pull happens. Shifts and
/// environment lengths are realized lazily from their own sub-streams.
#[derive(Debug, Clone)]
pub struct ObservationStream {
    instance: BanditInstance,
    seed: u64,
    shift_rng: ChaCha8Rng,
    cp_rng: ChaCha8Rng,
    noise_rngs: Vec<ChaCha8Rng>,
    shifts: Vec<f64>,
    /// `change_points[j]` is the last time step of environment `j`.
    change_points: Vec<u64>,
    noise: Vec<Vec<f64>>,
    pulls: Vec<usize>,
    last_t: u64,
    log: Option<Vec<Observation>>,
}

impl ObservationStream {
    pub fn new(instance: BanditInstance, seed: u64) -> Self {
        let arms = instance.arms();
        ObservationStream {
            shift_rng: substream(seed, Purpose::Shift, 0),
            cp_rng: substream(seed, Purpose::ChangePoint, 0),
            noise_rngs: (0..arms)
                .map(|i| substream(seed, Purpose::Noise, i as u64))
                .collect(),
            shifts: Vec::new(),
            change_points: Vec::new(),
            noise: vec![Vec::new(); arms],
            pulls: vec![0; arms],
            last_t: 0,
            log: None,
            instance,
            seed,
        }
    }

    /// Keep every observation; see [`ObservationStream::log`].
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn instance(&self) -> &BanditInstance {
        &self.instance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn log(&self) -> Option<&[Observation]> {
        self.log.as_deref()
    }

    pub fn pulls(&self, arm: usize) -> usize {
        self.pulls[arm]
    }

    fn next_length(&mut self) -> Option<u64> {
        match &self.instance.changepoints {
            ChangePointSpec::UniformDiscrete { cp_min, cp_max } => {
                Some(self.cp_rng.random_range(*cp_min..=*cp_max))
            }
            ChangePointSpec::FixedSequence { lengths } => {
                lengths.get(self.change_points.len()).copied()
            }
        }
    }

    fn realize_until(&mut self, t: u64) {
        while self.change_points.last().is_none_or(|&cp| cp < t) {
            let start = self.change_points.last().copied().unwrap_or(0);
            match self.next_length() {
                Some(len) => self.change_points.push(start + len),
                None => {
                    self.change_points.push(u64::MAX);
                    break;
                }
            }
        }
    }

    /// Zero-based environment active at time step `t` (`t >= 1`).
    pub fn env_of(&mut self, t: u64) -> usize {
        let t = t.max(1);
        self.realize_until(t);
        self.change_points.partition_point(|&cp| cp < t)
    }

    /// Realized shift of environment `env`.
    pub fn shift(&mut self, env: usize) -> f64 {
        while self.shifts.len() <= env {
            let idx = self.shifts.len();
            let s = match &self.instance.shift {
                ShiftSpec::UniformContinuous { lo, hi } => {
                    if lo == hi {
                        *lo
                    } else {
                        self.shift_rng.random_range(*lo..*hi)
                    }
                }
                ShiftSpec::FixedSequence { values } if !values.is_empty() => {
                    values[idx % values.len()]
                }
                _ => 0.0,
            };
            self.shifts.push(s);
        }
        self.shifts[env]
    }

    /// Standard-normal draw used for the `k`-th (zero-based) pull of `arm`.
    pub fn noise_draw(&mut self, arm: usize, k: usize) -> f64 {
        let table = &mut self.noise[arm];
        let rng = &mut self.noise_rngs[arm];
        while table.len() <= k {
            table.push(rng.sample(StandardNormal));
        }
        table[k]
    }

    /// Realized change points (end of each environment) generated so far.
    pub fn change_points(&self) -> &[u64] {
        &self.change_points
    }

    /// Realized shifts generated so far.
    pub fn realized_shifts(&self) -> &[f64] {
        &self.shifts
    }

    /// Pull `arm` at time step `t`, which must exceed every earlier step.
    pub fn observe(&mut self, arm: usize, t: u64) -> Result<f64, EnvError> {
        let arms = self.instance.arms();
        if arm >= arms {
            return Err(EnvError::ArmOutOfRange { arm, arms });
        }
        if t <= self.last_t {
            return Err(EnvError::NonIncreasingTime {
                t,
                last: self.last_t,
            });
        }
        self.last_t = t;
        let env = self.env_of(t);
        let k = self.pulls[arm];
        self.pulls[arm] += 1;
        let eps = self.noise_draw(arm, k);
        let reward = self.instance.arm_means[arm] + self.shift(env) + self.instance.noise_sd * eps;
        if let Some(log) = self.log.as_mut() {
            log.push(Observation {
                t,
                env,
                arm,
                reward,
            });
        }
        Ok(reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(lengths: Vec<u64>, shifts: Vec<f64>) -> BanditInstance {
        make_instance(
            InstanceConfig::mdm(3, 0.5, 1.0)
                .with_shift(ShiftSpec::FixedSequence { values: shifts })
                .with_changepoints(ChangePointSpec::FixedSequence { lengths }),
        )
        .unwrap()
    }

    #[test]
    fn configurations_have_expected_means() {
        let mdm = make_instance(InstanceConfig::mdm(5, 0.5, 1.0)).unwrap();
        assert_eq!(mdm.arm_means(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let sc = make_instance(InstanceConfig::slippage(5, 0.5, 1.0)).unwrap();
        assert_eq!(sc.arm_means(), &[0.0, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(true_best(&mdm).unwrap(), 4);
        assert_eq!(true_best(&sc).unwrap(), 4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(
            make_instance(InstanceConfig::mdm(1, 0.5, 1.0)),
            Err(EnvError::InvalidConfig(_))
        ));
        assert!(make_instance(InstanceConfig::mdm(3, 0.5, 0.0)).is_err());
        assert!(
            make_instance(InstanceConfig::mdm(3, 0.5, 1.0).with_changepoints(
                ChangePointSpec::UniformDiscrete {
                    cp_min: 1,
                    cp_max: 4
                }
            ))
            .is_err()
        );
        assert!(make_instance(
            InstanceConfig::mdm(3, 0.5, 1.0)
                .with_shift(ShiftSpec::UniformContinuous { lo: 2.0, hi: 1.0 })
        )
        .is_err());
    }

    #[test]
    fn tie_in_truth() {
        let inst = make_instance(InstanceConfig {
            arm_means: vec![3.0, 3.0],
            noise_sd: 1.0,
            shift: ShiftSpec::Zero,
            changepoints: ChangePointSpec::stationary(),
        })
        .unwrap();
        assert_eq!(true_best(&inst), Err(EnvError::TieInTruth(vec![0, 1])));
    }

    #[test]
    fn env_of_fixed_lengths() {
        let mut s = ObservationStream::new(fixed(vec![3, 4], vec![0.0]), 1);
        assert_eq!(s.env_of(3), 0);
        assert_eq!(s.env_of(4), 1);
        assert_eq!(s.env_of(7), 1);
        // past the listed lengths the final environment never ends
        assert_eq!(s.env_of(8), 2);
        assert_eq!(s.env_of(1_000_000), 2);
    }

    #[test]
    fn env_of_worst_case() {
        let inst = make_instance(InstanceConfig::mdm(3, 0.5, 1.0).with_changepoints(
            ChangePointSpec::UniformDiscrete {
                cp_min: 2,
                cp_max: 2,
            },
        ))
        .unwrap();
        let mut s = ObservationStream::new(inst, 3);
        assert_eq!(s.env_of(5), 2);
        assert_eq!(s.env_of(6), 2);
        assert_eq!(s.env_of(7), 3);
    }

    #[test]
    fn shift_passthrough() {
        let inst = make_instance(InstanceConfig {
            arm_means: vec![0.0, 1.0],
            noise_sd: 1e-300,
            shift: ShiftSpec::FixedSequence {
                values: vec![0.0, 10.0],
            },
            changepoints: ChangePointSpec::FixedSequence { lengths: vec![2] },
        })
        .unwrap();
        let mut s = ObservationStream::new(inst, 5);
        let r = s.observe(0, 3).unwrap();
        assert!((r - 10.0).abs() < 1e-12);
    }

    #[test]
    fn observe_errors() {
        let mut s = ObservationStream::new(fixed(vec![], vec![]), 1);
        assert!(matches!(
            s.observe(3, 1),
            Err(EnvError::ArmOutOfRange { arm: 3, arms: 3 })
        ));
        s.observe(0, 2).unwrap();
        assert!(matches!(
            s.observe(0, 2),
            Err(EnvError::NonIncreasingTime { .. })
        ));
    }

    #[test]
    fn noise_depends_on_pull_count_not_time() {
        let inst = fixed(vec![5, 5, 5], vec![0.0, 3.0, -2.0]);
        let mut a = ObservationStream::new(inst.clone(), 11);
        let mut b = ObservationStream::new(inst, 11);
        // a pulls arm 2 at t = 1, 2, 3; b interleaves other arms first
        let mut ra = Vec::new();
        for t in 1..=3 {
            ra.push((a.observe(2, t).unwrap(), a.env_of(t)));
        }
        let mut rb = Vec::new();
        let mut t = 0;
        for _ in 0..3 {
            t += 1;
            b.observe(0, t).unwrap();
            t += 1;
            rb.push((b.observe(2, t).unwrap(), b.env_of(t)));
        }
        for k in 0..3 {
            let mean_a = 1.0 + a.shift(ra[k].1);
            let mean_b = 1.0 + b.shift(rb[k].1);
            let eps_a = ra[k].0 - mean_a;
            let eps_b = rb[k].0 - mean_b;
            assert!((eps_a - eps_b).abs() < 1e-12);
        }
        assert_eq!(a.noise_draw(2, 2), b.noise_draw(2, 2));
    }

    #[test]
    fn reward_matches_model() {
        let mut s = ObservationStream::new(fixed(vec![2, 2], vec![1.0, -4.0, 2.5]), 8).with_log();
        for t in 1..=6u64 {
            let arm = (t % 3) as usize;
            let k = s.pulls(arm);
            let r = s.observe(arm, t).unwrap();
            let env = s.env_of(t);
            let expected = 0.5 * arm as f64 + s.shift(env) + s.noise_draw(arm, k);
            assert!((r - expected).abs() < 1e-12);
        }
        let log = s.log().unwrap();
        assert_eq!(log.len(), 6);
        assert_eq!(log[4].env, 2);
    }
}
