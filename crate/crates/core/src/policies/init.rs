use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Randomized round-robin initialization that keeps the arm graph connected.
///
/// Arms are played in a shuffled order until each has `n0` samples. Until the
/// first full pass completes, an environment change makes the next step replay
/// the arm played just before the change, so the new environment shares an
/// arm with the previous one.
#[derive(Debug, Clone)]
pub struct RandomizedRoundRobinInit {
    n0: u32,
    arms: usize,
    order: Vec<usize>,
    cursor: usize,
    pulls: Vec<u32>,
    tree_built: bool,
    prev: Option<usize>,
    steps: u64,
}

impl RandomizedRoundRobinInit {
    pub fn new(arms: usize, n0: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..arms).collect();
        order.shuffle(rng);
        RandomizedRoundRobinInit {
            n0,
            arms,
            order,
            cursor: 0,
            pulls: vec![0; arms],
            tree_built: false,
            prev: None,
            steps: 0,
        }
    }

    /// Total length of the phase: `n0 * K` steps.
    pub fn length(&self) -> u64 {
        self.n0 as u64 * self.arms as u64
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.length()
    }

    pub fn tree_built(&self) -> bool {
        self.tree_built
    }

    /// Arm for the next initialization step.
    pub fn next(&mut self, env_changed: bool, rng: &mut ChaCha8Rng) -> usize {
        let replay = match self.prev {
            Some(prev) if (env_changed && !self.tree_built) || self.order.is_empty() => Some(prev),
            _ => None,
        };
        self.steps += 1;
        let arm = match replay {
            Some(arm) => {
                self.pulls[arm] += 1;
                if self.pulls[arm] >= self.n0 {
                    if let Some(pos) = self.order.iter().position(|&a| a == arm) {
                        self.order.remove(pos);
                        if pos < self.cursor {
                            self.cursor -= 1;
                        }
                    }
                }
                arm
            }
            None => {
                let arm = self.order[self.cursor];
                let was_last = self.cursor + 1 == self.order.len();
                self.pulls[arm] += 1;
                if self.pulls[arm] >= self.n0 {
                    self.order.remove(self.cursor);
                } else {
                    self.cursor += 1;
                }
                if was_last {
                    self.order.shuffle(rng);
                    self.cursor = 0;
                    self.tree_built = true;
                }
                arm
            }
        };
        self.prev = Some(arm);
        arm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn stationary_initialization_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut init = RandomizedRoundRobinInit::new(3, 4, &mut rng);
        let mut seq = Vec::new();
        while !init.is_done() {
            seq.push(init.next(false, &mut rng));
        }
        assert_eq!(seq.len(), 12);
        for arm in 0..3 {
            assert_eq!(seq.iter().filter(|&&a| a == arm).count(), 4);
        }
        // every pass of three consecutive samples is a permutation
        for pass in seq.chunks(3) {
            let mut p = pass.to_vec();
            p.sort_unstable();
            assert_eq!(p, vec![0, 1, 2]);
        }
    }

    #[test]
    fn change_before_first_pass_replays_previous_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut init = RandomizedRoundRobinInit::new(5, 6, &mut rng);
        let a1 = init.next(false, &mut rng);
        let a2 = init.next(false, &mut rng);
        assert_ne!(a1, a2);
        assert_eq!(init.next(true, &mut rng), a2);
        // the pass then resumes where it left off
        let a3 = init.next(false, &mut rng);
        assert!(a3 != a1 && a3 != a2);
    }

    #[test]
    fn no_replay_after_first_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = RandomizedRoundRobinInit::new(2, 3, &mut rng);
        init.next(false, &mut rng);
        init.next(false, &mut rng);
        assert!(init.tree_built());
        let expected = init.order[init.cursor];
        assert_eq!(init.next(true, &mut rng), expected);
    }
}
