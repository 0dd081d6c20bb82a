//! Sufficient statistics of an observation history and arm connectivity.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error(
        "environment {got} recorded after environment {current}; environments must arrive in order"
    )]
    OutOfOrderEnvironment { got: usize, current: usize },
    #[error("arm {arm} out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    sets: usize,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
            sets: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.sets -= 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }
}

/// Everything the OLS fit needs, kept per (arm, environment) cell.
///
/// Environments are zero-based and stored column by column as they arrive.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    arms: usize,
    counts: Vec<Vec<u64>>,
    cell_sums: Vec<Vec<f64>>,
    cell_sq_sums: Vec<Vec<f64>>,
    env_counts: Vec<u64>,
    env_totals: Vec<f64>,
    arm_totals: Vec<f64>,
    arm_sq_sums: Vec<f64>,
    per_arm: Vec<u64>,
    sq_sum: f64,
    total: u64,
    components: DisjointSets,
    /// First arm observed in each environment; every later arm in the same
    /// environment is united with it.
    env_anchor: Vec<usize>,
}

impl SufficientStats {
    pub fn new(arms: usize) -> Self {
        SufficientStats {
            arms,
            counts: Vec::new(),
            cell_sums: Vec::new(),
            cell_sq_sums: Vec::new(),
            env_counts: Vec::new(),
            env_totals: Vec::new(),
            arm_totals: vec![0.0; arms],
            arm_sq_sums: vec![0.0; arms],
            per_arm: vec![0; arms],
            sq_sum: 0.0,
            total: 0,
            components: DisjointSets::new(arms),
            env_anchor: Vec::new(),
        }
    }

    /// Add reward `r` of arm `arm` observed in environment `env`.
    ///
    /// `env` must be the current environment or the next one.
    pub fn record(&mut self, env: usize, arm: usize, r: f64) -> Result<(), StatsError> {
        if arm >= self.arms {
            return Err(StatsError::ArmOutOfRange {
                arm,
                arms: self.arms,
            });
        }
        let envs = self.envs();
        if env == envs {
            self.counts.push(vec![0; self.arms]);
            self.cell_sums.push(vec![0.0; self.arms]);
            self.cell_sq_sums.push(vec![0.0; self.arms]);
            self.env_counts.push(0);
            self.env_totals.push(0.0);
            self.env_anchor.push(arm);
        } else if env + 1 != envs {
            return Err(StatsError::OutOfOrderEnvironment {
                got: env,
                current: envs.saturating_sub(1),
            });
        }
        let anchor = self.env_anchor[env];
        self.components.union(anchor, arm);

        self.counts[env][arm] += 1;
        self.cell_sums[env][arm] += r;
        self.cell_sq_sums[env][arm] += r * r;
        self.env_counts[env] += 1;
        self.env_totals[env] += r;
        self.arm_totals[arm] += r;
        self.arm_sq_sums[arm] += r * r;
        self.per_arm[arm] += 1;
        self.sq_sum += r * r;
        self.total += 1;
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    /// Number of environments with at least one observation.
    pub fn envs(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, arm: usize, env: usize) -> u64 {
        self.counts[env][arm]
    }

    /// Per-arm counts of environment `env`.
    pub fn env_column(&self, env: usize) -> &[u64] {
        &self.counts[env]
    }

    pub fn cell_sum(&self, arm: usize, env: usize) -> f64 {
        self.cell_sums[env][arm]
    }

    pub fn cell_sq_sum(&self, arm: usize, env: usize) -> f64 {
        self.cell_sq_sums[env][arm]
    }

    pub fn env_count(&self, env: usize) -> u64 {
        self.env_counts[env]
    }

    pub fn env_total(&self, env: usize) -> f64 {
        self.env_totals[env]
    }

    pub fn arm_total(&self, arm: usize) -> f64 {
        self.arm_totals[arm]
    }

    pub fn arm_sq_sum(&self, arm: usize) -> f64 {
        self.arm_sq_sums[arm]
    }

    pub fn pulls(&self, arm: usize) -> u64 {
        self.per_arm[arm]
    }

    pub fn per_arm(&self) -> &[u64] {
        &self.per_arm
    }

    pub fn sq_sum(&self) -> f64 {
        self.sq_sum
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `None` for an unsampled arm.
    pub fn sample_mean(&self, arm: usize) -> Option<f64> {
        match self.per_arm[arm] {
            0 => None,
            n => Some(self.arm_totals[arm] / n as f64),
        }
    }

    /// True iff every arm has a sample and the co-observation graph is connected.
    pub fn is_connected(&self) -> bool {
        self.per_arm.iter().all(|&n| n > 0) && self.components.set_count() == 1
    }

    /// Build statistics for a problem without shifts from per-cell data that
    /// has already been adjusted. `cells[i] = (count, sum, sum of squares)`.
    pub(crate) fn stationary_from_cells(cells: &[(u64, f64, f64)]) -> Self {
        let arms = cells.len();
        let mut stats = SufficientStats::new(arms);
        stats.counts.push(cells.iter().map(|c| c.0).collect());
        stats.cell_sums.push(cells.iter().map(|c| c.1).collect());
        stats.cell_sq_sums.push(cells.iter().map(|c| c.2).collect());
        stats.env_counts.push(cells.iter().map(|c| c.0).sum());
        stats.env_totals.push(cells.iter().map(|c| c.1).sum());
        stats.env_anchor.push(0);
        for (i, &(n, s, q)) in cells.iter().enumerate() {
            stats.arm_totals[i] = s;
            stats.arm_sq_sums[i] = q;
            stats.per_arm[i] = n;
            stats.sq_sum += q;
            stats.total += n;
        }
        for i in 1..arms {
            stats.components.union(0, i);
        }
        stats
    }
}

/// Explicit co-observation graph over arms, rebuilt from counts.
///
/// Used to cross-check the incremental union-find.
#[derive(Debug, Clone)]
pub struct ArmGraph {
    adjacency: Vec<Vec<bool>>,
}

impl ArmGraph {
    pub fn from_stats(stats: &SufficientStats) -> Self {
        let k = stats.arms();
        let mut adjacency = vec![vec![false; k]; k];
        for env in 0..stats.envs() {
            let col = stats.env_column(env);
            for a in 0..k {
                for b in 0..k {
                    if a != b && col[a] > 0 && col[b] > 0 {
                        adjacency[a][b] = true;
                    }
                }
            }
        }
        ArmGraph { adjacency }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    /// Breadth-first reachability from arm 0.
    pub fn is_connected(&self) -> bool {
        let k = self.adjacency.len();
        if k == 0 {
            return true;
        }
        let mut seen = vec![false; k];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            for (b, &edge) in self.adjacency[a].iter().enumerate() {
                if edge && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_groups(k: usize, groups: &[&[usize]]) -> SufficientStats {
        let mut s = SufficientStats::new(k);
        for (env, arms) in groups.iter().enumerate() {
            for &a in arms.iter() {
                s.record(env, a, 1.0).unwrap();
            }
        }
        s
    }

    #[test]
    fn first_record() {
        let mut s = SufficientStats::new(3);
        s.record(0, 1, 0.7).unwrap();
        assert_eq!(s.count(1, 0), 1);
        assert_eq!(s.total(), 1);
        assert_eq!(s.arm_total(1), 0.7);
        assert_eq!(s.envs(), 1);
    }

    #[test]
    fn skipped_environment_is_rejected() {
        let mut s = SufficientStats::new(3);
        s.record(0, 0, 1.0).unwrap();
        assert_eq!(
            s.record(2, 0, 1.0),
            Err(StatsError::OutOfOrderEnvironment { got: 2, current: 0 })
        );
        s.record(1, 0, 1.0).unwrap();
        assert!(s.record(0, 0, 1.0).is_err());
        assert!(matches!(
            s.record(1, 3, 1.0),
            Err(StatsError::ArmOutOfRange { .. })
        ));
    }

    #[test]
    fn accumulation() {
        let mut s = SufficientStats::new(2);
        s.record(0, 0, 1.0).unwrap();
        s.record(0, 0, 3.0).unwrap();
        assert_eq!(s.cell_sum(0, 0), 4.0);
        assert_eq!(s.count(0, 0), 2);
        assert_eq!(s.cell_sq_sum(0, 0), 10.0);
    }

    #[test]
    fn partitioned_design_is_disconnected() {
        let s = from_groups(5, &[&[0, 1], &[0, 1, 2], &[3, 4]]);
        assert!(!s.is_connected());
        assert!(!ArmGraph::from_stats(&s).is_connected());
    }

    #[test]
    fn bridged_design_is_connected() {
        let s = from_groups(5, &[&[0, 1], &[1, 2, 4], &[4, 3]]);
        assert!(s.is_connected());
        assert!(ArmGraph::from_stats(&s).is_connected());
    }

    #[test]
    fn single_environment_clique() {
        let s = from_groups(4, &[&[0, 1, 2, 3]]);
        assert!(s.is_connected());
        let g = ArmGraph::from_stats(&s);
        assert!(g.has_edge(0, 3) && !g.has_edge(2, 2));
    }

    #[test]
    fn unsampled_arm_is_disconnected() {
        let s = from_groups(3, &[&[0, 1]]);
        assert!(!s.is_connected());
    }

    proptest! {
        #[test]
        fn union_find_matches_graph_search(
            k in 2usize..7,
            envs in proptest::collection::vec(proptest::collection::vec(0usize..7, 1..5), 1..7),
        ) {
            let mut s = SufficientStats::new(k);
            for (j, arms) in envs.iter().enumerate() {
                for &a in arms {
                    s.record(j, a % k, 0.5).unwrap();
                }
            }
            let graph = ArmGraph::from_stats(&s);
            let all_sampled = s.per_arm().iter().all(|&n| n > 0);
            prop_assert_eq!(s.is_connected(), all_sampled && graph.is_connected());

            // aggregate invariants
            let n: u64 = (0..s.envs()).map(|j| s.env_count(j)).sum();
            prop_assert_eq!(n, s.total());
            for i in 0..k {
                let ni: u64 = (0..s.envs()).map(|j| s.count(i, j)).sum();
                prop_assert_eq!(ni, s.pulls(i));
                let ti: f64 = (0..s.envs()).map(|j| s.cell_sum(i, j)).sum();
                prop_assert!((ti - s.arm_total(i)).abs() < 1e-9);
            }
        }
    }
}
