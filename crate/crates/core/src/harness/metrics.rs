use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use super::runner::{HarnessError, ReplicationResult};

/// Per-replication outcomes of one policy, indexed `[budget][replication]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcomes {
    pub label: String,
    pub correct: Vec<Vec<bool>>,
    pub opportunity_cost: Vec<Vec<f64>>,
}

impl PolicyOutcomes {
    pub fn from_results(label: String, budgets: &[u64], results: &[ReplicationResult]) -> Self {
        let correct = (0..budgets.len())
            .map(|b| results.iter().map(|r| r.correct[b]).collect())
            .collect();
        let opportunity_cost = (0..budgets.len())
            .map(|b| results.iter().map(|r| r.opportunity_cost[b]).collect())
            .collect();
        PolicyOutcomes {
            label,
            correct,
            opportunity_cost,
        }
    }
}

/// Aggregate of one (policy, budget) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub budget: u64,
    pub replications: u64,
    pub pics: f64,
    pub pics_stderr: f64,
    pub eoc: f64,
    pub eoc_stderr: f64,
}

impl MetricRow {
    pub fn from_samples(budget: u64, correct: &[bool], cost: &[f64]) -> Self {
        let n = correct.len() as f64;
        let losses = correct.iter().filter(|&&c| !c).count() as f64;
        let pics = if n > 0.0 { losses / n } else { 0.0 };
        let pics_stderr = if n > 0.0 {
            (pics * (1.0 - pics) / n).sqrt()
        } else {
            0.0
        };
        let (eoc, eoc_stderr) = mean_stderr(cost);
        MetricRow {
            budget,
            replications: correct.len() as u64,
            pics,
            pics_stderr,
            eoc,
            eoc_stderr,
        }
    }
}

/// Sample mean and its standard error `sd / sqrt(n)`; zero error below two samples.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Pearson correlation; `None` when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    /// Mean of `loss_a - loss_b`.
    pub mean_diff: f64,
    pub paired_stderr: f64,
    /// `sqrt(se_a^2 + se_b^2)`, the standard error ignoring the pairing.
    pub combined_stderr: f64,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub configuration: String,
    pub scenario: String,
    pub base_seed: u64,
    pub budgets: Vec<u64>,
    pub outcomes: Vec<PolicyOutcomes>,
    /// `rows[policy][budget]`.
    pub rows: Vec<Vec<MetricRow>>,
}

impl MetricSeries {
    pub fn new(config: &ExperimentConfig, outcomes: Vec<PolicyOutcomes>) -> Self {
        let rows = outcomes
            .iter()
            .map(|o| {
                config
                    .budgets
                    .iter()
                    .enumerate()
                    .map(|(b, &budget)| {
                        MetricRow::from_samples(budget, &o.correct[b], &o.opportunity_cost[b])
                    })
                    .collect()
            })
            .collect();
        MetricSeries {
            configuration: config.configuration.to_string(),
            scenario: config.scenario.to_string(),
            base_seed: config.base_seed,
            budgets: config.budgets.clone(),
            outcomes,
            rows,
        }
    }

    pub fn policy_index(&self, label: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o.label == label)
    }

    pub fn row(&self, label: &str, budget: u64) -> Option<&MetricRow> {
        let p = self.policy_index(label)?;
        let b = self.budgets.iter().position(|&x| x == budget)?;
        Some(&self.rows[p][b])
    }

    /// Paired comparison of the 0-1 losses of policies `a` and `b` at `budget`.
    pub fn paired(&self, a: &str, b: &str, budget: u64) -> Option<PairedComparison> {
        let (pa, pb) = (self.policy_index(a)?, self.policy_index(b)?);
        let bi = self.budgets.iter().position(|&x| x == budget)?;
        let loss = |p: usize| -> Vec<f64> {
            self.outcomes[p].correct[bi]
                .iter()
                .map(|&c| if c { 0.0 } else { 1.0 })
                .collect()
        };
        let (la, lb) = (loss(pa), loss(pb));
        let diff: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x - y).collect();
        let (mean_diff, paired_stderr) = mean_stderr(&diff);
        let (ra, rb) = (&self.rows[pa][bi], &self.rows[pb][bi]);
        Some(PairedComparison {
            mean_diff,
            paired_stderr,
            combined_stderr: (ra.pics_stderr.powi(2) + rb.pics_stderr.powi(2)).sqrt(),
            correlation: correlation(&la, &lb),
        })
    }

    pub const CSV_HEADER: &'static str =
        "config,scenario,policy,budget,replications,pics,pics_stderr,eoc,eoc_stderr,base_seed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (o, rows) in self.outcomes.iter().zip(&self.rows) {
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    self.configuration,
                    csv_field(&self.scenario),
                    csv_field(&o.label),
                    r.budget,
                    r.replications,
                    sig10(r.pics),
                    sig10(r.pics_stderr),
                    sig10(r.eoc),
                    sig10(r.eoc_stderr),
                    self.base_seed
                ));
            }
        }
        out
    }

    /// Pairwise paired-difference table over all policy pairs and budgets.
    pub fn paired_csv(&self) -> String {
        let mut out = String::from(
            "policy_a,policy_b,budget,mean_loss_diff,paired_stderr,combined_stderr,correlation\n",
        );
        for a in 0..self.outcomes.len() {
            for b in a + 1..self.outcomes.len() {
                for &budget in &self.budgets {
                    let (la, lb) = (&self.outcomes[a].label, &self.outcomes[b].label);
                    let p = self
                        .paired(la, lb, budget)
                        .expect("labels and budget exist");
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        csv_field(la),
                        csv_field(lb),
                        budget,
                        sig10(p.mean_diff),
                        sig10(p.paired_stderr),
                        sig10(p.combined_stderr),
                        p.correlation.map(sig10).unwrap_or_default()
                    ));
                }
            }
        }
        out
    }
}

/// Write `series` as CSV to `path`.
pub fn write_csv(series: &MetricSeries, path: &Path) -> Result<(), HarnessError> {
    write_text(&series.to_csv(), path)
}

pub(crate) fn write_text(text: &str, path: &Path) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(text.as_bytes()).map_err(io)?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fixed-point decimal with 10 significant digits.
pub fn sig10(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() {
            "0".into()
        } else {
            x.to_string()
        };
    }
    let rounded: f64 = format!("{x:.9e}").parse().expect("valid float");
    let magnitude = rounded.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
