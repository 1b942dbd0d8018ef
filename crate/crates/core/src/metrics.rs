//! Representation and planning metrics, and the evaluation report format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::env::EnvId;
use crate::search::{Scorer, SearchResult};
use crate::{Error, Result};

/// Average rank (1-based) of each entry, ties sharing the mean of their
/// positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape(format!("spearman of {} and {} values", xs.len(), ys.len())));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Maximum number of trajectories averaged by [`trajectory_correlation`].
pub const CORRELATION_TRAJECTORIES: usize = 100;

/// Mean over trajectories of the rank correlation between steps-to-end and
/// scorer distance (negated score) to the final state.
pub fn trajectory_correlation(scorer: &dyn Scorer, trajectories: &[Trajectory]) -> Result<f64> {
    let mut rhos = Vec::new();
    for (i, t) in trajectories.iter().take(CORRELATION_TRAJECTORIES).enumerate() {
        if t.len() < 3 {
            log::warn!("trajectory {i} has {} states; skipped", t.len());
            continue;
        }
        let refs: Vec<_> = t.states.iter().collect();
        let scores = scorer.score_batch(&refs, t.last())?;
        let steps: Vec<f64> = (0..t.len()).map(|k| (t.len() - 1 - k) as f64).collect();
        let dist: Vec<f64> = scores.iter().map(|&s| -(s as f64)).collect();
        match spearman_rho(&steps, &dist) {
            Ok(r) => rhos.push(r),
            Err(Error::UndefinedCorrelation(_)) => log::warn!("trajectory {i}: constant scores; skipped"),
            Err(e) => return Err(e),
        }
    }
    if rhos.is_empty() {
        return Err(Error::UndefinedCorrelation("every trajectory was skipped".into()));
    }
    Ok(rhos.iter().sum::<f64>() / rhos.len() as f64)
}

/// Fraction solved per budget, ascending. Every budget must cover the same
/// number of instances.
pub fn success_curve(runs: &[(usize, Vec<SearchResult>)]) -> Result<Vec<(usize, f64)>> {
    let n = runs.first().map_or(0, |r| r.1.len());
    if n == 0 {
        return Err(Error::Aggregation("no results to aggregate".into()));
    }
    if let Some((b, r)) = runs.iter().find(|r| r.1.len() != n) {
        return Err(Error::Aggregation(format!("budget {b} has {} results, expected {n}", r.len())));
    }
    let mut curve: Vec<(usize, f64)> = runs.iter().map(|(b, r)| (*b, solved_fraction(r))).collect();
    curve.sort_by_key(|p| p.0);
    if curve.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Aggregation("duplicate budget in sweep".into()));
    }
    Ok(curve)
}

fn solved_fraction(results: &[SearchResult]) -> f64 {
    results.iter().filter(|r| r.solved).count() as f64 / results.len() as f64
}

/// For each observed solution length `x`, the fraction of all instances
/// solved in at most `x` moves.
pub fn length_cdf(results: &[SearchResult]) -> Vec<(usize, f64)> {
    let mut lengths: Vec<usize> = results.iter().filter(|r| r.solved).map(|r| r.length).collect();
    lengths.sort_unstable();
    let n = results.len() as f64;
    let mut curve: Vec<(usize, f64)> = Vec::new();
    for (i, &l) in lengths.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match curve.last_mut() {
            Some(last) if last.0 == l => last.1 = frac,
            _ => curve.push((l, frac)),
        }
    }
    curve
}

/// Sample mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub budget: usize,
    pub solved: usize,
    pub success_rate: f64,
    /// Mean length over solved instances.
    pub mean_length: Option<f64>,
    pub mean_nodes_created: f64,
}

impl BudgetSummary {
    pub fn from_results(budget: usize, results: &[SearchResult]) -> Self {
        let solved: Vec<&SearchResult> = results.iter().filter(|r| r.solved).collect();
        let mean_length = (!solved.is_empty()).then(|| solved.iter().map(|r| r.length as f64).sum::<f64>() / solved.len() as f64);
        Self {
            budget,
            solved: solved.len(),
            success_rate: solved_fraction(results),
            mean_length,
            mean_nodes_created: results.iter().map(|r| r.nodes_created as f64).sum::<f64>() / results.len().max(1) as f64,
        }
    }
}

/// Aggregated evaluation of one model on one instance set. Contains no
/// timing data, so identical runs produce identical reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub env: EnvId,
    pub model: String,
    pub planner: String,
    pub alpha: f32,
    pub seed: u64,
    pub config_hash: String,
    pub n_instances: usize,
    pub difficulty: usize,
    pub spearman_mean: Option<f64>,
    pub in_batch_accuracy: Option<f64>,
    pub success_curve: Vec<(usize, f64)>,
    pub length_cdf: Vec<(usize, f64)>,
    pub budgets: Vec<BudgetSummary>,
}

impl MetricsReport {
    /// Writes `<stem>.json`, `<stem>_success_curve.csv` and
    /// `<stem>_length_cdf.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        write_file(&dir.join(format!("{stem}.json")), &json)?;
        let curve = |header: &str, pts: &[(usize, f64)]| {
            let mut s = format!("# config_hash={}\n{header}\n", self.config_hash);
            for (x, y) in pts {
                s.push_str(&format!("{x},{y}\n"));
            }
            s
        };
        write_file(&dir.join(format!("{stem}_success_curve.csv")), &curve("budget,success_rate", &self.success_curve))?;
        write_file(&dir.join(format!("{stem}_length_cdf.csv")), &curve("length,fraction", &self.length_cdf))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(solved: bool, length: usize) -> SearchResult {
        SearchResult { solved, length, nodes_created: 1, ..SearchResult::default() }
    }

    #[test]
    fn spearman_hand_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rho(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman_rho(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman_rho(&xs, &[2.0; 4]), Err(Error::UndefinedCorrelation(_))));
        assert!(spearman_rho(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn curve_counting() {
        let mk = |k: usize| (0..10).map(|i| res(i < k, 3)).collect::<Vec<_>>();
        let c = success_curve(&[(1000, mk(7)), (100, mk(3))]).unwrap();
        assert_eq!(c, vec![(100, 0.3), (1000, 0.7)]);
        assert!(success_curve(&[(1, mk(1)), (2, vec![res(true, 1)])]).is_err());
    }

    #[test]
    fn cdf_counting() {
        let r = [res(true, 2), res(true, 2), res(true, 5)];
        assert_eq!(length_cdf(&r), vec![(2, 2.0 / 3.0), (5, 1.0)]);
        assert!(length_cdf(&[res(false, 0), res(false, 0)]).is_empty());
    }

    #[test]
    fn standard_error_formula() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (m, se) = mean_stderr(&xs);
        assert_eq!(m, 3.0);
        assert!((se - (2.5f64).sqrt() / 5f64.sqrt()).abs() < 1e-12);
    }
}
