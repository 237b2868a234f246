use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("ROC-AUC undefined: no task has both classes present")]
    UndefinedAuc,
    #[error("no unmasked values to evaluate")]
    Empty,
}

/// Per-task regression/classification metrics; multi-task values are
/// unweighted means over the tasks where the metric is defined.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Metrics {
    pub per_task: Vec<TaskMetrics>,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when no task has both a positive and a negative.
    pub roc_auc: Option<f64>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TaskMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` marks a skipped single-class task.
    pub roc_auc: Option<f64>,
}

/// Compute metrics over per-record target/prediction vectors; `None` targets
/// are masked out. Predictions must be de-normalized (regression) or
/// probabilities (classification).
pub fn compute_metrics(
    targets: &[Vec<Option<f64>>],
    predictions: &[Vec<f64>],
    tasks: usize,
) -> Result<Metrics, MetricError> {
    assert_eq!(targets.len(), predictions.len());
    let mut per_task = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let pairs: Vec<(f64, f64)> = targets
            .iter()
            .zip(predictions)
            .filter_map(|(y, p)| y[t].map(|yv| (yv, p[t])))
            .collect();
        if pairs.is_empty() {
            per_task.push(TaskMetrics {
                mae: f64::NAN,
                rmse: f64::NAN,
                roc_auc: None,
            });
            continue;
        }
        let n = pairs.len() as f64;
        let mae = pairs.iter().map(|(y, p)| (y - p).abs()).sum::<f64>() / n;
        let rmse = (pairs.iter().map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / n).sqrt();
        per_task.push(TaskMetrics {
            mae,
            rmse,
            roc_auc: roc_auc(&pairs),
        });
    }
    let defined: Vec<&TaskMetrics> = per_task.iter().filter(|m| m.mae.is_finite()).collect();
    if defined.is_empty() {
        return Err(MetricError::Empty);
    }
    let mae = defined.iter().map(|m| m.mae).sum::<f64>() / defined.len() as f64;
    let rmse = defined.iter().map(|m| m.rmse).sum::<f64>() / defined.len() as f64;
    let aucs: Vec<f64> = per_task.iter().filter_map(|m| m.roc_auc).collect();
    let roc = if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    };
    Ok(Metrics {
        per_task,
        mae,
        rmse,
        roc_auc: roc,
    })
}

/// Rank-statistic ROC-AUC with midranks for tied scores. Labels are
/// thresholded at 0.5; returns `None` when a class is missing.
pub fn roc_auc(pairs: &[(f64, f64)]) -> Option<f64> {
    let positives = pairs.iter().filter(|(y, _)| *y >= 0.5).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    // Midranks over the scores.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].1.partial_cmp(&pairs[b].1).unwrap());
    let mut ranks = vec![0.0f64; pairs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].1 == pairs[order[i]].1 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = midrank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = pairs
        .iter()
        .zip(&ranks)
        .filter(|((y, _), _)| *y >= 0.5)
        .map(|(_, r)| r)
        .sum();
    let p = positives as f64;
    let n = negatives as f64;
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Brute-force O(n^2) AUC used as the oracle in tests: pairs of (pos, neg)
/// count 1 for correct order, 0.5 for ties.
pub fn roc_auc_bruteforce(pairs: &[(f64, f64)]) -> Option<f64> {
    let pos: Vec<f64> = pairs
        .iter()
        .filter(|(y, _)| *y >= 0.5)
        .map(|(_, p)| *p)
        .collect();
    let neg: Vec<f64> = pairs
        .iter()
        .filter(|(y, _)| *y < 0.5)
        .map(|(_, p)| *p)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut acc = 0.0;
    for &p in &pos {
        for &n in &neg {
            acc += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(acc / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Rng;

    #[test]
    fn perfect_ranking_auc_one() {
        let pairs = vec![(0.0, 0.1), (0.0, 0.2), (1.0, 0.8), (1.0, 0.9)];
        assert_eq!(roc_auc(&pairs), Some(1.0));
    }

    #[test]
    fn exact_predictions_zero_error() {
        let targets = vec![vec![Some(1.0)], vec![Some(-2.0)], vec![Some(0.5)]];
        let preds = vec![vec![1.0], vec![-2.0], vec![0.5]];
        let m = compute_metrics(&targets, &preds, 1).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn random_predictions_near_half_auc() {
        let mut rng = Rng::new(4);
        let pairs: Vec<(f64, f64)> = (0..1000).map(|i| ((i % 2) as f64, rng.uniform())).collect();
        let auc = roc_auc(&pairs).unwrap();
        assert!((0.45..=0.55).contains(&auc), "auc {auc}");
    }

    #[test]
    fn midrank_matches_bruteforce_with_ties() {
        let mut rng = Rng::new(8);
        for trial in 0..20 {
            let n = 20 + rng.below(180);
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let y = if rng.uniform() < 0.4 { 1.0 } else { 0.0 };
                    // Coarse quantization forces plenty of ties.
                    let p = (rng.uniform() * 8.0).round() / 8.0;
                    (y, p)
                })
                .collect();
            let fast = roc_auc(&pairs);
            let brute = roc_auc_bruteforce(&pairs);
            match (fast, brute) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "trial {trial}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn single_class_task_skipped() {
        let pairs = vec![(1.0, 0.3), (1.0, 0.7)];
        assert_eq!(roc_auc(&pairs), None);
        // Multi-task: defined task still averages.
        let targets = vec![
            vec![Some(1.0), Some(1.0)],
            vec![Some(1.0), Some(0.0)],
            vec![Some(1.0), Some(0.0)],
        ];
        let preds = vec![vec![0.9, 0.9], vec![0.8, 0.2], vec![0.7, 0.1]];
        let m = compute_metrics(&targets, &preds, 2).unwrap();
        assert_eq!(m.per_task[0].roc_auc, None);
        assert_eq!(m.per_task[1].roc_auc, Some(1.0));
        assert_eq!(m.roc_auc, Some(1.0));
    }

    #[test]
    fn masked_targets_excluded() {
        let targets = vec![vec![Some(1.0)], vec![None], vec![Some(3.0)]];
        let preds = vec![vec![2.0], vec![100.0], vec![3.0]];
        let m = compute_metrics(&targets, &preds, 1).unwrap();
        assert_eq!(m.mae, 0.5);
    }
}
