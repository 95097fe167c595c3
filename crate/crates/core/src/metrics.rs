//! Evaluation metrics: AUC, AUPRC and cross-entropy for classification;
//! median absolute error (days) and explained variance for regression.

use serde::{Deserialize, Serialize};

/// `None` marks a metric that is undefined for the given labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub auc: Option<f64>,
    pub auprc: Option<f64>,
    pub ce: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    /// Median absolute error after mapping log-days back to days.
    pub medae_days: f64,
    /// Explained variance of the log-day targets.
    pub ev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: Option<usize>,
    pub n_cases: usize,
    pub classification: Option<ClassificationMetrics>,
    pub regression: Option<RegressionMetrics>,
}

impl EvalReport {
    /// Metric name/value pairs in display order; undefined metrics skipped.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(c) = &self.classification {
            if let Some(a) = c.auc {
                out.push(("auc", a));
            }
            if let Some(a) = c.auprc {
                out.push(("auprc", a));
            }
            out.push(("ce", c.ce));
        }
        if let Some(r) = &self.regression {
            out.push(("medae_days", r.medae_days));
            out.push(("ev", r.ev));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

/// Average rank of each score (1-based), ties sharing their mean rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j share rank (i+1 + j+1)/2
        let r = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise area under the precision-recall curve:
/// `sum_k (R_k - R_{k-1}) P_k` over distinct thresholds, highest first.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut prev_tp) = (0usize, 0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tp - prev_tp) as f64 / n_pos as f64 * precision;
        prev_tp = tp;
    }
    Some(ap)
}

/// Mean binary cross-entropy; probabilities are clipped to `[1e-15, 1 - 1e-15]`.
pub fn binary_cross_entropy(probs: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(probs.len(), labels.len());
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

pub fn evaluate_classification(scores: &[f64], labels: &[u8]) -> ClassificationMetrics {
    ClassificationMetrics {
        auc: roc_auc(scores, labels),
        auprc: average_precision(scores, labels),
        ce: binary_cross_entropy(scores, labels),
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// `1 - Var(target - pred) / Var(target)`; a constant target scores 1 if
/// matched exactly and 0 otherwise.
pub fn explained_variance(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let resid: Vec<f64> = target.iter().zip(pred).map(|(y, p)| y - p).collect();
    let var_y = population_variance(target);
    let var_r = population_variance(&resid);
    if var_y == 0.0 {
        return if var_r == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - var_r / var_y
}

pub fn evaluate_regression(pred_log_days: &[f64], target_log_days: &[f64]) -> RegressionMetrics {
    assert_eq!(pred_log_days.len(), target_log_days.len());
    let mut abs: Vec<f64> = pred_log_days
        .iter()
        .zip(target_log_days)
        .map(|(p, y)| (p.exp() - y.exp()).abs())
        .collect();
    RegressionMetrics {
        medae_days: median(&mut abs),
        ev: explained_variance(pred_log_days, target_log_days),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub n_folds: usize,
}

/// Mean and standard deviation of every metric across fold reports.
pub fn aggregate(reports: &[EvalReport]) -> Vec<MetricSummary> {
    let mut names: Vec<&'static str> = Vec::new();
    for r in reports {
        for (n, _) in r.values() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    names
        .into_iter()
        .map(|name| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(name)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            MetricSummary {
                metric: name.to_string(),
                mean,
                std,
                n_folds: vals.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let s = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let y = [0, 0, 0, 1, 1, 1];
        let m = evaluate_classification(&s, &y);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.auprc, Some(1.0));
    }

    #[test]
    fn constant_scores() {
        let s = [0.3; 8];
        let y = [1, 0, 0, 1, 0, 0, 0, 1];
        let m = evaluate_classification(&s, &y);
        assert_eq!(m.auc, Some(0.5));
        assert_eq!(m.auprc, Some(3.0 / 8.0));
    }

    #[test]
    fn single_class_is_undefined() {
        let m = evaluate_classification(&[0.2, 0.9], &[1, 1]);
        assert_eq!(m.auc, None);
        assert_eq!(m.auprc, None);
        assert!(m.ce > 0.0);
    }

    #[test]
    fn regression_extremes() {
        let y = [0.5, 1.2, 2.0, 0.1];
        let m = evaluate_regression(&y, &y);
        assert_eq!(m.medae_days, 0.0);
        assert_eq!(m.ev, 1.0);
        let mean = y.iter().sum::<f64>() / 4.0;
        let m = evaluate_regression(&[mean; 4], &y);
        assert!(m.ev.abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn aggregate_mean_std() {
        let mk = |auc| EvalReport {
            fold: None,
            n_cases: 4,
            classification: Some(ClassificationMetrics {
                auc: Some(auc),
                auprc: None,
                ce: 0.5,
            }),
            regression: None,
        };
        let s = aggregate(&[mk(0.6), mk(0.8)]);
        assert_eq!(s[0].metric, "auc");
        assert!((s[0].mean - 0.7).abs() < 1e-15);
        assert!((s[0].std - 0.1).abs() < 1e-15);
        assert_eq!(s[1].metric, "ce");
        assert_eq!(s[1].std, 0.0);
    }
}
