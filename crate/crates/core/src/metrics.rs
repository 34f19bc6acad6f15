//! Classification metrics: accuracy, rank AUC, confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney rank statistic; tied
/// scores receive their average rank, i.e. each tied positive/negative pair
/// counts one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidParameter(
            "AUC needs at least one positive and one negative sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(classes: usize, predictions: &[usize], labels: &[usize]) -> Result<Self> {
        let mut m = ConfusionMatrix::new(classes);
        for (&p, &l) in predictions.iter().zip(labels) {
            for v in [p, l] {
                if v >= classes {
                    return Err(Error::InvalidLabel { label: v, classes });
                }
            }
            m.counts[l][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Recall per class; `None` for classes absent from the labels.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Binary tasks only.
    pub auc: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    /// Metrics from per-sample class probabilities.
    pub fn from_probabilities(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let confusion = ConfusionMatrix::from_predictions(classes, &predictions, labels)?;
        let auc_value = if classes == 2 {
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            auc(&scores, &positive).ok()
        } else {
            None
        };
        Ok(Metrics {
            accuracy: accuracy(&predictions, labels)?,
            auc: auc_value,
            per_class_accuracy: confusion.per_class_accuracy(),
            confusion,
        })
    }
}
