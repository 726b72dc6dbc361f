use std::collections::BTreeMap;

use super::RoundReport;
use crate::adversary::BackdoorPattern;
use crate::aggregation;
use crate::data::Dataset;
use crate::model::ParamVector;
use crate::{Error, Result};

/// Fraction of argmax-correct predictions.
pub fn evaluate(params: &ParamVector, data: &Dataset) -> Result<f64> {
    aggregation::accuracy(params, data)
}

/// Test samples not already of the target class, stamped and relabelled.
pub(crate) fn poison_test_set(data: &Dataset, pattern: &BackdoorPattern) -> Result<Dataset> {
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels()[i] != pattern.target_label)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyInput("non-target test samples"));
    }
    let mut out = data.subset(&keep);
    let shape = out.shape();
    let dims = shape.dims();
    for chunk in out.features_mut().chunks_mut(dims) {
        pattern.stamp(chunk, shape)?;
    }
    let n = out.len();
    out.replace_labels(vec![pattern.target_label; n]);
    Ok(out)
}

/// Share of non-target test samples the stamped pattern steers to the target
/// label.
pub fn evaluate_backdoor(params: &ParamVector, data: &Dataset, pattern: &BackdoorPattern) -> Result<f64> {
    if pattern.target_label >= data.classes() {
        return Err(Error::invalid("target_label", "outside the class range"));
    }
    evaluate(params, &poison_test_set(data, pattern)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscardStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl DiscardStats {
    fn from_counts(counts: impl Iterator<Item = usize>) -> Self {
        let counts: Vec<usize> = counts.collect();
        if counts.is_empty() {
            return Self::default();
        }
        Self {
            min: *counts.iter().min().unwrap(),
            max: *counts.iter().max().unwrap(),
            mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FairnessSummary {
    pub adversarial: DiscardStats,
    pub poor: DiscardStats,
    /// Accuracy credited to each poor client in the last round it took part
    /// in, by client id.
    pub poor_final_accuracy: Vec<(usize, f64)>,
    /// `None` when no poor client ever participated.
    pub poor_mean_accuracy: Option<f64>,
}

pub fn fairness_summary(reports: &[RoundReport]) -> FairnessSummary {
    let mut last = BTreeMap::new();
    for r in reports {
        for &(client, acc) in &r.poor_accuracy {
            last.insert(client, acc);
        }
    }
    let poor_final_accuracy: Vec<(usize, f64)> = last.into_iter().collect();
    let poor_mean_accuracy = (!poor_final_accuracy.is_empty()).then(|| {
        poor_final_accuracy.iter().map(|(_, a)| a).sum::<f64>() / poor_final_accuracy.len() as f64
    });
    FairnessSummary {
        adversarial: DiscardStats::from_counts(reports.iter().map(|r| r.discarded_adversarial)),
        poor: DiscardStats::from_counts(reports.iter().map(|r| r.discarded_poor)),
        poor_final_accuracy,
        poor_mean_accuracy,
    }
}
