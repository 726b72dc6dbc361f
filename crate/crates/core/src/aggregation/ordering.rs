//! Client ordering functions and the quantifier-weighted defenses built on
//! them.

use rayon::prelude::*;

use super::quantifier::{
    quantifier_params, quantifier_weights, OrderingResult, QuantifierParams, WeightVector,
};
use crate::data::Dataset;
use crate::model::{self, ParamVector};
use crate::xai::{cosine_similarity, explanation_bank, LleConfig};
use crate::{Error, Result};

fn check_models(models: &[ParamVector], min: usize) -> Result<()> {
    if models.len() < min {
        return Err(Error::invalid(
            "clients",
            format!("ordering needs at least {min} clients, got {}", models.len()),
        ));
    }
    if models.iter().any(|m| !m.same_layout(&models[0])) {
        return Err(Error::LayoutMismatch);
    }
    Ok(())
}

/// Explanation-agreement scores: for every explained validation instance,
/// the mean cosine similarity of a client's importance matrix with every
/// other client's, summed over instances.
pub fn lle_scores(models: &[ParamVector], validation: &Dataset, cfg: &LleConfig) -> Result<Vec<f64>> {
    check_models(models, 2)?;
    let bank = explanation_bank(models, validation, cfg)?;
    let n = models.len();
    let per_instance: Vec<Vec<Vec<f64>>> = (0..bank.instances.len())
        .into_par_iter()
        .map(|v| {
            let mut sim = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let s = cosine_similarity(&bank.matrices[i][v], &bank.matrices[j][v])?;
                    sim[i][j] = s;
                    sim[j][i] = s;
                }
            }
            Ok(sim)
        })
        .collect::<Result<_>>()?;
    let scores = (0..n)
        .map(|i| {
            per_instance
                .iter()
                .map(|sim| {
                    let total: f64 = (0..n).filter(|&j| j != i).map(|j| sim[i][j]).sum();
                    total / (n - 1) as f64
                })
                .sum()
        })
        .collect();
    Ok(scores)
}

pub fn lle_ordering(models: &[ParamVector], validation: &Dataset, cfg: &LleConfig) -> Result<OrderingResult> {
    OrderingResult::from_scores(lle_scores(models, validation, cfg)?)
}

/// Fraction of `data` a model classifies correctly (argmax, ties to the
/// lowest class).
pub fn accuracy(params: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        if model::predict(params, x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Scores are validation accuracies.
pub fn accuracy_ordering(models: &[ParamVector], validation: &Dataset) -> Result<OrderingResult> {
    check_models(models, 1)?;
    let scores = models
        .par_iter()
        .map(|m| accuracy(m, validation))
        .collect::<Result<Vec<_>>>()?;
    OrderingResult::from_scores(scores)
}

/// Output of a quantifier-weighted aggregation.
#[derive(Debug, Clone)]
pub struct QuantifiedAggregate {
    pub aggregate: ParamVector,
    /// Weight of each client, in client input order.
    pub client_weights: Vec<f64>,
    /// Weights by rank position.
    pub rank_weights: WeightVector,
    pub ordering: OrderingResult,
    /// `None` when the ordering was degenerate.
    pub quantifier: Option<QuantifierParams>,
    /// Uniform weights were used because the ordering carried no evidence.
    pub fallback: bool,
}

/// `Σ w_i · L_i` with weights assigned along `ordering.ranking`. Degenerate
/// orderings fall back to uniform weights.
pub fn quantified_aggregate(models: &[ParamVector], ordering: OrderingResult) -> Result<QuantifiedAggregate> {
    check_models(models, 1)?;
    let n = models.len();
    if ordering.len() != n {
        return Err(Error::invalid("ordering", "one score per client required"));
    }
    let (quantifier, rank_weights, fallback) = match quantifier_params(&ordering, n) {
        Ok(p) => (Some(p), quantifier_weights(&p, n)?, false),
        Err(Error::DegenerateOrdering) => (None, WeightVector::uniform(n), true),
        Err(e) => return Err(e),
    };
    let mut client_weights = vec![0.0; n];
    let mut acc = vec![0.0; models[0].len()];
    for (&client, &w) in ordering.ranking.iter().zip(&rank_weights.weights) {
        client_weights[client] = w;
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(models[client].values()) {
            *a += w * v;
        }
    }
    Ok(QuantifiedAggregate {
        aggregate: ParamVector::from_raw(models[0].layout().clone(), acc),
        client_weights,
        rank_weights,
        ordering,
        quantifier,
        fallback,
    })
}

/// Explanation-ordered defense over full client models.
pub fn rab2def_aggregate(
    models: &[ParamVector],
    validation: &Dataset,
    cfg: &LleConfig,
) -> Result<QuantifiedAggregate> {
    let ordering = lle_ordering(models, validation, cfg)?;
    quantified_aggregate(models, ordering)
}

/// Accuracy-ordered defense over full client models.
pub fn ddaba_aggregate(models: &[ParamVector], validation: &Dataset) -> Result<QuantifiedAggregate> {
    let ordering = accuracy_ordering(models, validation)?;
    quantified_aggregate(models, ordering)
}
