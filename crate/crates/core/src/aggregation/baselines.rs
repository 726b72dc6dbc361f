//! FedAvg and the robust baselines.
//!
//! Aggregators over updates take the submitted vectors in client order and
//! reduce them in that order, so results never depend on thread count.

use rand_distr::{Distribution, Normal};

use crate::model::ParamVector;
use crate::rng;
use crate::{Error, Result};

/// Result of an aggregator that keeps only a subset of the clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub aggregate: ParamVector,
    /// Input indices that took part in the aggregate, ascending.
    pub selected: Vec<usize>,
}

fn check_updates(updates: &[ParamVector]) -> Result<()> {
    let first = updates.first().ok_or(Error::EmptyInput("updates"))?;
    if updates.iter().any(|u| !u.same_layout(first)) {
        return Err(Error::LayoutMismatch);
    }
    Ok(())
}

fn check_lr(server_lr: f64) -> Result<()> {
    if !(server_lr > 0.0 && server_lr.is_finite()) {
        return Err(Error::invalid("server_lr", "must be positive"));
    }
    Ok(())
}

fn mean(updates: &[&ParamVector]) -> ParamVector {
    let mut acc = vec![0.0; updates[0].len()];
    for u in updates {
        for (a, v) in acc.iter_mut().zip(u.values()) {
            *a += v;
        }
    }
    let n = updates.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    ParamVector::from_raw(updates[0].layout().clone(), acc)
}

/// `G + (η/n) Σ Δ_i`.
pub fn fedavg(global_prev: &ParamVector, deltas: &[ParamVector], server_lr: f64) -> Result<ParamVector> {
    check_updates(deltas)?;
    check_lr(server_lr)?;
    if !global_prev.same_layout(&deltas[0]) {
        return Err(Error::LayoutMismatch);
    }
    let n = deltas.len() as f64;
    let mut acc = vec![0.0; global_prev.len()];
    for d in deltas {
        for (a, v) in acc.iter_mut().zip(d.values()) {
            *a += v;
        }
    }
    let values = global_prev
        .values()
        .iter()
        .zip(&acc)
        .map(|(g, s)| g + server_lr / n * s)
        .collect();
    Ok(ParamVector::from_raw(global_prev.layout().clone(), values))
}

fn per_coordinate(updates: &[ParamVector], reduce: impl Fn(&mut [f64]) -> f64) -> ParamVector {
    let n = updates.len();
    let mut column = vec![0.0; n];
    let values = (0..updates[0].len())
        .map(|j| {
            for (c, u) in column.iter_mut().zip(updates) {
                *c = u.values()[j];
            }
            column.sort_by(f64::total_cmp);
            reduce(&mut column)
        })
        .collect();
    ParamVector::from_raw(updates[0].layout().clone(), values)
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn coordinate_median(updates: &[ParamVector]) -> Result<ParamVector> {
    check_updates(updates)?;
    Ok(per_coordinate(updates, |sorted| {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    }))
}

/// Coordinate-wise mean after dropping `⌊trim · n⌋` values from each tail.
pub fn trimmed_mean(updates: &[ParamVector], trim: f64) -> Result<ParamVector> {
    check_updates(updates)?;
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::invalid("trim", "must lie in [0, 0.5)"));
    }
    let n = updates.len();
    let k = (trim * n as f64).floor() as usize;
    if n <= 2 * k {
        return Err(Error::invalid("trim", "trimming leaves no values"));
    }
    Ok(per_coordinate(updates, |sorted| {
        let kept = &sorted[k..n - k];
        kept.iter().sum::<f64>() / kept.len() as f64
    }))
}

fn squared_distance(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn pairwise_distances(updates: &[&ParamVector]) -> Vec<Vec<f64>> {
    let n = updates.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(updates[i], updates[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn scores_from_distances(dist: &[Vec<f64>], neighbours: usize) -> Vec<f64> {
    dist.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut others: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            others.sort_by(f64::total_cmp);
            others[..neighbours].iter().sum()
        })
        .collect()
}

/// Krum score per client: summed squared distance to its `n − n_byz − 2`
/// nearest neighbours.
pub fn krum_scores(updates: &[ParamVector], n_byz: usize) -> Result<Vec<f64>> {
    check_updates(updates)?;
    let n = updates.len();
    let neighbours = n.checked_sub(n_byz + 2).filter(|&m| m >= 1).ok_or_else(|| {
        Error::invalid(
            "n_byz",
            format!("{n} clients cannot tolerate {n_byz} byzantine ones"),
        )
    })?;
    let refs: Vec<&ParamVector> = updates.iter().collect();
    Ok(scores_from_distances(&pairwise_distances(&refs), neighbours))
}

fn lowest(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Averages the `n_select` updates with the lowest Krum score.
pub fn multikrum(updates: &[ParamVector], n_select: usize, n_byz: usize) -> Result<Selection> {
    let scores = krum_scores(updates, n_byz)?;
    if n_select == 0 || n_select > updates.len() {
        return Err(Error::invalid("n_select", "must lie in 1..=n"));
    }
    let mut selected = lowest(&scores, n_select);
    selected.sort_unstable();
    let refs: Vec<&ParamVector> = selected.iter().map(|&i| &updates[i]).collect();
    Ok(Selection {
        aggregate: mean(&refs),
        selected,
    })
}

/// Bulyan: repeatedly moves the Krum winner of the remaining pool into the
/// selection until `n − 2·n_byz` updates are chosen, then takes the
/// coordinate-wise trimmed mean of the selection.
pub fn bulyan(updates: &[ParamVector], n_byz: usize, trim: f64) -> Result<Selection> {
    check_updates(updates)?;
    let n = updates.len();
    let target = n
        .checked_sub(2 * n_byz)
        .filter(|&t| t >= 1)
        .ok_or_else(|| Error::invalid("n_byz", format!("{n} clients cannot drop 2×{n_byz}")))?;
    let all: Vec<&ParamVector> = updates.iter().collect();
    let dist = pairwise_distances(&all);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(target);
    while selected.len() < target {
        let m = pool.len();
        let neighbours = m.saturating_sub(n_byz + 2).clamp(1.min(m - 1), m - 1);
        let sub: Vec<Vec<f64>> = pool
            .iter()
            .map(|&i| pool.iter().map(|&j| dist[i][j]).collect())
            .collect();
        let scores = scores_from_distances(&sub, neighbours);
        let winner = lowest(&scores, 1)[0];
        selected.push(pool.remove(winner));
    }
    selected.sort_unstable();
    let chosen: Vec<ParamVector> = selected.iter().map(|&i| updates[i].clone()).collect();
    Ok(Selection {
        aggregate: trimmed_mean(&chosen, trim)?,
        selected,
    })
}

fn clip(delta: &ParamVector, max_norm: f64) -> ParamVector {
    let factor = (delta.norm() / max_norm).max(1.0);
    if factor == 1.0 {
        delta.clone()
    } else {
        delta.scale(1.0 / factor)
    }
}

/// FedAvg over deltas rescaled to norm at most `max_norm`.
pub fn norm_clip(
    global_prev: &ParamVector,
    deltas: &[ParamVector],
    max_norm: f64,
    server_lr: f64,
) -> Result<ParamVector> {
    if !(max_norm > 0.0 && max_norm.is_finite()) {
        return Err(Error::invalid("clip_norm", "must be positive"));
    }
    check_updates(deltas)?;
    let clipped: Vec<ParamVector> = deltas.iter().map(|d| clip(d, max_norm)).collect();
    fedavg(global_prev, &clipped, server_lr)
}

/// [`norm_clip`] plus Gaussian noise with standard deviation `σ·M/n`.
pub fn wdp(
    global_prev: &ParamVector,
    deltas: &[ParamVector],
    max_norm: f64,
    sigma: f64,
    server_lr: f64,
    seed: u64,
) -> Result<ParamVector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma", "must be ≥ 0"));
    }
    let clipped = norm_clip(global_prev, deltas, max_norm, server_lr)?;
    if sigma == 0.0 {
        return Ok(clipped);
    }
    let std = sigma * max_norm / deltas.len() as f64;
    let noise = Normal::new(0.0, std).map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
    let mut rng = rng::rng(seed);
    let values = clipped
        .values()
        .iter()
        .map(|v| v + noise.sample(&mut rng))
        .collect();
    Ok(ParamVector::from_raw(clipped.layout().clone(), values))
}

/// Robust learning rate: coordinates whose summed update signs fall below
/// `theta` in magnitude move with `−η` instead of `η`.
pub fn rlr(
    global_prev: &ParamVector,
    deltas: &[ParamVector],
    theta: usize,
    server_lr: f64,
) -> Result<ParamVector> {
    check_updates(deltas)?;
    check_lr(server_lr)?;
    if !global_prev.same_layout(&deltas[0]) {
        return Err(Error::LayoutMismatch);
    }
    let n = deltas.len() as f64;
    let values = (0..global_prev.len())
        .map(|j| {
            let mut sum = 0.0;
            let mut signs = 0i64;
            for d in deltas {
                let v = d.values()[j];
                sum += v;
                signs += if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                };
            }
            let lr = if (signs.unsigned_abs() as usize) < theta {
                -server_lr
            } else {
                server_lr
            };
            global_prev.values()[j] + lr / n * sum
        })
        .collect();
    Ok(ParamVector::from_raw(global_prev.layout().clone(), values))
}
