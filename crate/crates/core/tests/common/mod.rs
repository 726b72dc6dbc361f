#![allow(dead_code)]

use std::sync::Arc;

use flsim::model::{self, Activation, Batch, ModelLayout, ParamVector};
use proptest::prelude::*;

/// Layout with exactly `dim` parameters (`dim ≥ 2`): a `(dim−1) → 1` layer.
pub fn flat_layout(dim: usize) -> Arc<ModelLayout> {
    Arc::new(ModelLayout::new(vec![dim - 1, 1], Activation::Relu).unwrap())
}

pub fn vectors(layout: &Arc<ModelLayout>, rows: &[Vec<f64>]) -> Vec<ParamVector> {
    rows.iter()
        .map(|r| ParamVector::from_values(layout.clone(), r.clone()).unwrap())
        .collect()
}

/// `n` update vectors of dimension `dim`, values drawn from a small grid so
/// ties occur.
pub fn update_rows(n: std::ops::RangeInclusive<usize>, dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (n, dim).prop_flat_map(|(n, d)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![(-8i32..=8).prop_map(|v| v as f64 / 4.0), -10.0..10.0f64], d),
            n,
        )
    })
}

pub fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    let mut c: Vec<f64> = rows.iter().map(|r| r[j]).collect();
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    c
}

pub fn median_oracle(rows: &[Vec<f64>]) -> Vec<f64> {
    (0..rows[0].len())
        .map(|j| {
            let c = column(rows, j);
            let m = c.len() / 2;
            if c.len() % 2 == 1 {
                c[m]
            } else {
                (c[m - 1] + c[m]) / 2.0
            }
        })
        .collect()
}

pub fn trimmed_oracle(rows: &[Vec<f64>], trim: f64) -> Vec<f64> {
    let n = rows.len();
    let k = (trim * n as f64).floor() as usize;
    (0..rows[0].len())
        .map(|j| {
            let c = column(rows, j);
            let mut sum = 0.0;
            for v in &c[k..n - k] {
                sum += v;
            }
            sum / (n - 2 * k) as f64
        })
        .collect()
}

pub fn krum_oracle(rows: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.iter().take(n - f - 2).sum()
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}


pub const FD_STEP: f64 = 1e-5;

fn loss(p: &ParamVector, batch: &Batch<'_>) -> f64 {
    model::loss_and_gradient(p, batch).unwrap().0
}

/// Central differences of the mean loss with respect to every parameter.
pub fn fd_gradient(p: &ParamVector, batch: &Batch<'_>) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let mut up = p.values().to_vec();
            let mut down = up.clone();
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            let up = ParamVector::from_values(p.layout().clone(), up).unwrap();
            let down = ParamVector::from_values(p.layout().clone(), down).unwrap();
            (loss(&up, batch) - loss(&down, batch)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences of the class probabilities, `features × classes`.
pub fn fd_jacobian(p: &ParamVector, x: &[f64]) -> Vec<f64> {
    let classes = p.layout().classes();
    let mut fd = vec![0.0; x.len() * classes];
    for f in 0..x.len() {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[f] += FD_STEP;
        down[f] -= FD_STEP;
        let pu = model::forward(p, &up).unwrap();
        let pd = model::forward(p, &down).unwrap();
        for k in 0..classes {
            fd[f * classes + k] = (pu[k] - pd[k]) / (2.0 * FD_STEP);
        }
    }
    fd
}
