//! Local linear explanations.
//!
//! An importance matrix holds, for one model and one input, the local linear
//! sensitivity of every class probability to every input feature
//! (`features × classes`, row-major). Two ways of obtaining it are offered:
//! the exact input Jacobian, or a ridge-regularised linear surrogate fitted
//! on Gaussian perturbations around the input.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{Dataset, ImageShape};
use crate::model::{self, ParamVector};
use crate::rng;
use crate::{Error, Result};

/// Norm below which an explanation counts as degenerate.
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LleMode {
    #[default]
    Gradient,
    Surrogate,
}

impl FromStr for LleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(LleMode::Gradient),
            "surrogate" => Ok(LleMode::Surrogate),
            other => Err(Error::invalid("lle_mode", format!("unknown `{other}`"))),
        }
    }
}

impl fmt::Display for LleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LleMode::Gradient => "gradient",
            LleMode::Surrogate => "surrogate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LleConfig {
    pub mode: LleMode,
    /// Perturbations per instance (surrogate mode).
    pub n_perturb: usize,
    /// Standard deviation of the Gaussian perturbations (surrogate mode).
    pub radius: f64,
    /// Ridge strength relative to `n_perturb · radius²`.
    pub ridge: f64,
    /// Validation instances explained per round.
    pub max_instances: usize,
    pub seed: u64,
}

impl Default for LleConfig {
    fn default() -> Self {
        Self {
            mode: LleMode::Gradient,
            n_perturb: 256,
            radius: 0.05,
            ridge: 1e-4,
            max_instances: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    entries: Vec<f64>,
    features: usize,
    classes: usize,
    pub client_id: usize,
    pub instance_id: usize,
    pub mode: LleMode,
}

impl ImportanceMatrix {
    pub fn new(entries: Vec<f64>, features: usize, classes: usize, mode: LleMode) -> Result<Self> {
        if entries.len() != features * classes {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {features}×{classes} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            entries,
            features,
            classes,
            client_id: 0,
            instance_id: 0,
            mode,
        })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, feature: usize, class: usize) -> f64 {
        self.entries[feature * self.classes + class]
    }

    fn norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Least-squares linear fit of `f` around `x`.
///
/// Draws `n_perturb` points `x + radius · N(0, I)`, centers inputs and
/// outputs, and solves the ridge normal equations. Returns the slope matrix
/// `inputs × outputs`, row-major.
pub fn fit_local_linear(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    n_perturb: usize,
    radius: f64,
    ridge: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_perturb < 2 {
        return Err(Error::invalid("n_perturb", "need at least 2 perturbations"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge", "must be positive"));
    }
    let d = x.len();
    let mut rng = rng::rng(seed);
    let mut offsets = DMatrix::<f64>::zeros(n_perturb, d);
    let mut outputs: Option<DMatrix<f64>> = None;
    for s in 0..n_perturb {
        let point: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                offsets[(s, j)] = radius * e;
                xj + radius * e
            })
            .collect();
        let y = f(&point)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let out = outputs.get_or_insert_with(|| DMatrix::zeros(n_perturb, y.len()));
        if y.len() != out.ncols() {
            return Err(Error::DimensionMismatch("surrogate target width changed".into()));
        }
        for (k, v) in y.into_iter().enumerate() {
            out[(s, k)] = v;
        }
    }
    let mut outputs = outputs.expect("n_perturb ≥ 2");
    for mut col in offsets.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    for mut col in outputs.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let mut gram = offsets.transpose() * &offsets;
    let penalty = ridge * n_perturb as f64 * radius * radius;
    for j in 0..d {
        gram[(j, j)] += penalty;
    }
    let rhs = offsets.transpose() * &outputs;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::invalid("ridge", "normal equations are not positive definite"))?;
    let coef = chol.solve(&rhs);
    let mut out = Vec::with_capacity(d * coef.ncols());
    for j in 0..d {
        out.extend(coef.row(j).iter().copied());
    }
    Ok(out)
}

/// Importance matrix of `params` at `x`.
pub fn lle_importance(
    params: &ParamVector,
    x: &[f64],
    cfg: &LleConfig,
    seed: u64,
) -> Result<ImportanceMatrix> {
    let features = params.layout().input_dim();
    let classes = params.layout().classes();
    let entries = match cfg.mode {
        LleMode::Gradient => model::input_jacobian(params, x)?,
        LleMode::Surrogate => {
            if x.len() != features {
                return Err(Error::InputShape {
                    expected: features,
                    actual: x.len(),
                });
            }
            fit_local_linear(
                |p| model::forward(params, p),
                x,
                cfg.n_perturb,
                cfg.radius,
                cfg.ridge,
                seed,
            )?
        }
    };
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    ImportanceMatrix::new(entries, features, classes, cfg.mode)
}

/// Cosine of the flattened matrices; 0 when either is (numerically) zero.
pub fn cosine_similarity(a: &ImportanceMatrix, b: &ImportanceMatrix) -> Result<f64> {
    if a.features != b.features || a.classes != b.classes {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} vs {}×{}",
            a.features, a.classes, b.features, b.classes
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    let dot: f64 = a.entries.iter().zip(&b.entries).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Explanations for every (client, explained instance) pair.
#[derive(Debug, Clone)]
pub struct ExplanationBank {
    /// Indices into the validation set, ascending.
    pub instances: Vec<usize>,
    /// `matrices[client][k]` explains `instances[k]`.
    pub matrices: Vec<Vec<ImportanceMatrix>>,
}

/// Validation indices explained under `cfg`: everything when the set is
/// small enough, otherwise a seeded sample of `max_instances`.
pub fn explained_instances(n: usize, cfg: &LleConfig) -> Vec<usize> {
    if cfg.max_instances == 0 || n <= cfg.max_instances {
        return (0..n).collect();
    }
    let mut rng = rng::derived_rng(cfg.seed, &[0x1A5]);
    let mut picked = index::sample(&mut rng, n, cfg.max_instances).into_vec();
    picked.sort_unstable();
    picked
}

/// Builds the explanation bank. Perturbation streams depend only on the
/// instance, so identical models always get identical rows.
pub fn explanation_bank(
    models: &[ParamVector],
    validation: &Dataset,
    cfg: &LleConfig,
) -> Result<ExplanationBank> {
    if models.is_empty() {
        return Err(Error::EmptyInput("client models"));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let instances = explained_instances(validation.len(), cfg);
    let matrices = models
        .par_iter()
        .enumerate()
        .map(|(client, params)| {
            instances
                .iter()
                .map(|&v| {
                    let seed = rng::derive_seed(cfg.seed, &[v as u64]);
                    let mut m = lle_importance(params, validation.sample(v).0, cfg, seed)?;
                    m.client_id = client;
                    m.instance_id = v;
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Client {
                    client,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationBank {
        instances,
        matrices,
    })
}

/// Greyscale rendering of `|importance|` for one class: channels averaged,
/// min-max scaled to `0..=255` (white = most important). Constant maps render
/// black.
pub fn render_importance(
    matrix: &ImportanceMatrix,
    class: usize,
    shape: ImageShape,
) -> Result<Vec<u8>> {
    if matrix.features != shape.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{} features for a {}×{}×{} image",
            matrix.features, shape.height, shape.width, shape.channels
        )));
    }
    if class >= matrix.classes {
        return Err(Error::invalid("class", "outside the class range"));
    }
    let plane = shape.height * shape.width;
    let magnitude: Vec<f64> = (0..plane)
        .map(|p| {
            (0..shape.channels)
                .map(|ch| matrix.get(ch * plane + p, class).abs())
                .sum::<f64>()
                / shape.channels as f64
        })
        .collect();
    let lo = magnitude.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = magnitude.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(vec![0; plane]);
    }
    Ok(magnitude
        .iter()
        .map(|&m| (255.0 * (m - lo) / (hi - lo)).round() as u8)
        .collect())
}

/// Binary PGM (P5, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for a {width}×{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode_pgm(width, height, pixels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Ridge solution used by tests to cross-check the nalgebra path.
#[cfg(test)]
fn slope_1d(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
