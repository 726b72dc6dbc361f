//! Ordering results and the dynamic step-wise quantifier.
//!
//! Clients are ranked by a score (higher is better). The gaps to the best
//! score, `X_i = max − score_i`, are treated as exponentially distributed
//! with rate `λ = 1 / mean(X)`. Two quantiles of that fit split the ranking
//! into a Top segment, a Rest segment and filtered clients; the quantifier
//! `Q` turns rank positions into weights where each Top client weighs twice a
//! Rest client and filtered clients weigh nothing.

use crate::{Error, Result};

/// `mean(X)` below this is treated as "all clients equal".
const DEGENERATE_MEAN: f64 = 1e-12;
/// Grid tolerance when checking that `b·n` and `c·n` are whole counts.
const GRID_EPS: f64 = 1e-9;

/// `ln(10/9)`: the 10% quantile of a unit-rate exponential.
pub fn top_quantile() -> f64 {
    (10.0f64 / 9.0).ln()
}

/// `ln 4 + 1.5 · ln 3`: `Q3 + 1.5·IQR` of a unit-rate exponential.
pub fn outlier_quantile() -> f64 {
    4f64.ln() + 1.5 * 3f64.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingResult {
    /// Per-client score, in client input order.
    pub scores: Vec<f64>,
    /// `max(scores) − scores[i]`.
    pub x_values: Vec<f64>,
    /// Exponential rate; `None` when every client scored the same.
    pub lambda: Option<f64>,
    /// Client indices by descending score, ties by ascending index.
    pub ranking: Vec<usize>,
}

impl OrderingResult {
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyInput("scores"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite);
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x_values: Vec<f64> = scores.iter().map(|s| max - s).collect();
        let mean = x_values.iter().sum::<f64>() / x_values.len() as f64;
        let lambda = (mean >= DEGENERATE_MEAN).then(|| 1.0 / mean);
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(Self {
            scores,
            x_values,
            lambda,
            ranking,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.lambda.is_none()
    }
}

/// Breakpoints of the quantifier: `0 = a ≤ b ≤ c ≤ 1`, `Q(b) = y_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantifierParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub y_b: f64,
}

impl QuantifierParams {
    pub fn new(b: f64, c: f64, y_b: f64) -> Result<Self> {
        let p = Self { a: 0.0, b, c, y_b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a != 0.0 {
            return Err(Error::invalid("a", "must be 0"));
        }
        if !(self.b >= self.a && self.b <= self.c && self.c <= 1.0) {
            return Err(Error::invalid("b, c", "need 0 ≤ b ≤ c ≤ 1"));
        }
        if self.c <= 0.0 {
            return Err(Error::invalid("c", "must be positive"));
        }
        if !(self.y_b > 0.0 && self.y_b <= 1.0) {
            return Err(Error::invalid("y_b", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// The y_b expression exactly as printed alongside the quantifier,
    /// `2|Top| / (2|Top| − |Rest|)`. Reported only; it leaves `(0, 1]` as
    /// soon as `|Rest| > 0`.
    pub fn printed_y_b(top: usize, rest: usize) -> f64 {
        2.0 * top as f64 / (2.0 * top as f64 - rest as f64)
    }
}

/// Derives the quantifier from the exponential fit of an ordering.
///
/// - `b`: share of clients with `X ≤ ln(10/9)/λ` (raised to `1/n` if none).
/// - `c = 1 − ĉ`, `ĉ`: share with `X ≥ (ln 4 + 1.5·ln 3)/λ`.
/// - `y_b = 2|Top| / (2|Top| + |Rest|)`.
pub fn quantifier_params(ordering: &OrderingResult, n: usize) -> Result<QuantifierParams> {
    let lambda = ordering.lambda.ok_or(Error::DegenerateOrdering)?;
    if n == 0 || n != ordering.len() {
        return Err(Error::invalid("n", "must equal the number of ranked clients"));
    }
    let top_threshold = top_quantile() / lambda;
    let outlier_threshold = outlier_quantile() / lambda;
    let top = ordering
        .x_values
        .iter()
        .filter(|&&x| x <= top_threshold)
        .count()
        .max(1);
    let outliers = ordering
        .x_values
        .iter()
        .filter(|&&x| x >= outlier_threshold)
        .count();
    let kept = (n - outliers).max(top);
    let rest = kept - top;
    let nf = n as f64;
    QuantifierParams::new(
        top as f64 / nf,
        kept as f64 / nf,
        2.0 * top as f64 / (2.0 * top as f64 + rest as f64),
    )
}

/// `Q(x)`: 0 up to `a`, linear to `y_b` at `b`, linear to 1 at `c`, then 1.
pub fn quantifier_value(p: &QuantifierParams, x: f64) -> f64 {
    if x <= p.a {
        0.0
    } else if x >= p.c {
        1.0
    } else if x <= p.b {
        (x - p.a) / (p.b - p.a) * p.y_b
    } else {
        (x - p.b) / (p.c - p.b) * (1.0 - p.y_b) + p.y_b
    }
}

/// Weights per rank position (best first).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn grid_count(share: f64, n: usize) -> Option<usize> {
    let scaled = share * n as f64;
    let count = scaled.round();
    ((scaled - count).abs() < GRID_EPS).then_some(count as usize)
}

/// `w_i = Q(i/n) − Q((i−1)/n)` for rank positions `i = 1..=n`.
///
/// When `b` and `c` sit on the `1/n` grid the weights are constant on each
/// segment and are produced in closed form, so the Top/Rest ratio is exact.
pub fn quantifier_weights(p: &QuantifierParams, n: usize) -> Result<WeightVector> {
    p.validate()?;
    if n == 0 {
        return Err(Error::EmptyInput("clients"));
    }
    if let (Some(top), Some(kept)) = (grid_count(p.b, n), grid_count(p.c, n)) {
        if top >= 1 && kept >= top {
            let rest = kept - top;
            let balanced = 2.0 * top as f64 / (2.0 * top as f64 + rest as f64);
            let (w_top, w_rest) = if (p.y_b - balanced).abs() < 1e-12 {
                let unit = 1.0 / (2 * top + rest) as f64;
                (2.0 * unit, unit)
            } else {
                let w_rest = if rest > 0 {
                    (1.0 - p.y_b) / rest as f64
                } else {
                    0.0
                };
                let w_top = if rest > 0 { p.y_b } else { 1.0 } / top as f64;
                (w_top, w_rest)
            };
            let weights = (1..=n)
                .map(|i| {
                    if i <= top {
                        w_top
                    } else if i <= kept {
                        w_rest
                    } else {
                        0.0
                    }
                })
                .collect();
            return Ok(WeightVector { weights });
        }
    }
    let nf = n as f64;
    let weights = (1..=n)
        .map(|i| {
            quantifier_value(p, i as f64 / nf) - quantifier_value(p, (i - 1) as f64 / nf)
        })
        .collect();
    Ok(WeightVector { weights })
}
