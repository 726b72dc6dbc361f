//! Poisoning behaviors: label flipping, random weights, pattern-key
//! backdoors and model-replacement boosting.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::data::{Dataset, ImageShape};
use crate::model::{ModelLayout, ParamVector};
use crate::rng;
use crate::{Error, Result};

/// Pixels of a length-3 cross anchored in the bottom-right corner of a
/// 28×28 image.
pub const CROSS3_28X28_FOOTPRINT: [(usize, usize); 5] =
    [(25, 26), (26, 25), (26, 26), (26, 27), (27, 26)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    /// Plus sign; `size` is the span of each arm including the center.
    Cross,
    /// Filled `size × size` square.
    Square,
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(PatternKind::Cross),
            "square" => Ok(PatternKind::Square),
            other => Err(Error::invalid("pattern_kind", format!("unknown `{other}`"))),
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::Cross => "cross",
            PatternKind::Square => "square",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackdoorPattern {
    pub kind: PatternKind,
    pub size: usize,
    /// Cross: center pixel. Square: top-left pixel.
    pub position: (usize, usize),
    pub intensity: f64,
    pub target_label: usize,
}

impl BackdoorPattern {
    /// Pattern tucked into the bottom-right corner: a cross whose arms end on
    /// the last row/column, or a square flush with the corner.
    pub fn bottom_right(
        kind: PatternKind,
        size: usize,
        shape: ImageShape,
        intensity: f64,
        target_label: usize,
    ) -> Result<Self> {
        let extent = match kind {
            PatternKind::Cross => size / 2 + 1,
            PatternKind::Square => size,
        };
        if size == 0 || extent > shape.height || extent > shape.width {
            return Err(Error::invalid("pattern_size", "pattern does not fit the image"));
        }
        let position = (shape.height - extent, shape.width - extent);
        let pattern = Self {
            kind,
            size,
            position,
            intensity,
            target_label,
        };
        pattern.footprint(shape)?;
        Ok(pattern)
    }

    /// `(row, col)` pixels touched by the pattern (every channel is set).
    pub fn footprint(&self, shape: ImageShape) -> Result<Vec<(usize, usize)>> {
        if !self.intensity.is_finite() {
            return Err(Error::invalid("pattern_intensity", "must be finite"));
        }
        if self.size == 0 {
            return Err(Error::invalid("pattern_size", "must be ≥ 1"));
        }
        let (r, c) = (self.position.0 as isize, self.position.1 as isize);
        let cells: Vec<(isize, isize)> = match self.kind {
            PatternKind::Cross => {
                let half = (self.size / 2) as isize;
                let mut cells = Vec::new();
                for d in -half..=half {
                    cells.push((r + d, c));
                    if d != 0 {
                        cells.push((r, c + d));
                    }
                }
                cells
            }
            PatternKind::Square => {
                let s = self.size as isize;
                (0..s)
                    .flat_map(|dr| (0..s).map(move |dc| (r + dr, c + dc)))
                    .collect()
            }
        };
        let (h, w) = (shape.height as isize, shape.width as isize);
        if cells.iter().any(|&(y, x)| y < 0 || x < 0 || y >= h || x >= w) {
            return Err(Error::invalid(
                "pattern",
                format!(
                    "{} of size {} at {:?} exceeds {}×{} image",
                    self.kind, self.size, self.position, shape.height, shape.width
                ),
            ));
        }
        let mut cells: Vec<(usize, usize)> = cells
            .into_iter()
            .map(|(y, x)| (y as usize, x as usize))
            .collect();
        cells.sort_unstable();
        Ok(cells)
    }

    /// Stamps the pattern onto one sample in place.
    pub fn stamp(&self, features: &mut [f64], shape: ImageShape) -> Result<()> {
        if features.len() != shape.dims() {
            return Err(Error::InputShape {
                expected: shape.dims(),
                actual: features.len(),
            });
        }
        for (row, col) in self.footprint(shape)? {
            for ch in 0..shape.channels {
                features[shape.index(ch, row, col)] = self.intensity;
            }
        }
        Ok(())
    }
}

/// Replaces every label with a uniformly drawn different label.
pub fn flip_labels(data: &Dataset, seed: u64) -> Result<Dataset> {
    let k = data.classes();
    if k < 2 {
        return Err(Error::invalid("classes", "cannot flip labels of a single class"));
    }
    let mut rng = rng::rng(seed);
    let labels = data
        .labels()
        .iter()
        .map(|&y| {
            let r = rng.random_range(0..k - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        })
        .collect();
    let mut out = data.clone();
    out.replace_labels(labels);
    Ok(out)
}

/// Parameters drawn i.i.d. uniform in `[−scale, scale]`.
pub fn random_weights_update(layout: Arc<ModelLayout>, scale: f64, seed: u64) -> Result<ParamVector> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale", "must be positive"));
    }
    let mut rng = rng::rng(seed);
    let values = (0..layout.param_count())
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    ParamVector::from_values(layout, values)
}

/// Stamps `pattern` onto a seeded `fraction` of the samples and relabels them
/// to the target class.
pub fn inject_backdoor(
    data: &Dataset,
    pattern: &BackdoorPattern,
    fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction", "must lie in (0, 1]"));
    }
    if pattern.target_label >= data.classes() {
        return Err(Error::invalid("target_label", "outside the class range"));
    }
    let shape = data.shape();
    pattern.footprint(shape)?;
    let n = data.len();
    let count = ((fraction * n as f64).round() as usize).clamp(n.min(1), n);
    let mut rng = rng::rng(seed);
    let chosen = index::sample(&mut rng, n, count);

    let mut out = data.clone();
    let mut labels = out.labels().to_vec();
    let dims = shape.dims();
    for i in chosen.iter() {
        pattern.stamp(&mut out.features_mut()[i * dims..(i + 1) * dims], shape)?;
        labels[i] = pattern.target_label;
    }
    out.replace_labels(labels);
    Ok(out)
}

/// Boosted contribution `β · (adv − global_prev)` with `β = n / η`.
pub fn boost_update(
    adv_params: &ParamVector,
    global_prev: &ParamVector,
    n_clients: usize,
    server_lr: f64,
) -> Result<ParamVector> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be ≥ 1"));
    }
    if !(server_lr > 0.0 && server_lr.is_finite()) {
        return Err(Error::invalid("server_lr", "must be positive"));
    }
    let beta = n_clients as f64 / server_lr;
    Ok(adv_params.sub(global_prev)?.scale(beta))
}
