//! Datasets, loaders and federated partitioning.
//!
//! Features are stored row-major with channel-major pixels inside a row
//! (`channel · height · width + row · width + col`), which is the native
//! layout of both the IDX and CIFAR binary formats.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::model::Batch;
use crate::rng;
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_CLASSES: usize = 10;

/// Fixed stream for synthetic class centers, shared by every sample seed so
/// that train and test splits drawn with different seeds agree.
const SYNTH_CENTER_SEED: u64 = 0x5EED_CE47;
/// Synthetic centers are drawn from `[0, SYNTH_CENTER_SCALE)`.
const SYNTH_CENTER_SCALE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn dims(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        channel * self.height * self.width + row * self.width + col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
    shape: ImageShape,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        classes: usize,
        shape: ImageShape,
    ) -> Result<Self> {
        let dims = shape.dims();
        if dims == 0 {
            return Err(Error::invalid("image_shape", "zero-sized image"));
        }
        if features.len() != labels.len() * dims {
            return Err(Error::InputShape {
                expected: labels.len() * dims,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} ≥ class count {classes}"),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            features,
            labels,
            classes,
            shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.shape.dims()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        let d = self.dims();
        (&self.features[i * d..(i + 1) * d], self.labels[i])
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels, self.dims())
            .expect("dataset invariants guarantee a valid batch")
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dims();
        let mut features = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(&self.features[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            classes: self.classes,
            shape: self.shape,
        }
    }

    /// Same samples with a larger class count (for aligning train and test
    /// splits loaded separately).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::invalid("classes", "cannot shrink class count"));
        }
        self.classes = classes;
        Ok(self)
    }

    pub(crate) fn replace_labels(&mut self, labels: Vec<usize>) {
        debug_assert_eq!(labels.len(), self.labels.len());
        self.labels = labels;
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    LabelFlip,
    RandomWeights,
    Backdoor,
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_flip" => Ok(AttackKind::LabelFlip),
            "random_weights" => Ok(AttackKind::RandomWeights),
            "backdoor" => Ok(AttackKind::Backdoor),
            other => Err(Error::invalid("attack", format!("unknown `{other}`"))),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::LabelFlip => "label_flip",
            AttackKind::RandomWeights => "random_weights",
            AttackKind::Backdoor => "backdoor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Regular,
    /// Benign client holding a label-skewed shard.
    Poor,
    Adversarial(AttackKind),
}

impl Role {
    pub fn is_adversarial(&self) -> bool {
        matches!(self, Role::Adversarial(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Role::Regular => "regular",
            Role::Poor => "poor",
            Role::Adversarial(_) => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientProfile {
    pub id: usize,
    pub role: Role,
}

impl ClientProfile {
    pub fn attack(&self) -> Option<AttackKind> {
        match self.role {
            Role::Adversarial(kind) => Some(kind),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub clients: Vec<(Dataset, ClientProfile)>,
    /// Server-held validation split used by the ordering functions.
    pub server_validation: Dataset,
    pub server_test: Dataset,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format("IDX", format!("truncated {what} header")))
}

/// Parses an IDX image file and its label file.
pub fn load_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "IDX",
            format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let magic = read_u32(labels, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "IDX",
            format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_images = read_u32(images, 4, "image")? as usize;
    let rows = read_u32(images, 8, "image")? as usize;
    let cols = read_u32(images, 12, "image")? as usize;
    let n_labels = read_u32(labels, 4, "label")? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let pixels = n_images * rows * cols;
    let body = &images[16..];
    if body.len() != pixels {
        return Err(Error::format(
            "IDX",
            format!("image body has {} bytes, header declares {pixels}", body.len()),
        ));
    }
    let label_body = &labels[8..];
    if label_body.len() != n_labels {
        return Err(Error::format(
            "IDX",
            format!(
                "label body has {} bytes, header declares {n_labels}",
                label_body.len()
            ),
        ));
    }
    let labels: Vec<usize> = label_body.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = body.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(features, labels, classes, ImageShape::new(rows, cols, 1))
}

/// Parses a CIFAR-10 binary batch (3073-byte records).
pub fn load_cifar_bin(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            "CIFAR",
            format!(
                "{} bytes is not a multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut features = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format("CIFAR", format!("label byte {label}")));
        }
        labels.push(label);
        features.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(
        features,
        labels,
        CIFAR_CLASSES,
        ImageShape::new(CIFAR_SIDE, CIFAR_SIDE, 3),
    )
}

/// Balanced Gaussian clusters as a flat `1 × dims` "image".
pub fn synth_blobs(
    classes: usize,
    dims: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    synth_images(classes, ImageShape::new(1, dims, 1), per_class, spread, seed)
}

/// Balanced Gaussian clusters around fixed class centers, clamped to
/// `[0, 1]`. Centers depend only on `(classes, dims)`; `seed` drives the
/// noise.
pub fn synth_images(
    classes: usize,
    shape: ImageShape,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("classes", "need at least 2 classes"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread", "must be finite and ≥ 0"));
    }
    let dims = shape.dims();
    if dims == 0 {
        return Err(Error::invalid("dims", "must be ≥ 1"));
    }
    let centers = synth_centers(classes, dims);
    let mut rng = rng::rng(seed);
    let noise = Normal::new(0.0, spread).expect("spread validated above");
    let mut features = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (k, center) in centers.iter().enumerate() {
            features.extend(
                center
                    .iter()
                    .map(|&c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(k);
        }
    }
    Dataset::new(features, labels, classes, shape)
}

pub fn synth_centers(classes: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut rng = rng::derived_rng(SYNTH_CENTER_SEED, &[classes as u64, dims as u64]);
    (0..classes)
        .map(|_| {
            (0..dims)
                .map(|_| rng.random::<f64>() * SYNTH_CENTER_SCALE)
                .collect()
        })
        .collect()
}

/// The two classes a poor client's shard concentrates on.
pub fn dominant_classes(poor_index: usize, classes: usize) -> [usize; 2] {
    [(2 * poor_index) % classes, (2 * poor_index + 1) % classes]
}

/// Splits `data` into disjoint client shards covering every sample.
///
/// Client roles are drawn from `seed`: `n_poor` clients become poor and
/// receive a shard where at least a `skew` fraction comes from their two
/// [`dominant_classes`]; everyone else receives an IID shard. Shard sizes
/// differ by at most one sample.
pub fn partition(
    data: &Dataset,
    n_clients: usize,
    n_poor: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<(Dataset, ClientProfile)>> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be ≥ 1"));
    }
    if n_poor > n_clients {
        return Err(Error::invalid("n_poor", "exceeds n_clients"));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::invalid("skew", "must lie in [0, 1]"));
    }
    let n = data.len();
    if n < n_clients {
        return Err(Error::invalid(
            "n_clients",
            format!("{n} samples cannot give {n_clients} clients one sample each"),
        ));
    }
    let mut rng = rng::rng(seed);
    let sizes: Vec<usize> = (0..n_clients)
        .map(|i| n / n_clients + usize::from(i < n % n_clients))
        .collect();

    let mut ids: Vec<usize> = (0..n_clients).collect();
    ids.shuffle(&mut rng);
    let mut poor_ids = ids[..n_poor].to_vec();
    poor_ids.sort_unstable();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for pool in &mut by_class {
        pool.shuffle(&mut rng);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (j, &id) in poor_ids.iter().enumerate() {
        let need = (skew * sizes[id] as f64).ceil() as usize;
        let classes = dominant_classes(j, data.classes());
        let mut turn = 0;
        while shards[id].len() < need {
            let k = classes[turn % 2];
            let other = classes[(turn + 1) % 2];
            let pick = by_class[k].pop().or_else(|| by_class[other].pop());
            match pick {
                Some(i) => shards[id].push(i),
                None => {
                    return Err(Error::invalid(
                        "n_poor",
                        format!("classes {classes:?} cannot fill poor client {id}"),
                    ))
                }
            }
            turn += 1;
        }
    }

    let mut rest: Vec<usize> = by_class.into_iter().flatten().collect();
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    let mut rest = rest.into_iter();
    for &id in &poor_ids {
        let missing = sizes[id] - shards[id].len();
        shards[id].extend(rest.by_ref().take(missing));
    }
    for id in 0..n_clients {
        if poor_ids.binary_search(&id).is_err() {
            shards[id].extend(rest.by_ref().take(sizes[id]));
        }
    }
    debug_assert!(rest.next().is_none());

    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            let role = if poor_ids.binary_search(&id).is_ok() {
                Role::Poor
            } else {
                Role::Regular
            };
            (data.subset(&idx), ClientProfile { id, role })
        })
        .collect())
}

/// Stratified split into `(validation, test)`. The validation split holds
/// `round(fraction · n)` samples, spread over classes by largest remainder;
/// both outputs keep the input order.
pub fn validation_split(test: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction", "must lie in (0, 1)"));
    }
    let counts = test.label_counts();
    let total = (fraction * test.len() as f64).round() as usize;
    let mut quotas: Vec<usize> = counts
        .iter()
        .map(|&c| (fraction * c as f64).floor() as usize)
        .collect();
    let mut leftover = total.saturating_sub(quotas.iter().sum());
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = fraction * counts[a] as f64 - quotas[a] as f64;
        let rb = fraction * counts[b] as f64 - quotas[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for k in order {
        if leftover == 0 {
            break;
        }
        if quotas[k] < counts[k] {
            quotas[k] += 1;
            leftover -= 1;
        }
    }

    let mut rng = rng::rng(seed);
    let mut in_validation = vec![false; test.len()];
    for (k, &quota) in quotas.iter().enumerate() {
        let mut members: Vec<usize> = test
            .labels()
            .iter()
            .enumerate()
            .filter(|&(_, &y)| y == k)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for &i in &members[..quota] {
            in_validation[i] = true;
        }
    }
    let (val, rest): (Vec<usize>, Vec<usize>) =
        (0..test.len()).partition(|&i| in_validation[i]);
    Ok((test.subset(&val), test.subset(&rest)))
}
