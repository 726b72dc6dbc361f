//! Experiment configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are errors. Every key is optional; the defaults
//! are the ones of [`ExperimentConfig::default`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversary::PatternKind;
use crate::data::AttackKind;
use crate::model::Activation;
use crate::xai::{LleConfig, LleMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Synthetic image-shaped Gaussian clusters.
    Synth {
        classes: usize,
        height: usize,
        width: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Defense {
    FedAvg,
    Median,
    TrimmedMean,
    MultiKrum,
    Bulyan,
    NormClip,
    Wdp,
    Rlr,
    Ddaba,
    Rab2Def,
}

impl Defense {
    /// Defenses that weight clients with the dynamic quantifier.
    pub fn is_quantified(self) -> bool {
        matches!(self, Defense::Ddaba | Defense::Rab2Def)
    }
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fedavg" => Defense::FedAvg,
            "median" => Defense::Median,
            "trimmed_mean" => Defense::TrimmedMean,
            "multikrum" => Defense::MultiKrum,
            "bulyan" => Defense::Bulyan,
            "norm_clip" => Defense::NormClip,
            "wdp" => Defense::Wdp,
            "rlr" => Defense::Rlr,
            "ddaba" => Defense::Ddaba,
            "rab2def" => Defense::Rab2Def,
            other => return Err(Error::invalid("defense", format!("unknown `{other}`"))),
        })
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Defense::FedAvg => "fedavg",
            Defense::Median => "median",
            Defense::TrimmedMean => "trimmed_mean",
            Defense::MultiKrum => "multikrum",
            Defense::Bulyan => "bulyan",
            Defense::NormClip => "norm_clip",
            Defense::Wdp => "wdp",
            Defense::Rlr => "rlr",
            Defense::Ddaba => "ddaba",
            Defense::Rab2Def => "rab2def",
        })
    }
}

/// Which adversaries scale their update by `n/η` before submitting it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostPolicy {
    None,
    Backdoor,
    All,
}

impl BoostPolicy {
    pub fn applies_to(self, attack: AttackKind) -> bool {
        match self {
            BoostPolicy::None => false,
            BoostPolicy::Backdoor => attack == AttackKind::Backdoor,
            BoostPolicy::All => true,
        }
    }
}

impl FromStr for BoostPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BoostPolicy::None),
            "backdoor" => Ok(BoostPolicy::Backdoor),
            "all" => Ok(BoostPolicy::All),
            other => Err(Error::invalid("boost", format!("unknown `{other}`"))),
        }
    }
}

impl fmt::Display for BoostPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoostPolicy::None => "none",
            BoostPolicy::Backdoor => "backdoor",
            BoostPolicy::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub validation_fraction: f64,

    pub n_clients: usize,
    pub clients_per_round: usize,
    pub n_adversarial: usize,
    pub n_poor: usize,
    pub poor_skew: f64,

    pub attack: Option<AttackKind>,
    pub boost: BoostPolicy,
    /// Boosting adversaries of one round share a single `n/η` factor
    /// instead of each applying it in full.
    pub boost_split: bool,
    pub random_scale: f64,
    pub backdoor_fraction: f64,
    pub pattern_kind: PatternKind,
    pub pattern_size: usize,
    /// `None` tucks the pattern into the bottom-right corner.
    pub pattern_position: Option<(usize, usize)>,
    pub pattern_intensity: f64,
    pub target_label: usize,

    pub defense: Defense,
    pub clip_norm: f64,
    pub noise_sigma: f64,
    /// `None`: a quarter of the participants, rounded up.
    pub rlr_theta: Option<usize>,
    pub trim: f64,
    /// `None`: 20% of the participants, rounded up.
    pub n_select: Option<usize>,
    /// `None`: expected adversaries per round, rounded up.
    pub n_byz: Option<usize>,

    pub rounds: usize,
    /// Unreported honest FedAvg rounds that train the starting global model.
    pub warmup_rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub server_lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,

    pub lle: LleConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth {
                classes: 4,
                height: 4,
                width: 5,
                per_class: 500,
                test_per_class: 250,
                spread: 0.15,
            },
            validation_fraction: 0.2,
            n_clients: 50,
            clients_per_round: 10,
            n_adversarial: 0,
            n_poor: 0,
            poor_skew: 0.8,
            attack: None,
            boost: BoostPolicy::Backdoor,
            boost_split: false,
            random_scale: 1.0,
            backdoor_fraction: 0.5,
            pattern_kind: PatternKind::Cross,
            pattern_size: 3,
            pattern_position: None,
            pattern_intensity: 1.0,
            target_label: 0,
            defense: Defense::Rab2Def,
            clip_norm: 3.0,
            noise_sigma: 0.025,
            rlr_theta: None,
            trim: 0.15,
            n_select: None,
            n_byz: None,
            rounds: 20,
            warmup_rounds: 0,
            local_epochs: 1,
            lr: 0.1,
            batch_size: 16,
            server_lr: 1.0,
            hidden: vec![16],
            activation: Activation::Relu,
            lle: LleConfig::default(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        reason: format!("`{key}`: cannot parse `{value}`"),
    })
}

fn parse_enum<T: FromStr<Err = Error>>(value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Config {
        line,
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse(key, v.trim(), line))
        .collect()
}

fn parse_paths(value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

fn parse_optional<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value, line).map(Some)
    }
}

/// Raw dataset keys, resolved into a [`DataSource`] once every line is read.
#[derive(Default)]
struct SourceKeys {
    kind: Option<String>,
    synth: [Option<f64>; 6],
    idx: [Option<PathBuf>; 4],
    cifar_train: Vec<PathBuf>,
    cifar_test: Vec<PathBuf>,
}

const SYNTH_KEYS: [&str; 6] = [
    "synth_classes",
    "synth_height",
    "synth_width",
    "synth_per_class",
    "synth_test_per_class",
    "synth_spread",
];
const IDX_KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Relative dataset paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.source {
            DataSource::Synth { .. } => {}
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DataSource::Cifar { train, test } => {
                train.iter_mut().chain(test.iter_mut()).for_each(fix);
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        let mut src = SourceKeys::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(key, value, line, &mut src)?;
        }
        cfg.source = src.resolve(cfg.source)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize, src: &mut SourceKeys) -> Result<()> {
        if let Some(k) = SYNTH_KEYS.iter().position(|&s| s == key) {
            src.synth[k] = Some(parse(key, value, line)?);
            return Ok(());
        }
        if let Some(k) = IDX_KEYS.iter().position(|&s| s == key) {
            src.idx[k] = Some(PathBuf::from(value));
            return Ok(());
        }
        match key {
            "dataset" => src.kind = Some(value.to_string()),
            "cifar_train" => src.cifar_train = parse_paths(value),
            "cifar_test" => src.cifar_test = parse_paths(value),
            "validation_fraction" => self.validation_fraction = parse(key, value, line)?,
            "n_clients" => self.n_clients = parse(key, value, line)?,
            "clients_per_round" => self.clients_per_round = parse(key, value, line)?,
            "n_adversarial" => self.n_adversarial = parse(key, value, line)?,
            "n_poor" => self.n_poor = parse(key, value, line)?,
            "poor_skew" => self.poor_skew = parse(key, value, line)?,
            "attack" => {
                self.attack = match value {
                    "none" => None,
                    v => Some(parse_enum(v, line)?),
                }
            }
            "boost" => self.boost = parse_enum(value, line)?,
            "boost_split" => self.boost_split = parse(key, value, line)?,
            "random_scale" => self.random_scale = parse(key, value, line)?,
            "backdoor_fraction" => self.backdoor_fraction = parse(key, value, line)?,
            "pattern_kind" => self.pattern_kind = parse_enum(value, line)?,
            "pattern_size" => self.pattern_size = parse(key, value, line)?,
            "pattern_position" => {
                self.pattern_position = if value == "auto" {
                    None
                } else {
                    match parse_list(key, value, line)?.as_slice() {
                        &[r, c] => Some((r, c)),
                        _ => {
                            return Err(Error::Config {
                                line,
                                reason: "`pattern_position` takes `row,col` or `auto`".into(),
                            })
                        }
                    }
                }
            }
            "pattern_intensity" => self.pattern_intensity = parse(key, value, line)?,
            "target_label" => self.target_label = parse(key, value, line)?,
            "defense" => self.defense = parse_enum(value, line)?,
            "clip_norm" => self.clip_norm = parse(key, value, line)?,
            "noise_sigma" => self.noise_sigma = parse(key, value, line)?,
            "rlr_theta" => self.rlr_theta = parse_optional(key, value, line)?,
            "trim" => self.trim = parse(key, value, line)?,
            "n_select" => self.n_select = parse_optional(key, value, line)?,
            "n_byz" => self.n_byz = parse_optional(key, value, line)?,
            "rounds" => self.rounds = parse(key, value, line)?,
            "warmup_rounds" => self.warmup_rounds = parse(key, value, line)?,
            "local_epochs" => self.local_epochs = parse(key, value, line)?,
            "lr" => self.lr = parse(key, value, line)?,
            "batch_size" => self.batch_size = parse(key, value, line)?,
            "server_lr" => self.server_lr = parse(key, value, line)?,
            "hidden" => self.hidden = parse_list(key, value, line)?,
            "activation" => self.activation = parse_enum(value, line)?,
            "lle_mode" => self.lle.mode = parse_enum::<LleMode>(value, line)?,
            "lle_instances" => self.lle.max_instances = parse(key, value, line)?,
            "lle_perturb" => self.lle.n_perturb = parse(key, value, line)?,
            "lle_radius" => self.lle.radius = parse(key, value, line)?,
            "lle_ridge" => self.lle.ridge = parse(key, value, line)?,
            "seed" => self.seed = parse(key, value, line)?,
            other => {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| Err(Error::invalid(name, reason));
        if self.n_clients == 0 {
            return bad("n_clients", "must be ≥ 1");
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return bad("clients_per_round", "must lie in 1..=n_clients");
        }
        if self.n_adversarial + self.n_poor > self.n_clients {
            return bad("n_adversarial", "n_adversarial + n_poor exceeds n_clients");
        }
        if self.attack.is_none() && self.n_adversarial > 0 {
            return bad("attack", "adversarial clients need an attack");
        }
        if !(0.0..=1.0).contains(&self.poor_skew) {
            return bad("poor_skew", "must lie in [0, 1]");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction", "must lie in (0, 1)");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("server_lr", self.server_lr),
            ("random_scale", self.random_scale),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be ≥ 0");
        }
        if !(self.backdoor_fraction > 0.0 && self.backdoor_fraction <= 1.0) {
            return bad("backdoor_fraction", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.pattern_intensity) {
            return bad("pattern_intensity", "must lie in [0, 1]");
        }
        if !(0.0..0.5).contains(&self.trim) {
            return bad("trim", "must lie in [0, 0.5)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be ≥ 1");
        }
        if let DataSource::Synth {
            classes,
            height,
            width,
            per_class,
            test_per_class,
            spread,
        } = self.source
        {
            if classes < 2 || height == 0 || width == 0 || per_class == 0 || test_per_class == 0 {
                return bad("synth", "classes ≥ 2 and non-zero sizes required");
            }
            if !(spread >= 0.0 && spread.is_finite()) {
                return bad("synth_spread", "must be ≥ 0");
            }
        }
        Ok(())
    }

    /// Renders the configuration back into the file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let join = |v: &[usize]| {
            v.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let paths = |v: &[PathBuf]| {
            v.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let auto = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        match &self.source {
            DataSource::Synth {
                classes,
                height,
                width,
                per_class,
                test_per_class,
                spread,
            } => {
                put("dataset", "synth".into());
                put("synth_classes", classes.to_string());
                put("synth_height", height.to_string());
                put("synth_width", width.to_string());
                put("synth_per_class", per_class.to_string());
                put("synth_test_per_class", test_per_class.to_string());
                put("synth_spread", spread.to_string());
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                put("dataset", "idx".into());
                put("train_images", train_images.display().to_string());
                put("train_labels", train_labels.display().to_string());
                put("test_images", test_images.display().to_string());
                put("test_labels", test_labels.display().to_string());
            }
            DataSource::Cifar { train, test } => {
                put("dataset", "cifar".into());
                put("cifar_train", paths(train));
                put("cifar_test", paths(test));
            }
        }
        put("validation_fraction", self.validation_fraction.to_string());
        put("n_clients", self.n_clients.to_string());
        put("clients_per_round", self.clients_per_round.to_string());
        put("n_adversarial", self.n_adversarial.to_string());
        put("n_poor", self.n_poor.to_string());
        put("poor_skew", self.poor_skew.to_string());
        put(
            "attack",
            self.attack.map_or("none".to_string(), |a| a.to_string()),
        );
        put("boost", self.boost.to_string());
        put("boost_split", self.boost_split.to_string());
        put("random_scale", self.random_scale.to_string());
        put("backdoor_fraction", self.backdoor_fraction.to_string());
        put("pattern_kind", self.pattern_kind.to_string());
        put("pattern_size", self.pattern_size.to_string());
        put(
            "pattern_position",
            self.pattern_position
                .map_or("auto".to_string(), |(r, c)| format!("{r},{c}")),
        );
        put("pattern_intensity", self.pattern_intensity.to_string());
        put("target_label", self.target_label.to_string());
        put("defense", self.defense.to_string());
        put("clip_norm", self.clip_norm.to_string());
        put("noise_sigma", self.noise_sigma.to_string());
        put("rlr_theta", auto(self.rlr_theta));
        put("trim", self.trim.to_string());
        put("n_select", auto(self.n_select));
        put("n_byz", auto(self.n_byz));
        put("rounds", self.rounds.to_string());
        put("warmup_rounds", self.warmup_rounds.to_string());
        put("local_epochs", self.local_epochs.to_string());
        put("lr", self.lr.to_string());
        put("batch_size", self.batch_size.to_string());
        put("server_lr", self.server_lr.to_string());
        put("hidden", join(&self.hidden));
        put("activation", self.activation.to_string());
        put("lle_mode", self.lle.mode.to_string());
        put("lle_instances", self.lle.max_instances.to_string());
        put("lle_perturb", self.lle.n_perturb.to_string());
        put("lle_radius", self.lle.radius.to_string());
        put("lle_ridge", self.lle.ridge.to_string());
        put("seed", self.seed.to_string());
        out
    }
}

impl SourceKeys {
    fn resolve(self, default: DataSource) -> Result<DataSource> {
        let kind = self.kind.as_deref().unwrap_or("synth");
        let has_synth = self.synth.iter().any(Option::is_some);
        let has_idx = self.idx.iter().any(Option::is_some);
        let has_cifar = !self.cifar_train.is_empty() || !self.cifar_test.is_empty();
        let conflict = |what: &str| Error::Config {
            line: 0,
            reason: format!("{what} keys given for dataset `{kind}`"),
        };
        match kind {
            "synth" => {
                if has_idx || has_cifar {
                    return Err(conflict("file"));
                }
                let DataSource::Synth {
                    classes,
                    height,
                    width,
                    per_class,
                    test_per_class,
                    spread,
                } = default
                else {
                    unreachable!("default source is synthetic")
                };
                let [c, h, w, p, t, s] = self.synth;
                Ok(DataSource::Synth {
                    classes: c.map_or(classes, |v| v as usize),
                    height: h.map_or(height, |v| v as usize),
                    width: w.map_or(width, |v| v as usize),
                    per_class: p.map_or(per_class, |v| v as usize),
                    test_per_class: t.map_or(test_per_class, |v| v as usize),
                    spread: s.unwrap_or(spread),
                })
            }
            "idx" => {
                if has_synth || has_cifar {
                    return Err(conflict("synth/cifar"));
                }
                let [a, b, c, d] = self.idx;
                match (a, b, c, d) {
                    (Some(a), Some(b), Some(c), Some(d)) => Ok(DataSource::Idx {
                        train_images: a,
                        train_labels: b,
                        test_images: c,
                        test_labels: d,
                    }),
                    _ => Err(Error::Config {
                        line: 0,
                        reason: "dataset `idx` needs train/test image and label paths".into(),
                    }),
                }
            }
            "cifar" => {
                if has_synth || has_idx {
                    return Err(conflict("synth/idx"));
                }
                if self.cifar_train.is_empty() || self.cifar_test.is_empty() {
                    return Err(Error::Config {
                        line: 0,
                        reason: "dataset `cifar` needs `cifar_train` and `cifar_test`".into(),
                    });
                }
                Ok(DataSource::Cifar {
                    train: self.cifar_train,
                    test: self.cifar_test,
                })
            }
            other => Err(Error::Config {
                line: 0,
                reason: format!("unknown dataset `{other}`"),
            }),
        }
    }
}
