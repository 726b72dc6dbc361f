//! Experiment orchestration: setup, rounds of learning, metrics and report
//! files.

mod config;
mod metrics;
mod report;

use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;

pub use config::{BoostPolicy, DataSource, Defense, ExperimentConfig};
pub use metrics::{evaluate, evaluate_backdoor, fairness_summary, DiscardStats, FairnessSummary};
pub use report::{emit_reports, read_fairness, write_explanations};

use crate::adversary::{self, BackdoorPattern};
use crate::aggregation::{self, QuantifiedAggregate};
use crate::data::{
    self, AttackKind, ClientProfile, Dataset, FederatedDataset, ImageShape, Role,
};
use crate::model::{self, ModelLayout, ParamVector, TrainConfig};
use crate::rng::derive_seed;
use crate::xai::LleConfig;
use crate::{Error, Result};

// Seed stream tags.
const TAG_TRAIN_DATA: u64 = 1;
const TAG_TEST_DATA: u64 = 2;
const TAG_SPLIT: u64 = 3;
const TAG_PARTITION: u64 = 4;
const TAG_ROLES: u64 = 5;
const TAG_POISON: u64 = 6;
const TAG_INIT: u64 = 7;
const TAG_SELECT: u64 = 8;
const TAG_LOCAL: u64 = 9;
const TAG_RANDOM: u64 = 10;
const TAG_LLE: u64 = 11;
const TAG_NOISE: u64 = 12;
const TAG_WARMUP: u64 = 13;

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct Submission {
    pub client: usize,
    /// Locally trained (or substituted) model before any boosting.
    pub local: ParamVector,
    /// Model the server receives: `G + Δ`, with `Δ` boosted when the policy
    /// says so.
    pub submitted: ParamVector,
    /// Local training diverged; `local` is the round's starting global model.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Participating client ids, ascending.
    pub participants: Vec<usize>,
    /// Aggregation weight per participant. Defenses without explicit client
    /// weights report `1/n` for every aggregated client.
    pub weights: Vec<f64>,
    /// Ordering scores per participant (quantifier defenses only).
    pub scores: Option<Vec<f64>>,
    pub x_values: Option<Vec<f64>>,
    /// Discarded client ids, ascending.
    pub discarded: Vec<usize>,
    pub discarded_adversarial: usize,
    pub discarded_poor: usize,
    pub discarded_regular: usize,
    pub accuracy: f64,
    pub backdoor_accuracy: Option<f64>,
    pub fallback: bool,
    pub diverged: Vec<usize>,
    /// Accuracy credited to each participating poor client: its local model
    /// when discarded, the new global model otherwise.
    pub poor_accuracy: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub global: ParamVector,
    pub report: RoundReport,
    pub submissions: Vec<Submission>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub final_params: ParamVector,
    pub reports: Vec<RoundReport>,
    pub summary: FairnessSummary,
}

/// Everything fixed for the lifetime of an experiment.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ExperimentConfig,
    layout: Arc<ModelLayout>,
    federation: FederatedDataset,
    /// Per-client training data after poisoning.
    training: Vec<Dataset>,
    pattern: Option<BackdoorPattern>,
    backdoor_test: Option<Dataset>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let first = parts.first().ok_or(Error::EmptyInput("dataset files"))?;
    let (classes, shape) = (first.classes(), first.shape());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for p in &parts {
        if p.shape() != shape {
            return Err(Error::format("CIFAR", "files disagree on image shape"));
        }
        features.extend_from_slice(p.features());
        labels.extend_from_slice(p.labels());
    }
    Dataset::new(features, labels, classes, shape)
}

fn load_source(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.source {
        DataSource::Synth {
            classes,
            height,
            width,
            per_class,
            test_per_class,
            spread,
        } => {
            let shape = ImageShape::new(*height, *width, 1);
            let train = data::synth_images(
                *classes,
                shape,
                *per_class,
                *spread,
                derive_seed(cfg.seed, &[TAG_TRAIN_DATA]),
            )?;
            let test = data::synth_images(
                *classes,
                shape,
                *test_per_class,
                *spread,
                derive_seed(cfg.seed, &[TAG_TEST_DATA]),
            )?;
            Ok((train, test))
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = data::load_idx(&read(train_images)?, &read(train_labels)?)?;
            let test = data::load_idx(&read(test_images)?, &read(test_labels)?)?;
            let classes = train.classes().max(test.classes());
            Ok((train.with_classes(classes)?, test.with_classes(classes)?))
        }
        DataSource::Cifar { train, test } => {
            let load = |paths: &[std::path::PathBuf]| -> Result<Dataset> {
                concat(
                    paths
                        .iter()
                        .map(|p| data::load_cifar_bin(&read(p)?))
                        .collect::<Result<_>>()?,
                )
            };
            Ok((load(train)?, load(test)?))
        }
    }
}

impl Simulation {
    /// Loads data, partitions it, fixes client roles and poisons adversarial
    /// shards.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let (train, test) = load_source(&config)?;
        let (server_validation, server_test) =
            data::validation_split(&test, config.validation_fraction, derive_seed(seed, &[TAG_SPLIT]))?;
        let mut clients = data::partition(
            &train,
            config.n_clients,
            config.n_poor,
            config.poor_skew,
            derive_seed(seed, &[TAG_PARTITION]),
        )?;

        if let Some(kind) = config.attack {
            let regular: Vec<usize> = clients
                .iter()
                .filter(|(_, p)| p.role == Role::Regular)
                .map(|(_, p)| p.id)
                .collect();
            let mut rng = crate::rng::derived_rng(seed, &[TAG_ROLES]);
            for i in index::sample(&mut rng, regular.len(), config.n_adversarial) {
                clients[regular[i]].1.role = Role::Adversarial(kind);
            }
        }

        let classes = train.classes();
        let shape = train.shape();
        let pattern = match config.attack {
            Some(AttackKind::Backdoor) => {
                if config.target_label >= classes {
                    return Err(Error::invalid("target_label", "outside the class range"));
                }
                let mut p = BackdoorPattern::bottom_right(
                    config.pattern_kind,
                    config.pattern_size,
                    shape,
                    config.pattern_intensity,
                    config.target_label,
                )?;
                if let Some(pos) = config.pattern_position {
                    p.position = pos;
                    p.footprint(shape)?;
                }
                Some(p)
            }
            _ => None,
        };

        let training = clients
            .iter()
            .map(|(d, p)| {
                let s = derive_seed(seed, &[TAG_POISON, p.id as u64]);
                match p.attack() {
                    Some(AttackKind::LabelFlip) => adversary::flip_labels(d, s),
                    Some(AttackKind::Backdoor) => adversary::inject_backdoor(
                        d,
                        pattern.as_ref().expect("backdoor pattern built above"),
                        config.backdoor_fraction,
                        s,
                    ),
                    _ => Ok(d.clone()),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let backdoor_test = pattern
            .as_ref()
            .map(|p| metrics::poison_test_set(&server_test, p))
            .transpose()?;

        let mut sizes = vec![train.dims()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(classes);
        let layout = Arc::new(ModelLayout::new(sizes, config.activation)?);

        Ok(Self {
            config,
            layout,
            federation: FederatedDataset {
                clients,
                server_validation,
                server_test,
            },
            training,
            pattern,
            backdoor_test,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    pub fn federation(&self) -> &FederatedDataset {
        &self.federation
    }

    pub fn pattern(&self) -> Option<&BackdoorPattern> {
        self.pattern.as_ref()
    }

    pub fn profiles(&self) -> Vec<ClientProfile> {
        self.federation.clients.iter().map(|(_, p)| *p).collect()
    }

    pub fn initial_params(&self) -> ParamVector {
        ParamVector::init(self.layout.clone(), derive_seed(self.config.seed, &[TAG_INIT]))
    }

    /// Clients taking part in `round`, ascending.
    pub fn participants(&self, round: usize) -> Vec<usize> {
        self.participants_tagged(round as u64)
    }

    fn participants_tagged(&self, tag: u64) -> Vec<usize> {
        let n = self.config.n_clients;
        let k = self.config.clients_per_round;
        if k == n {
            return (0..n).collect();
        }
        let mut rng = crate::rng::derived_rng(self.config.seed, &[TAG_SELECT, tag]);
        let mut picked = index::sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        picked
    }

    /// LLE settings for `round`.
    pub fn lle_config(&self, round: usize) -> LleConfig {
        LleConfig {
            seed: derive_seed(self.config.seed, &[TAG_LLE, round as u64]),
            ..self.config.lle
        }
    }

    fn local_update(
        &self,
        global: &ParamVector,
        client: usize,
        round: usize,
        boosters: usize,
    ) -> Result<Submission> {
        let cfg = &self.config;
        let attack = self.federation.clients[client].1.attack();
        let n = self.config.clients_per_round;
        let seed = derive_seed(cfg.seed, &[TAG_LOCAL, round as u64, client as u64]);
        let (local, diverged) = if attack == Some(AttackKind::RandomWeights) {
            let s = derive_seed(cfg.seed, &[TAG_RANDOM, round as u64, client as u64]);
            (adversary::random_weights_update(self.layout.clone(), cfg.random_scale, s)?, false)
        } else {
            let train = TrainConfig {
                epochs: cfg.local_epochs,
                lr: cfg.lr,
                batch_size: cfg.batch_size,
            };
            match model::local_train(global, &self.training[client].batch(), train, seed) {
                Ok(p) => (p, false),
                Err(Error::Divergence { .. }) => (global.clone(), true),
                Err(e) => return Err(e),
            }
        };
        let submitted = match attack {
            Some(kind) if cfg.boost.applies_to(kind) => {
                let boosted = adversary::boost_update(&local, global, n, cfg.server_lr)?;
                let share = if cfg.boost_split { boosters as f64 } else { 1.0 };
                global.add(&boosted.scale(1.0 / share))?
            }
            _ => local.clone(),
        };
        Ok(Submission {
            client,
            local,
            submitted,
            diverged,
        })
    }

    fn boosts(&self, client: usize) -> bool {
        self.federation.clients[client]
            .1
            .attack()
            .is_some_and(|kind| self.config.boost.applies_to(kind))
    }

    /// Client submissions for `round`, in participant order.
    pub fn submissions(&self, global: &ParamVector, round: usize) -> Result<Vec<Submission>> {
        let participants = self.participants(round);
        let boosters = participants.iter().filter(|&&c| self.boosts(c)).count();
        participants
            .par_iter()
            .map(|&c| {
                self.local_update(global, c, round, boosters).map_err(|e| Error::Client {
                    client: c,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    fn defaults(&self, n: usize) -> (usize, usize, usize) {
        let cfg = &self.config;
        let expected = (cfg.n_adversarial * n).div_ceil(cfg.n_clients);
        let n_byz = cfg.n_byz.unwrap_or(expected.min(n.saturating_sub(3) / 2));
        let n_select = cfg.n_select.unwrap_or((n * 2).div_ceil(10).max(1));
        let theta = cfg.rlr_theta.unwrap_or(n.div_ceil(4));
        (n_byz, n_select, theta)
    }

    /// One round: local training, defense, evaluation.
    pub fn run_round(&self, global: &ParamVector, round: usize) -> Result<RoundOutcome> {
        let cfg = &self.config;
        let submissions = self.submissions(global, round)?;
        let n = submissions.len();
        let participants: Vec<usize> = submissions.iter().map(|s| s.client).collect();
        let models: Vec<ParamVector> = submissions.iter().map(|s| s.submitted.clone()).collect();
        let deltas = || -> Result<Vec<ParamVector>> {
            models.iter().map(|m| m.sub(global)).collect()
        };
        let step = |agg: ParamVector| global.add(&agg.scale(cfg.server_lr));
        let (n_byz, n_select, theta) = self.defaults(n);
        let uniform = vec![1.0 / n as f64; n];

        let mut scores = None;
        let mut x_values = None;
        let mut fallback = false;
        let (next, weights) = match cfg.defense {
            Defense::FedAvg => (aggregation::fedavg(global, &deltas()?, cfg.server_lr)?, uniform),
            Defense::Median => (step(aggregation::coordinate_median(&deltas()?)?)?, uniform),
            Defense::TrimmedMean => (step(aggregation::trimmed_mean(&deltas()?, cfg.trim)?)?, uniform),
            Defense::MultiKrum | Defense::Bulyan => {
                let d = deltas()?;
                let sel = if cfg.defense == Defense::MultiKrum {
                    aggregation::multikrum(&d, n_select, n_byz)?
                } else {
                    aggregation::bulyan(&d, n_byz, cfg.trim)?
                };
                let mut w = vec![0.0; n];
                let share = 1.0 / sel.selected.len() as f64;
                sel.selected.iter().for_each(|&i| w[i] = share);
                (step(sel.aggregate)?, w)
            }
            Defense::NormClip => (
                aggregation::norm_clip(global, &deltas()?, cfg.clip_norm, cfg.server_lr)?,
                uniform,
            ),
            Defense::Wdp => (
                aggregation::wdp(
                    global,
                    &deltas()?,
                    cfg.clip_norm,
                    cfg.noise_sigma,
                    cfg.server_lr,
                    derive_seed(cfg.seed, &[TAG_NOISE, round as u64]),
                )?,
                uniform,
            ),
            Defense::Rlr => (aggregation::rlr(global, &deltas()?, theta, cfg.server_lr)?, uniform),
            Defense::Ddaba | Defense::Rab2Def => {
                let QuantifiedAggregate {
                    aggregate,
                    client_weights,
                    ordering,
                    fallback: fb,
                    ..
                } = if cfg.defense == Defense::Ddaba {
                    aggregation::ddaba_aggregate(&models, &self.federation.server_validation)?
                } else {
                    aggregation::rab2def_aggregate(
                        &models,
                        &self.federation.server_validation,
                        &self.lle_config(round),
                    )?
                };
                scores = Some(ordering.scores);
                x_values = Some(ordering.x_values);
                fallback = fb;
                (aggregate, client_weights)
            }
        };

        let discarded: Vec<usize> = participants
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w == 0.0)
            .map(|(&c, _)| c)
            .collect();
        let role_of = |c: usize| self.federation.clients[c].1.role;
        let count = |pred: fn(Role) -> bool| discarded.iter().filter(|&&c| pred(role_of(c))).count();

        let test = &self.federation.server_test;
        let accuracy = evaluate(&next, test)?;
        let backdoor_accuracy = self
            .backdoor_test
            .as_ref()
            .map(|d| evaluate(&next, d))
            .transpose()?;
        let poor_accuracy = submissions
            .iter()
            .filter(|s| role_of(s.client) == Role::Poor)
            .map(|s| {
                let acc = if discarded.contains(&s.client) {
                    evaluate(&s.local, test)?
                } else {
                    accuracy
                };
                Ok((s.client, acc))
            })
            .collect::<Result<Vec<_>>>()?;

        let report = RoundReport {
            round,
            weights,
            scores,
            x_values,
            discarded_adversarial: count(|r| r.is_adversarial()),
            discarded_poor: count(|r| r == Role::Poor),
            discarded_regular: count(|r| r == Role::Regular),
            discarded,
            accuracy,
            backdoor_accuracy,
            fallback,
            diverged: submissions.iter().filter(|s| s.diverged).map(|s| s.client).collect(),
            poor_accuracy,
            participants,
        };
        Ok(RoundOutcome {
            global: next,
            report,
            submissions,
        })
    }

    /// Global model at the start of round 0: the initial parameters after
    /// `warmup_rounds` of FedAvg in which every client trains honestly on its
    /// unpoisoned shard.
    pub fn warm_start(&self) -> Result<ParamVector> {
        let cfg = &self.config;
        let mut global = self.initial_params();
        let train = TrainConfig {
            epochs: cfg.local_epochs,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
        };
        for w in 0..cfg.warmup_rounds {
            let tag = u64::MAX - w as u64;
            let deltas = self
                .participants_tagged(tag)
                .par_iter()
                .map(|&c| {
                    let seed = derive_seed(cfg.seed, &[TAG_WARMUP, w as u64, c as u64]);
                    let local = match model::local_train(&global, &self.federation.clients[c].0.batch(), train, seed) {
                        Ok(p) => p,
                        Err(Error::Divergence { .. }) => global.clone(),
                        Err(e) => return Err(e),
                    };
                    local.sub(&global)
                })
                .collect::<Result<Vec<_>>>()?;
            global = aggregation::fedavg(&global, &deltas, cfg.server_lr)?;
        }
        Ok(global)
    }

    /// Runs every round, handing each outcome to `observe` before moving on.
    pub fn run_with(
        &self,
        mut observe: impl FnMut(&RoundOutcome) -> Result<()>,
    ) -> Result<ExperimentOutcome> {
        let mut global = self.warm_start()?;
        let mut reports = Vec::with_capacity(self.config.rounds);
        for round in 0..self.config.rounds {
            let outcome = self.run_round(&global, round)?;
            observe(&outcome)?;
            global = outcome.global;
            reports.push(outcome.report);
        }
        let summary = fairness_summary(&reports);
        Ok(ExperimentOutcome {
            final_params: global,
            reports,
            summary,
        })
    }

    pub fn run(&self) -> Result<ExperimentOutcome> {
        self.run_with(|_| Ok(()))
    }
}

/// One round on an existing simulation.
pub fn run_round(sim: &Simulation, global: &ParamVector, round: usize) -> Result<(ParamVector, RoundReport)> {
    let outcome = sim.run_round(global, round)?;
    Ok((outcome.global, outcome.report))
}

pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentOutcome> {
    Simulation::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_clients: 6,
            clients_per_round: 4,
            rounds: 3,
            source: DataSource::Synth {
                classes: 3,
                height: 3,
                width: 4,
                per_class: 40,
                test_per_class: 30,
                spread: 0.1,
            },
            hidden: vec![8],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_rounds_returns_initial_model() {
        let cfg = ExperimentConfig {
            rounds: 0,
            ..small()
        };
        let sim = Simulation::new(cfg).unwrap();
        let out = sim.run().unwrap();
        assert!(out.reports.is_empty());
        assert_eq!(out.final_params, sim.initial_params());
        let warm = Simulation::new(ExperimentConfig {
            rounds: 0,
            warmup_rounds: 2,
            ..small()
        })
        .unwrap();
        assert_ne!(warm.run().unwrap().final_params, warm.initial_params());
    }

    #[test]
    fn participants_are_seeded_and_sorted() {
        let sim = Simulation::new(small()).unwrap();
        let p = sim.participants(2);
        assert_eq!(p.len(), 4);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p, sim.participants(2));
    }

    #[test]
    fn roles_are_fixed() {
        let cfg = ExperimentConfig {
            attack: Some(AttackKind::LabelFlip),
            n_adversarial: 2,
            n_poor: 1,
            ..small()
        };
        let sim = Simulation::new(cfg).unwrap();
        let roles: Vec<Role> = sim.profiles().iter().map(|p| p.role).collect();
        assert_eq!(roles.iter().filter(|r| r.is_adversarial()).count(), 2);
        assert_eq!(roles.iter().filter(|&&r| r == Role::Poor).count(), 1);
    }

    #[test]
    fn bookkeeping_is_consistent() {
        for defense in [Defense::Rab2Def, Defense::Ddaba, Defense::MultiKrum, Defense::FedAvg] {
            let cfg = ExperimentConfig {
                attack: Some(AttackKind::RandomWeights),
                n_adversarial: 1,
                n_poor: 1,
                defense,
                ..small()
            };
            let out = run_experiment(cfg).unwrap();
            for r in &out.reports {
                let zero = r.weights.iter().filter(|&&w| w == 0.0).count();
                assert_eq!(
                    r.discarded_adversarial + r.discarded_poor + r.discarded_regular,
                    zero
                );
                assert!((0.0..=1.0).contains(&r.accuracy));
                assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_submissions_leave_that_model() {
        // Every client holds the same shard: with zero local epochs every
        // submission equals the global model.
        let cfg = ExperimentConfig {
            local_epochs: 0,
            rounds: 1,
            ..small()
        };
        let sim = Simulation::new(cfg.clone()).unwrap();
        let g = sim.initial_params();
        for defense in [
            Defense::FedAvg,
            Defense::Median,
            Defense::TrimmedMean,
            Defense::MultiKrum,
            Defense::Bulyan,
            Defense::NormClip,
            Defense::Rlr,
            Defense::Ddaba,
            Defense::Rab2Def,
        ] {
            let sim = Simulation::new(ExperimentConfig {
                defense,
                ..cfg.clone()
            })
            .unwrap();
            let (next, _) = run_round(&sim, &g, 0).unwrap();
            for (a, b) in next.values().iter().zip(g.values()) {
                assert!((a - b).abs() < 1e-12, "{defense}");
            }
        }
    }
}
