//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 1 to 4 run the desk scenario in `configs/desk.cfg` over three
//! seeds; the rest are randomized checks with fixed RNG seeds.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{
    fd_gradient, fd_jacobian, flat_layout, krum_oracle, median_oracle, relative_error, trimmed_oracle,
    vectors,
};
use flsim::adversary::boost_update;
use flsim::aggregation::{
    coordinate_median, fedavg, krum_scores, quantifier_params, quantifier_weights, trimmed_mean,
    OrderingResult,
};
use flsim::data::AttackKind;
use flsim::model::{self, Activation, Batch, ModelLayout, ParamVector};
use flsim::sim::{emit_reports, write_explanations, Defense, ExperimentConfig, Simulation};
use flsim::xai::LleMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DESK: &str = include_str!("../../../configs/desk.cfg");
const SEEDS: [u64; 3] = [0, 1, 2];
const N_ADVERSARIAL: usize = 5;

const BYZANTINE_DROP: f64 = 0.15;
const CHANCE_TOL: f64 = 0.05;
const DEFENSE_TOL: f64 = 0.03;
const BACKDOOR_HIT: f64 = 0.90;
const BACKDOOR_MISS: f64 = 0.05;
const ADV_DISCARD_MIN: f64 = 4.0;
const POOR_DISCARD_MAX: f64 = 0.5;
const POOR_GAIN_MIN: f64 = 0.05;
const SCENARIO_BUDGET: Duration = Duration::from_secs(300);

const SUM_TOL: f64 = 1e-9;
const KRUM_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-4;
const NORM_TOL: f64 = 1e-9;
const REPLACEMENT_TOL: f64 = 1e-9;

const QUANTIFIER_CASES: usize = 500;
const ORACLE_CASES: usize = 200;
const NUMERIC_CASES: usize = 100;
const REPLACEMENT_CASES: usize = 100;

struct Verdict {
    pass: bool,
    detail: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self {
            pass: true,
            detail: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.detail.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Attack {
    None,
    LabelFlip,
    RandomWeights,
    Backdoor,
}

impl Attack {
    const ATTACKED: [Attack; 3] = [Attack::LabelFlip, Attack::RandomWeights, Attack::Backdoor];

    fn kind(self) -> Option<AttackKind> {
        match self {
            Attack::None => None,
            Attack::LabelFlip => Some(AttackKind::LabelFlip),
            Attack::RandomWeights => Some(AttackKind::RandomWeights),
            Attack::Backdoor => Some(AttackKind::Backdoor),
        }
    }

    fn name(self) -> &'static str {
        self.kind().map_or("none", |k| match k {
            AttackKind::LabelFlip => "label_flip",
            AttackKind::RandomWeights => "random_weights",
            AttackKind::Backdoor => "backdoor",
        })
    }
}

struct Outcome {
    accuracy: f64,
    backdoor: f64,
    adv_discard: f64,
    poor_discard: f64,
    poor_accuracy: f64,
    elapsed: Duration,
}

type Key = (Attack, Defense, u64);

fn scenario(attack: Attack, defense: Defense, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(DESK).expect("desk config parses");
    cfg.attack = attack.kind();
    cfg.n_adversarial = if attack == Attack::None { 0 } else { N_ADVERSARIAL };
    // Five backdoor clients share one replacement budget; each applying the
    // full factor overshoots the global model fivefold.
    cfg.boost_split = attack == Attack::Backdoor;
    cfg.defense = defense;
    cfg.seed = seed;
    cfg
}

fn run_scenario(attack: Attack, defense: Defense, seed: u64) -> Outcome {
    let start = Instant::now();
    let sim = Simulation::new(scenario(attack, defense, seed)).expect("valid scenario");
    let out = sim.run().expect("scenario runs");
    let last = out.reports.last().expect("at least one round");
    Outcome {
        accuracy: last.accuracy,
        backdoor: last.backdoor_accuracy.unwrap_or(f64::NAN),
        adv_discard: out.summary.adversarial.mean,
        poor_discard: out.summary.poor.mean,
        poor_accuracy: out.summary.poor_mean_accuracy.unwrap_or(f64::NAN),
        elapsed: start.elapsed(),
    }
}

fn run_matrix() -> HashMap<Key, Outcome> {
    let mut jobs = Vec::new();
    for seed in SEEDS {
        for defense in [Defense::FedAvg, Defense::Rab2Def] {
            jobs.push((Attack::None, defense, seed));
        }
        for attack in Attack::ATTACKED {
            for defense in [Defense::FedAvg, Defense::Rab2Def, Defense::Ddaba] {
                jobs.push((attack, defense, seed));
            }
        }
    }
    let mut results = HashMap::new();
    for (i, &(attack, defense, seed)) in jobs.iter().enumerate() {
        let o = run_scenario(attack, defense, seed);
        eprintln!(
            "[{:>2}/{}] seed {seed} {:<14} {:<8} acc {:.4} bd {:.4} adv {:.2} poor {:.2} poor_acc {:.4} ({:.1}s)",
            i + 1,
            jobs.len(),
            attack.name(),
            defense.to_string(),
            o.accuracy,
            o.backdoor,
            o.adv_discard,
            o.poor_discard,
            o.poor_accuracy,
            o.elapsed.as_secs_f64()
        );
        results.insert((attack, defense, seed), o);
    }
    results
}

fn seed_mean(m: &HashMap<Key, Outcome>, attack: Attack, defense: Defense, f: impl Fn(&Outcome) -> f64) -> f64 {
    SEEDS.iter().map(|&s| f(&m[&(attack, defense, s)])).sum::<f64>() / SEEDS.len() as f64
}

fn byzantine(m: &HashMap<Key, Outcome>, classes: usize) -> Verdict {
    let mut v = Verdict::new();
    let chance = 1.0 / classes as f64;
    for seed in SEEDS {
        let clean_fed = m[&(Attack::None, Defense::FedAvg, seed)].accuracy;
        let clean_rab = m[&(Attack::None, Defense::Rab2Def, seed)].accuracy;
        let lf_fed = m[&(Attack::LabelFlip, Defense::FedAvg, seed)].accuracy;
        let lf_rab = m[&(Attack::LabelFlip, Defense::Rab2Def, seed)].accuracy;
        let rw_fed = m[&(Attack::RandomWeights, Defense::FedAvg, seed)].accuracy;
        let rw_rab = m[&(Attack::RandomWeights, Defense::Rab2Def, seed)].accuracy;
        v.check(
            clean_fed - lf_fed >= BYZANTINE_DROP,
            format!("seed {seed}: label_flip fedavg drop {:.4} >= {BYZANTINE_DROP}", clean_fed - lf_fed),
        );
        v.check(
            (lf_rab - clean_rab).abs() <= DEFENSE_TOL,
            format!("seed {seed}: label_flip rab2def gap {:.4} <= {DEFENSE_TOL}", (lf_rab - clean_rab).abs()),
        );
        v.check(
            (rw_fed - chance).abs() <= CHANCE_TOL,
            format!("seed {seed}: random_weights fedavg {rw_fed:.4} within {CHANCE_TOL} of chance {chance:.2}"),
        );
        v.check(
            (rw_rab - clean_rab).abs() <= DEFENSE_TOL,
            format!("seed {seed}: random_weights rab2def gap {:.4} <= {DEFENSE_TOL}", (rw_rab - clean_rab).abs()),
        );
    }
    let slowest = m.values().map(|o| o.elapsed).max().unwrap_or_default();
    v.check(
        slowest <= SCENARIO_BUDGET,
        format!("slowest scenario {:.1}s <= {}s", slowest.as_secs_f64(), SCENARIO_BUDGET.as_secs()),
    );
    v
}

fn backdoor(m: &HashMap<Key, Outcome>) -> Verdict {
    let mut v = Verdict::new();
    for seed in SEEDS {
        let clean_fed = m[&(Attack::None, Defense::FedAvg, seed)].accuracy;
        let clean_rab = m[&(Attack::None, Defense::Rab2Def, seed)].accuracy;
        let fed = &m[&(Attack::Backdoor, Defense::FedAvg, seed)];
        let rab = &m[&(Attack::Backdoor, Defense::Rab2Def, seed)];
        v.check(
            fed.backdoor >= BACKDOOR_HIT,
            format!("seed {seed}: fedavg backdoor accuracy {:.4} >= {BACKDOOR_HIT}", fed.backdoor),
        );
        v.check(
            (fed.accuracy - clean_fed).abs() <= DEFENSE_TOL,
            format!("seed {seed}: fedavg accuracy gap {:.4} <= {DEFENSE_TOL}", (fed.accuracy - clean_fed).abs()),
        );
        v.check(
            rab.backdoor <= BACKDOOR_MISS,
            format!("seed {seed}: rab2def backdoor accuracy {:.4} <= {BACKDOOR_MISS}", rab.backdoor),
        );
        v.check(
            (rab.accuracy - clean_rab).abs() <= DEFENSE_TOL,
            format!("seed {seed}: rab2def accuracy gap {:.4} <= {DEFENSE_TOL}", (rab.accuracy - clean_rab).abs()),
        );
    }
    v
}

fn fairness(m: &HashMap<Key, Outcome>) -> Verdict {
    let mut v = Verdict::new();
    for attack in Attack::ATTACKED {
        let adv = seed_mean(m, attack, Defense::Rab2Def, |o| o.adv_discard);
        let poor = seed_mean(m, attack, Defense::Rab2Def, |o| o.poor_discard);
        v.check(
            adv >= ADV_DISCARD_MIN,
            format!("{}: rab2def mean adversarial discard {adv:.2} >= {ADV_DISCARD_MIN}", attack.name()),
        );
        v.check(
            poor <= POOR_DISCARD_MAX,
            format!("{}: rab2def mean poor discard {poor:.2} <= {POOR_DISCARD_MAX}", attack.name()),
        );
    }
    let rab = seed_mean(m, Attack::LabelFlip, Defense::Rab2Def, |o| o.poor_discard);
    let dd = seed_mean(m, Attack::LabelFlip, Defense::Ddaba, |o| o.poor_discard);
    v.check(dd > rab, format!("label_flip: ddaba poor discard {dd:.2} > rab2def {rab:.2}"));
    v
}

fn poor_benefit(m: &HashMap<Key, Outcome>) -> Verdict {
    let mut v = Verdict::new();
    for attack in Attack::ATTACKED {
        let per_seed: Vec<String> = SEEDS
            .iter()
            .map(|&s| {
                let gap = m[&(attack, Defense::Rab2Def, s)].poor_accuracy - m[&(attack, Defense::Ddaba, s)].poor_accuracy;
                format!("{gap:+.4}")
            })
            .collect();
        let gap = seed_mean(m, attack, Defense::Rab2Def, |o| o.poor_accuracy)
            - seed_mean(m, attack, Defense::Ddaba, |o| o.poor_accuracy);
        v.check(
            gap >= POOR_GAIN_MIN,
            format!(
                "{}: mean poor accuracy gain {gap:.4} >= {POOR_GAIN_MIN} (per seed {})",
                attack.name(),
                per_seed.join(" ")
            ),
        );
    }
    v
}

fn random_scores(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(2..=60);
    let grid = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            if grid {
                rng.random_range(0..5) as f64 / 4.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect()
}

fn quantifier_suite() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut checked, mut degenerate, mut bad) = (0, 0, 0);
    while checked < QUANTIFIER_CASES {
        let scores = random_scores(&mut rng);
        let n = scores.len();
        let o = OrderingResult::from_scores(scores).expect("finite scores");
        if o.is_degenerate() {
            degenerate += 1;
            continue;
        }
        checked += 1;
        let p = quantifier_params(&o, n).expect("params");
        let w = quantifier_weights(&p, n).expect("weights").weights;
        let top = (p.b * n as f64).round() as usize;
        let kept = (p.c * n as f64).round() as usize;
        let ok = w.iter().all(|&x| x >= 0.0)
            && (w.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL
            && top >= 1
            && top <= kept
            && kept <= n
            && w[kept..].iter().all(|&x| x == 0.0)
            && w[..top].iter().all(|&x| x == w[0])
            && w[top..kept].iter().all(|&x| x == w[top])
            && (kept == top || w[0] == 2.0 * w[top]);
        bad += usize::from(!ok);
    }
    v.check(
        bad == 0,
        format!("{checked} orderings ({degenerate} degenerate, uniform), {bad} violate the weight invariants"),
    );

    // Arithmetic oracle: Top share y_b spread over b·n clients, Rest share
    // 1 − y_b over (c − b)·n clients.
    let (b, c, y_b, n) = (0.3, 0.8, 6.0 / 11.0, 10usize);
    let top = 3;
    let rest = 5;
    let oracle: Vec<f64> = (0..n)
        .map(|i| match i {
            i if i < top => y_b / top as f64,
            i if i < top + rest => (1.0 - y_b) / rest as f64,
            _ => 0.0,
        })
        .collect();
    let x = [0.0, 0.05, 0.08, 0.5, 0.7, 0.9, 1.1, 1.3, 5.0, 6.0];
    let o = OrderingResult::from_scores(x.iter().map(|v| 7.0 - v).collect()).expect("scores");
    let p = quantifier_params(&o, n).expect("params");
    let w = quantifier_weights(&p, n).expect("weights").weights;
    let params_ok = (p.b - b).abs() < 1e-12 && (p.c - c).abs() < 1e-12 && (p.y_b - y_b).abs() < 1e-12;
    let weights_ok = w.iter().zip(&oracle).all(|(a, e)| (a - e).abs() <= 1e-15);
    v.check(
        params_ok && weights_ok,
        format!("worked example b={:.3} c={:.3} y_b={:.6}, weights {:?}", p.b, p.c, p.y_b, rounded(&w)),
    );
    v
}

fn rounded(w: &[f64]) -> Vec<String> {
    w.iter().map(|x| format!("{x:.4}")).collect()
}

fn random_rows(rng: &mut ChaCha8Rng, n: std::ops::RangeInclusive<usize>) -> Vec<Vec<f64>> {
    let n = rng.random_range(n);
    let dim = rng.random_range(2..=5);
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(-8i32..=8) as f64 / 4.0
                    } else {
                        rng.random_range(-10.0..10.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn oracle_suite() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = [0usize; 3];
    let mut krum_worst = 0.0f64;
    for _ in 0..ORACLE_CASES {
        let rows = random_rows(&mut rng, 1..=8);
        let layout = flat_layout(rows[0].len());
        let updates = vectors(&layout, &rows);
        if coordinate_median(&updates).expect("median").values() != median_oracle(&rows).as_slice() {
            mismatches[0] += 1;
        }
        let n = rows.len();
        let trim = loop {
            let t = rng.random_range(0.0..0.49);
            if n > 2 * (t * n as f64).floor() as usize {
                break t;
            }
        };
        if trimmed_mean(&updates, trim).expect("trimmed").values() != trimmed_oracle(&rows, trim).as_slice() {
            mismatches[1] += 1;
        }

        let rows = random_rows(&mut rng, 3..=8);
        let f = rng.random_range(0..rows.len() - 2);
        let layout = flat_layout(rows[0].len());
        let got = krum_scores(&vectors(&layout, &rows), f).expect("krum");
        let err = got
            .iter()
            .zip(krum_oracle(&rows, f))
            .map(|(g, o)| (g - o).abs())
            .fold(0.0, f64::max);
        krum_worst = krum_worst.max(err);
        if err > KRUM_TOL {
            mismatches[2] += 1;
        }
    }
    v.check(mismatches[0] == 0, format!("median: {} of {ORACLE_CASES} differ", mismatches[0]));
    v.check(mismatches[1] == 0, format!("trimmed mean: {} of {ORACLE_CASES} differ", mismatches[1]));
    v.check(
        mismatches[2] == 0,
        format!("krum scores: {} of {ORACLE_CASES} beyond {KRUM_TOL}, worst {krum_worst:.2e}", mismatches[2]),
    );
    v
}

fn numerics_suite() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut grad_worst, mut jac_worst, mut norm_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..NUMERIC_CASES {
        let input = rng.random_range(1..=5);
        let mut sizes = vec![input];
        for _ in 0..rng.random_range(0..=2) {
            sizes.push(rng.random_range(1..=6));
        }
        let classes = rng.random_range(2..=4);
        sizes.push(classes);
        let n = rng.random_range(1..=4);
        let features: Vec<f64> = (0..input * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let layout = Arc::new(ModelLayout::new(sizes, Activation::Tanh).expect("layout"));
        let p = ParamVector::init(layout, rng.random());
        let batch = Batch::new(&features, &labels, input).expect("batch");

        let grad = model::loss_gradient(&p, &batch).expect("gradient");
        grad_worst = grad_worst.max(relative_error(grad.values(), &fd_gradient(&p, &batch)));
        let x = &features[..input];
        let jac = model::input_jacobian(&p, x).expect("jacobian");
        jac_worst = jac_worst.max(relative_error(&jac, &fd_jacobian(&p, x)));
        for i in 0..n {
            let probs = model::forward(&p, &features[i * input..(i + 1) * input]).expect("forward");
            norm_worst = norm_worst.max((probs.iter().sum::<f64>() - 1.0).abs());
        }
    }
    v.check(grad_worst <= FD_TOL, format!("loss gradient worst relative error {grad_worst:.2e} <= {FD_TOL:.0e}"));
    v.check(jac_worst <= FD_TOL, format!("input jacobian worst relative error {jac_worst:.2e} <= {FD_TOL:.0e}"));
    v.check(norm_worst <= NORM_TOL, format!("forward normalization worst {norm_worst:.2e} <= {NORM_TOL:.0e}"));
    v
}

fn replacement_suite() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layout = Arc::new(ModelLayout::new(vec![6, 5, 3], Activation::Relu).expect("layout"));
    let mut worst = 0.0f64;
    for _ in 0..REPLACEMENT_CASES {
        let n = rng.random_range(1..60);
        let lr = rng.random_range(0.05..4.0);
        let global = ParamVector::init(layout.clone(), rng.random());
        let adversarial = ParamVector::init(layout.clone(), rng.random()).scale(3.0);
        let mut deltas = vec![ParamVector::zeros(layout.clone()); n - 1];
        deltas.push(boost_update(&adversarial, &global, n, lr).expect("boost"));
        let out = fedavg(&global, &deltas, lr).expect("fedavg");
        for (o, a) in out.values().iter().zip(adversarial.values()) {
            worst = worst.max((o - a).abs());
        }
    }
    v.check(
        worst <= REPLACEMENT_TOL,
        format!("{REPLACEMENT_CASES} cases, worst coordinate error {worst:.2e} <= {REPLACEMENT_TOL:.0e}"),
    );
    v
}

/// Small configs covering both orderings and both explanation modes.
fn determinism_configs() -> Vec<(&'static str, ExperimentConfig)> {
    let mut base = ExperimentConfig::parse(DESK).expect("desk config parses");
    if let flsim::sim::DataSource::Synth { per_class, test_per_class, .. } = &mut base.source {
        *per_class = 60;
        *test_per_class = 30;
    }
    base.n_clients = 12;
    base.clients_per_round = 8;
    base.n_poor = 2;
    base.n_adversarial = 2;
    base.rounds = 3;
    base.warmup_rounds = 1;
    base.local_epochs = 1;
    base.hidden = vec![16];
    base.lle.max_instances = 6;
    base.seed = 11;

    let mut rab = base.clone();
    rab.attack = Some(AttackKind::Backdoor);
    rab.boost_split = true;
    rab.defense = Defense::Rab2Def;
    rab.lle.mode = LleMode::Surrogate;

    let mut dd = base;
    dd.attack = Some(AttackKind::LabelFlip);
    dd.defense = Defense::Ddaba;
    vec![("rab2def_surrogate", rab), ("ddaba_label_flip", dd)]
}

fn write_artifacts(cfg: &ExperimentConfig, dir: &Path) {
    let sim = Simulation::new(cfg.clone()).expect("valid config");
    let out = sim.run().expect("runs");
    emit_reports(&out.reports, &out.summary, &sim.profiles(), dir).expect("reports");
    std::fs::write(dir.join("config.txt"), sim.config().to_text()).expect("config.txt");
    let round = cfg.rounds - 1;
    let mut global = sim.warm_start().expect("warm start");
    for r in 0..round {
        global = sim.run_round(&global, r).expect("round").global;
    }
    let subs = sim.submissions(&global, round).expect("submissions");
    write_explanations(&sim, &subs[0], round, &dir.join("explain")).expect("explanations");
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("inside dir").display().to_string();
                files.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    files
}

fn determinism() -> Verdict {
    let mut v = Verdict::new();
    for (name, cfg) in determinism_configs() {
        let runs: Vec<BTreeMap<String, Vec<u8>>> = [1, 1, 4]
            .iter()
            .map(|&threads| {
                let dir = tempfile::tempdir().expect("tempdir");
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .expect("thread pool")
                    .install(|| write_artifacts(&cfg, dir.path()));
                snapshot(dir.path())
            })
            .collect();
        let pgms = runs[0].keys().filter(|k| k.ends_with(".pgm")).count();
        let csvs = runs[0].keys().filter(|k| k.ends_with(".csv")).count();
        let same = runs.windows(2).all(|w| w[0] == w[1]);
        v.check(
            same && pgms > 0,
            format!("{name}: {csvs} CSV and {pgms} PGM files identical across 3 runs (1, 1, 4 threads)"),
        );
    }
    v
}

fn main() {
    let classes = match ExperimentConfig::parse(DESK).expect("desk config parses").source {
        flsim::sim::DataSource::Synth { classes, .. } => classes,
        _ => 10,
    };
    let mut verdicts: Vec<(&str, Verdict)> = vec![
        ("5 quantifier unit suite", quantifier_suite()),
        ("6 oracle equivalence", oracle_suite()),
        ("7 numerics", numerics_suite()),
        ("8 replacement identity", replacement_suite()),
        ("9 determinism", determinism()),
    ];
    let matrix = run_matrix();
    verdicts.splice(
        0..0,
        [
            ("1 byzantine resilience", byzantine(&matrix, classes)),
            ("2 backdoor resilience", backdoor(&matrix)),
            ("3 fairness separation", fairness(&matrix)),
            ("4 poor-client benefit", poor_benefit(&matrix)),
        ],
    );

    let mut failed = 0;
    for (name, v) in &verdicts {
        for line in &v.detail {
            println!("    {line}");
        }
        println!("{} criterion {name}", if v.pass { "PASS" } else { "FAIL" });
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
