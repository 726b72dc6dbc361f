//! CSV and PGM artifacts.
//!
//! Floats are written with a fixed number of decimals so identical runs
//! produce identical bytes. Rows end in `\n`.

use std::fs::File;
use std::path::Path;

use super::{FairnessSummary, RoundReport, Simulation, Submission};
use crate::data::ClientProfile;
use crate::xai::{explanation_bank, render_importance, write_pgm};
use crate::{Error, Result};

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .flexible(false)
        .from_writer(file))
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn finish(mut w: csv::Writer<File>, dir: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(dir, e))
}

/// Writes `clients.csv`, `rounds.csv`, `weights.csv`, `ordering.csv`,
/// `fairness.csv` and `poor_clients.csv` into `dir`, creating it if needed.
pub fn emit_reports(
    reports: &[RoundReport],
    summary: &FairnessSummary,
    profiles: &[ClientProfile],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_clients = profiles.len();

    let mut w = writer(dir, "clients.csv")?;
    w.write_record(["client", "role", "attack"])?;
    for p in profiles {
        w.write_record([
            p.id.to_string(),
            p.role.name().to_string(),
            p.attack().map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    finish(w, dir)?;

    let mut w = writer(dir, "rounds.csv")?;
    w.write_record([
        "round",
        "accuracy",
        "backdoor_accuracy",
        "discarded_adversarial",
        "discarded_poor",
        "discarded_regular",
        "fallback",
    ])?;
    for r in reports {
        w.write_record([
            r.round.to_string(),
            fixed(r.accuracy),
            r.backdoor_accuracy.map(fixed).unwrap_or_default(),
            r.discarded_adversarial.to_string(),
            r.discarded_poor.to_string(),
            r.discarded_regular.to_string(),
            u8::from(r.fallback).to_string(),
        ])?;
    }
    finish(w, dir)?;

    let mut w = writer(dir, "weights.csv")?;
    let mut header = vec!["round".to_string()];
    header.extend((0..n_clients).map(|c| format!("client_{c}")));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![String::new(); n_clients + 1];
        row[0] = r.round.to_string();
        for (&c, &wt) in r.participants.iter().zip(&r.weights) {
            row[c + 1] = fixed(wt);
        }
        w.write_record(&row)?;
    }
    finish(w, dir)?;

    let mut w = writer(dir, "ordering.csv")?;
    w.write_record(["round", "client", "score", "x_value", "weight"])?;
    for r in reports {
        if let (Some(scores), Some(xs)) = (&r.scores, &r.x_values) {
            for (i, &c) in r.participants.iter().enumerate() {
                w.write_record([
                    r.round.to_string(),
                    c.to_string(),
                    fixed(scores[i]),
                    fixed(xs[i]),
                    fixed(r.weights[i]),
                ])?;
            }
        }
    }
    finish(w, dir)?;

    let mut w = writer(dir, "fairness.csv")?;
    w.write_record(["role", "min_discarded", "max_discarded", "mean_discarded", "mean_final_accuracy"])?;
    for (role, stats, acc) in [
        ("adversarial", summary.adversarial, None),
        ("poor", summary.poor, summary.poor_mean_accuracy),
    ] {
        w.write_record([
            role.to_string(),
            stats.min.to_string(),
            stats.max.to_string(),
            fixed(stats.mean),
            acc.map(fixed).unwrap_or_default(),
        ])?;
    }
    finish(w, dir)?;

    let mut w = writer(dir, "poor_clients.csv")?;
    w.write_record(["client", "final_accuracy"])?;
    for &(c, acc) in &summary.poor_final_accuracy {
        w.write_record([c.to_string(), fixed(acc)])?;
    }
    finish(w, dir)
}

/// Renders one greyscale image per explained validation instance for a
/// client's submitted model, using the class of the instance's label.
/// Returns the written file names, in instance order.
pub fn write_explanations(
    sim: &Simulation,
    submission: &Submission,
    round: usize,
    dir: &Path,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let validation = &sim.federation().server_validation;
    let shape = validation.shape();
    let bank = explanation_bank(
        std::slice::from_ref(&submission.submitted),
        validation,
        &sim.lle_config(round),
    )?;
    let mut names = Vec::with_capacity(bank.instances.len());
    let mut index = writer(dir, "explanations.csv")?;
    index.write_record(["file", "round", "client", "instance", "class"])?;
    for (matrix, &v) in bank.matrices[0].iter().zip(&bank.instances) {
        let class = validation.labels()[v];
        let pixels = render_importance(matrix, class, shape)?;
        let name = format!("r{round}_c{}_v{v}_k{class}.pgm", submission.client);
        write_pgm(&dir.join(&name), shape.width, shape.height, &pixels)?;
        index.write_record([
            name.clone(),
            round.to_string(),
            submission.client.to_string(),
            v.to_string(),
            class.to_string(),
        ])?;
        names.push(name);
    }
    finish(index, dir)?;
    Ok(names)
}

/// Plain-text table of `fairness.csv` plus the final accuracies from
/// `rounds.csv`.
pub fn read_fairness(dir: &Path) -> Result<String> {
    let open = |name: &str| -> Result<csv::Reader<File>> {
        let path = dir.join(name);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(csv::Reader::from_reader(file))
    };
    let mut out = format!(
        "{:<12} {:>6} {:>6} {:>8} {:>14}\n",
        "role", "min", "max", "mean", "final_accuracy"
    );
    for row in open("fairness.csv")?.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        out.push_str(&format!(
            "{:<12} {:>6} {:>6} {:>8} {:>14}\n",
            field(0),
            field(1),
            field(2),
            field(3),
            if field(4).is_empty() { "-" } else { field(4) }
        ));
    }
    let last = open("rounds.csv")?.records().last().transpose()?;
    match last {
        Some(row) => {
            out.push_str(&format!(
                "rounds: {}  final accuracy: {}",
                row.get(0).and_then(|r| r.parse::<usize>().ok()).map_or(0, |r| r + 1),
                row.get(1).unwrap_or("")
            ));
            if let Some(b) = row.get(2).filter(|b| !b.is_empty()) {
                out.push_str(&format!("  backdoor accuracy: {b}"));
            }
            out.push('\n');
        }
        None => out.push_str("rounds: 0\n"),
    }
    Ok(out)
}
