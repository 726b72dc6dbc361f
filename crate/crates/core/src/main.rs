use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flsim::sim::{emit_reports, read_fairness, write_explanations, ExperimentConfig, Simulation};
use flsim::{Error, Result};

#[derive(Parser)]
#[command(name = "flsim", version, about = "Federated learning simulator with robust aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render explanation images for one client's submission in one round.
    Explain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        round: usize,
        #[arg(long)]
        client: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the fairness summary of a finished run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn run(config: PathBuf, out: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&config)?;
    let sim = Simulation::new(cfg)?;
    let outcome = sim.run_with(|o| {
        let r = &o.report;
        eprintln!(
            "round {:>3}  accuracy {:.4}  discarded {}/{}/{}",
            r.round, r.accuracy, r.discarded_adversarial, r.discarded_poor, r.discarded_regular
        );
        Ok(())
    })?;
    emit_reports(&outcome.reports, &outcome.summary, &sim.profiles(), &out)?;
    let cfg_path = out.join("config.txt");
    std::fs::write(&cfg_path, sim.config().to_text()).map_err(|source| Error::Io {
        path: cfg_path.clone(),
        source,
    })?;
    print!("{}", read_fairness(&out)?);
    Ok(())
}

fn explain(config: PathBuf, round: usize, client: usize, out: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&config)?;
    if round >= cfg.rounds {
        return Err(Error::InvalidParam {
            name: "round",
            reason: format!("experiment has {} rounds", cfg.rounds),
        });
    }
    let sim = Simulation::new(cfg)?;
    let mut global = sim.warm_start()?;
    for r in 0..round {
        global = sim.run_round(&global, r)?.global;
    }
    let submissions = sim.submissions(&global, round)?;
    let submission = submissions
        .iter()
        .find(|s| s.client == client)
        .ok_or_else(|| Error::InvalidParam {
            name: "client",
            reason: format!("client {client} does not take part in round {round}"),
        })?;
    let names = write_explanations(&sim, submission, round, &out)?;
    println!("wrote {} images to {}", names.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(config, out),
        Command::Explain {
            config,
            round,
            client,
            out,
        } => explain(config, round, client, out),
        Command::Report { input } => read_fairness(&input).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
