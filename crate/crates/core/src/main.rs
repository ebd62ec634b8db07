use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fairvm::scenario::reference::random_instance;
use fairvm::scenario::{cross_check, load_scenario, run};

#[derive(Parser)]
#[command(name = "fairvm", version, about = "Simulate sealed-bid VM auctions and trades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and print its fairness report.
    Run {
        scenario: PathBuf,
        /// Write the ledger trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the engine's auction with the reference on a scenario's bids.
    Verify { scenario: PathBuf },
    /// Compare engine and reference on random small instances.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<bool, Box<dyn std::error::Error>> {
    match command {
        Command::Run {
            scenario,
            trace,
            report,
        } => {
            let s = load_scenario(&scenario)?;
            let out = run(&s);
            if let Some(path) = trace {
                fs::write(path, out.trace_text())?;
            }
            let text = out.report.render();
            match report {
                Some(path) => fs::write(path, &text)?,
                None => print!("{text}"),
            }
            Ok(out.stepwise_conservation && out.report.violations() == 0)
        }
        Command::Verify { scenario } => {
            let s = load_scenario(&scenario)?;
            let out = run(&s);
            let bids = out.session.opened_bids();
            let supply = &out.session.config().provider.supply;
            match cross_check(&bids, supply) {
                Ok(()) => {
                    println!("verify {} bids={} result=match", s.label(), bids.len());
                    Ok(true)
                }
                Err(e) => {
                    println!("verify {} bids={} result=mismatch {e}", s.label(), bids.len());
                    Ok(false)
                }
            }
        }
        Command::Fuzz { seed, count } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut mismatches = 0u64;
            for i in 0..count {
                let (bids, supply) = random_instance(&mut rng);
                if let Err(e) = cross_check(&bids, &supply) {
                    mismatches += 1;
                    println!("instance={i} capacities={:?} weights={:?} {e}", supply.capacities, supply.weights);
                }
            }
            println!("fuzz seed={seed} count={count} mismatches={mismatches}");
            Ok(mismatches == 0)
        }
    }
}
