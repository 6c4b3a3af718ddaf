use std::path::PathBuf;
use std::process::ExitCode;

use adsim::{audit, popfile, run, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adsim", version, about = "Simulate PII-audience ad-platform attacks and defenses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every attack in a scenario against every policy and seed.
    Run {
        scenario: PathBuf,
        /// Output directory; defaults to the scenario's `output` key.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use seeds 1..=N instead of the scenario's list.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: Option<u64>,
    },
    /// Print a preset policy's defenses and what an adversary needs to beat them.
    Audit { policy: String },
    /// Generate a population from a config file and export it as CSV.
    GenPop {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seeds } => Scenario::load(&scenario).and_then(|mut s| {
            if let Some(n) = seeds {
                s = s.with_seed_count(n);
            }
            let dir = out.unwrap_or_else(|| s.output.clone());
            let summary = run::run_scenario(&s, &dir)?;
            println!(
                "{}: {} runs, {} successful attacks; reports in {}",
                s.name,
                summary.runs,
                summary.successes,
                summary.out_dir.display()
            );
            Ok(())
        }),
        Command::Audit { policy } => audit::audit_policy(&policy).map(|text| print!("{text}")),
        Command::GenPop { config, out } => popfile::generate_from_file(&config).and_then(|pop| {
            popfile::export(&pop, &out)?;
            println!("wrote {} users to {}", pop.len(), out.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
