use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tdlab::config::load_config_file;
use tdlab::experiment::{build_instance, fixed_point_summary};
use tdlab::{emit_outputs, parse_config, parse_seed_list, run_experiment, HarnessError};
use tdlab_core::sa_checks;

#[derive(Parser)]
#[command(name = "tdlab", version, about = "Linear TD experiments with arbitrary features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write report.json plus CSV traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `outputs`, then `tdlab_out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds as `0..19` (inclusive), `0..=19` or `1,5,9`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedList>,
        /// Override the number of TD steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Check the standing assumptions only.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the TD fixed-point set summary.
    Fixpoints {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(text: &str) -> Result<SeedList, String> {
    parse_seed_list(text).map(SeedList)
}

fn print_json(value: &impl serde::Serialize) {
    let body = serde_json::to_string_pretty(value).expect("serializable");
    // a closed pipe (`| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{body}");
}

fn execute(command: Command) -> Result<ExitCode, HarnessError> {
    match command {
        Command::Run {
            config,
            out,
            seeds,
            steps,
        } => {
            let mut file = load_config_file(&config)?;
            if let Some(SeedList(seeds)) = seeds {
                file.seeds = seeds;
            }
            if let Some(steps) = steps {
                file.n_steps = steps;
            }
            let dir = out
                .or_else(|| file.outputs.clone())
                .unwrap_or_else(|| PathBuf::from("tdlab_out"));
            let cfg = file.validate()?;
            let output = run_experiment(&cfg)?;
            emit_outputs(&output, &dir)?;
            let report = &output.report;
            println!("{} {}", report.status, dir.join(tdlab::experiment::REPORT_FILE).display());
            for a in report.assertions.iter().filter(|a| !a.pass) {
                println!("FAIL {}: {}", a.name, a.detail);
            }
            Ok(ExitCode::from(if report.passed() { 0 } else { 2 }))
        }
        Command::Check { config } => {
            let cfg = parse_config(&config)?;
            let report =
                sa_checks::check_assumptions(&cfg.mdp, &cfg.policy, &cfg.features, &cfg.file.schedule);
            print_json(&report);
            Ok(ExitCode::from(if report.all_pass() { 0 } else { 1 }))
        }
        Command::Fixpoints { config } => {
            let cfg = parse_config(&config)?;
            let inst = build_instance(&cfg)?;
            print_json(&fixed_point_summary(&inst)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            let body = serde_json::to_string_pretty(&err.to_report()).expect("serializable");
            eprintln!("{body}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
