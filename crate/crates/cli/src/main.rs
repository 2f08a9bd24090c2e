use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use poolparty::experiments::{
    calibrate_drift_with, evaluate_defenses, list_presets, run_trials_detailed, sweep, CalibrationOptions,
    ExperimentSummary, Scenario,
};
use poolparty::scenario_file::{parse_scenario, results_to_csv, summary_to_json};

/// Environment variable consulted when neither `--seed` nor the scenario
/// file sets a seed.
const SEED_ENV: &str = "POOLPARTY_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "poolparty",
    version,
    about = "Simulate covert channels over shared browser resource pools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the trials of a scenario, writing per-trial CSV and a JSON summary
    Run {
        #[command(flatten)]
        input: Input,
        /// Per-trial CSV output
        #[arg(long)]
        out: PathBuf,
        /// Aggregate JSON output
        #[arg(long)]
        summary: PathBuf,
    },
    /// List browser presets with pool sizes and scopes
    Presets,
    /// Re-run a scenario for each value of one parameter
    Sweep {
        #[command(flatten)]
        input: Input,
        /// pulse_interval, negotiate_interval, arrival_rate, drift_probability or tab_count
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// CSV output; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare no defense, site partitioning, a widened pool and a per-site cap
    Defenses {
        #[command(flatten)]
        input: Input,
        /// JSON output; a table on stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the drift probability that yields a target success rate
    Calibrate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        target: f64,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 20)]
        max_iterations: u32,
    },
}

#[derive(Args, Debug)]
struct Input {
    /// Scenario file (key=value lines)
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    scenario: Option<PathBuf>,
    /// Use a preset instead of a scenario file
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Input {
    fn load(&self) -> Result<Scenario> {
        let (mut scenario, file_seed) = match (&self.scenario, &self.preset) {
            (Some(path), _) => {
                let parsed = parse_scenario(path)?;
                (parsed.scenario, parsed.seed_given)
            }
            (None, Some(name)) => {
                let s = Scenario::preset(name).with_context(|| format!("unknown preset {name:?}"))?;
                (s, false)
            }
            (None, None) => bail!("either --scenario or --preset is required"),
        };
        if let Some(t) = self.trials {
            scenario.trials = t;
        }
        match (self.seed, file_seed, std::env::var(SEED_ENV)) {
            (Some(seed), _, _) => scenario.seed = seed,
            (None, true, _) => {}
            (None, false, Ok(v)) => {
                scenario.seed = v
                    .trim()
                    .parse()
                    .with_context(|| format!("{SEED_ENV}={v:?} is not a seed"))?;
            }
            (None, false, Err(_)) => {}
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn summary_row(label: &str, s: &ExperimentSummary) -> String {
    format!(
        "{label:<18} {:>7.2} {:>8.3} {:>8.3} {:>8.3} {:>9.2}",
        s.success_rate, s.mean_setup_s, s.mean_send_s, s.mean_total_s, s.throughput_bps
    )
}

fn summary_header(first: &str) -> String {
    format!(
        "{first:<18} {:>7} {:>8} {:>8} {:>8} {:>9}",
        "success", "setup_s", "send_s", "total_s", "bits/s"
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { input, out, summary } => {
            let scenario = input.load()?;
            let results = run_trials_detailed(&scenario)?;
            write(&out, &results_to_csv(&results))?;
            let agg = ExperimentSummary::from_results(&results);
            write(&summary, &summary_to_json(&agg))?;
            println!("{}", summary_header("scenario"));
            println!("{}", summary_row(scenario.preset.as_deref().unwrap_or("custom"), &agg));
        }
        Command::Presets => print!("{}", list_presets()),
        Command::Sweep {
            input,
            param,
            values,
            out,
        } => {
            let scenario = input.load()?;
            let rows = sweep(&scenario, &param, &values)?;
            let mut csv = String::from("value,success_rate,mean_setup_s,mean_send_s,mean_total_s,throughput_bps\n");
            for (v, s) in &rows {
                csv.push_str(&format!(
                    "{v},{:.4},{:.3},{:.3},{:.3},{:.3}\n",
                    s.success_rate, s.mean_setup_s, s.mean_send_s, s.mean_total_s, s.throughput_bps
                ));
            }
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Defenses { input, out } => {
            let scenario = input.load()?;
            let table = evaluate_defenses(&scenario)?;
            match out {
                Some(path) => {
                    let json: Vec<_> = table
                        .iter()
                        .map(|(d, s)| serde_json::json!({ "defense": d.to_string(), "summary": s }))
                        .collect();
                    write(&path, &(serde_json::to_string_pretty(&json)? + "\n"))?;
                }
                None => {
                    println!("{}", summary_header("defense"));
                    for (d, s) in &table {
                        println!("{}", summary_row(&d.to_string(), s));
                    }
                }
            }
        }
        Command::Calibrate {
            input,
            target,
            tolerance,
            max_iterations,
        } => {
            let scenario = input.load()?;
            let opts = CalibrationOptions {
                tolerance,
                max_iterations,
            };
            let cal = calibrate_drift_with(&scenario, target, opts)?;
            println!("drift_prob={}", cal.drift_probability);
            println!("observed_success={:.4}", cal.observed_success);
            println!("iterations={}", cal.iterations);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
