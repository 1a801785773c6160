//! The `safetab` binary: validate, run, plan, synth.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safetab_cli::config::{parse_plan_config, parse_run_config, Region, RunConfig};
use safetab_cli::pipeline;
use safetab_cli::synth::generate_synthetic;
use safetab_cli::CliError;
use safetab_core::planner::emit_planner_report;

#[derive(Parser)]
#[command(
    name = "safetab",
    version,
    about = "Differentially private tabulation of detailed population-group counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-check all input files, printing the report
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute the full pipeline and write public/private outputs
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Restricts to one pass (US or PR); default runs both
        #[arg(long, value_parser = parse_region)]
        region: Option<Region>,
    },
    /// Emit budget, threshold, and bias/suppression-curve reports
    Plan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic persons file over the configured domains
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        records: u64,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Destination; defaults to the config's persons path
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_region(s: &str) -> Result<Region, String> {
    Region::parse(s).ok_or_else(|| format!("expected US or PR, got {s:?}"))
}

fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_run_config(
        &text,
        &path.display().to_string(),
        base,
    )?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load_run_config(&config)?;
            let (_, report) = pipeline::validate(&cfg)?;
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Validation(format!(
                    "{} error(s) in input files",
                    report.errors().len()
                )))
            }
        }
        Command::Run {
            config,
            seed,
            region,
        } => {
            let mut cfg = load_run_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(region) = region {
                cfg.region = Some(region);
            }
            let summary = pipeline::run(&cfg)?;
            let regions: Vec<&str> = summary.regions.iter().map(|r| r.as_str()).collect();
            println!(
                "wrote {} rows ({} suppressed) for {} to {}",
                summary.rows,
                summary.suppressed,
                regions.join("+"),
                summary.out_dir.display(),
            );
            Ok(())
        }
        Command::Plan { config } => {
            let text = fs::read_to_string(&config).map_err(|source| CliError::Io {
                path: config.display().to_string(),
                source,
            })?;
            let base = config.parent().unwrap_or(Path::new("."));
            let plan = parse_plan_config(&text, &config.display().to_string(), base)?;
            let report = emit_planner_report(&plan.to_input())?;
            fs::create_dir_all(&plan.out_dir).map_err(|source| CliError::Io {
                path: plan.out_dir.display().to_string(),
                source,
            })?;
            write_file(&plan.out_dir.join("levels.csv"), &report.levels_csv())?;
            write_file(&plan.out_dir.join("thresholds.csv"), &report.thresholds_csv())?;
            write_file(
                &plan.out_dir.join("suppression_curve.csv"),
                &report.suppression_curve_csv(),
            )?;
            write_file(&plan.out_dir.join("bias_curve.csv"), &report.bias_curve_csv())?;
            println!(
                "wrote planning reports for {} level(s) to {}",
                report.levels.len(),
                plan.out_dir.display(),
            );
            Ok(())
        }
        Command::Synth {
            config,
            records,
            seed,
            out,
        } => {
            let cfg = load_run_config(&config)?;
            let geography = pipeline::read_input(&cfg.geography)?;
            let iterations = pipeline::read_input(&cfg.iterations)?;
            let mut report = safetab_core::data::ValidationReport::new();
            let blocks =
                safetab_core::data::parse_geography(&geography.text, &geography.name, &mut report);
            let iterations = safetab_core::data::parse_iterations(
                &iterations.text,
                &iterations.name,
                &mut report,
            );
            if !report.passed() {
                print!("{}", report.render());
                return Err(CliError::Validation(
                    "spec files must validate before synthesis".to_string(),
                ));
            }
            let text = generate_synthetic(
                &blocks,
                &iterations,
                records,
                cfg.race_cap,
                seed.unwrap_or(cfg.seed),
            )?;
            let dest = out.unwrap_or_else(|| cfg.persons.clone());
            write_file(&dest, &text)?;
            println!("wrote {} synthetic record(s) to {}", records, dest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
