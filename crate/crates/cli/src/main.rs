//! `lcskit`: run scenario files and emit JSON/CSV reports.
//!
//! Exit status: 0 when every check and integration passes, 1 when any fails
//! or is indeterminate, 2 on parse, schema or evaluation errors. With
//! `--gate expectations` a failure that the scenario declares as expected
//! counts as a pass.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcskit::scenario::{CheckRecord, IntegrationOutcome, Loaded, ReportBundle, RunOptions};

#[derive(Parser)]
#[command(
    name = "lcskit",
    version,
    about = "Certify symmetries and integrate dynamics on locally conformal symplectic manifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the scenario's (Ω, θ) is a valid LCS structure.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run named checks, or every declared check.
    Check {
        scenario: PathBuf,
        names: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run named integrations, or every declared one.
    Integrate {
        scenario: PathBuf,
        names: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run everything in one or more scenario files or directories.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Override every check's tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Override the number of quasi-random sample points.
    #[arg(long)]
    samples: Option<usize>,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for JSON reports and trajectory CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, value_enum, default_value_t = Gate::Strict)]
    gate: Gate,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Gate {
    /// Exit 0 only if everything passes.
    Strict,
    /// Exit 0 if every outcome matches the scenario's `expect`.
    Expectations,
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(Failure(msg)) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("LCSKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| Failure(format!("LCSKIT_THREADS must be a positive integer, got `{value}`")))?;
    if n == 0 {
        return Err(Failure("LCSKIT_THREADS must be a positive integer, got `0`".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn options(c: &Common) -> RunOptions {
    RunOptions {
        tolerance: c.tolerance,
        samples: c.samples,
        seed: c.seed,
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Validate { scenario, common } => {
            let loaded = Loaded::from_path(&scenario)?;
            let spec = loaded.validation_spec();
            let record = loaded.run_check(&spec, &options(&common));
            emit_single(&loaded, "validate", vec![record], Vec::new(), &common)
        }
        Command::Check {
            scenario,
            names,
            common,
        } => {
            let loaded = Loaded::from_path(&scenario)?;
            let records = loaded.run_checks(&names, &options(&common))?;
            emit_single(&loaded, "check", records, Vec::new(), &common)
        }
        Command::Integrate {
            scenario,
            names,
            common,
        } => {
            let loaded = Loaded::from_path(&scenario)?;
            let outcomes = loaded.run_integrations(&names)?;
            if common.format == Format::Csv && common.out.is_none() {
                let [only] = outcomes.as_slice() else {
                    return Err(Failure("--format csv on stdout needs exactly one integration".into()));
                };
                print!("{}", only.csv.as_deref().unwrap_or(""));
                let bundle = bundle(&loaded, "integrate", &common, Vec::new(), outcomes, None)?;
                return Ok(exit_code(&[bundle], common.gate));
            }
            emit_single(&loaded, "integrate", Vec::new(), outcomes, &common)
        }
        Command::Report { paths, common } => {
            let files = expand(&paths)?;
            let mut bundles = Vec::new();
            for file in &files {
                let loaded = Loaded::from_path(file)?;
                let checks = loaded.run_checks(&[], &options(&common))?;
                let integrations = loaded.run_integrations(&[])?;
                bundles.push(bundle(
                    &loaded,
                    "report",
                    &common,
                    checks,
                    integrations,
                    common.out.as_deref(),
                )?);
            }
            match common.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&bundles)?),
                Format::Csv => {
                    for (i, b) in bundles.iter().enumerate() {
                        let csv = b.to_csv()?;
                        // One header for the whole suite.
                        let body = if i == 0 {
                            csv.as_str()
                        } else {
                            csv.split_once('\n').map_or("", |(_, r)| r)
                        };
                        print!("{body}");
                    }
                }
            }
            for b in &bundles {
                eprintln!("{}: {}", b.scenario, summary_line(b));
            }
            Ok(exit_code(&bundles, common.gate))
        }
    }
}

fn emit_single(
    loaded: &Loaded,
    command: &str,
    checks: Vec<CheckRecord>,
    integrations: Vec<IntegrationOutcome>,
    common: &Common,
) -> Result<u8, Failure> {
    let b = bundle(loaded, command, common, checks, integrations, common.out.as_deref())?;
    match common.format {
        Format::Json => println!("{}", b.to_json()),
        Format::Csv => print!("{}", b.to_csv()?),
    }
    eprintln!("{}: {}", b.scenario, summary_line(&b));
    Ok(exit_code(&[b], common.gate))
}

/// Builds the bundle and, with `out`, writes it and the trajectory CSVs.
fn bundle(
    loaded: &Loaded,
    command: &str,
    common: &Common,
    checks: Vec<CheckRecord>,
    integrations: Vec<IntegrationOutcome>,
    out: Option<&Path>,
) -> Result<ReportBundle, Failure> {
    let mut records = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    for mut o in integrations {
        if let (Some(dir), Some(csv)) = (out, &o.csv) {
            let file = format!("{}.{}.csv", loaded.name(), o.record.name);
            std::fs::write(dir.join(&file), csv)?;
            o.record.csv = Some(file);
        }
        records.push(o.record);
    }
    let b = ReportBundle::new(loaded.name(), command, &options(common), checks, records);
    if let Some(dir) = out {
        std::fs::write(
            dir.join(format!("{}.{command}.json", loaded.name())),
            b.to_json() + "\n",
        )?;
    }
    Ok(b)
}

fn summary_line(b: &ReportBundle) -> String {
    let s = &b.summary;
    format!(
        "{} passed, {} failed, {} indeterminate, {} errors{}",
        s.passed,
        s.failed,
        s.indeterminate,
        s.errors,
        if s.expectations_met {
            ""
        } else {
            " (expectations not met)"
        }
    )
}

fn exit_code(bundles: &[ReportBundle], gate: Gate) -> u8 {
    match gate {
        Gate::Strict => bundles.iter().map(|b| b.summary.exit_code).max().unwrap_or(0) as u8,
        Gate::Expectations => {
            if bundles.iter().all(|b| b.summary.expectations_met) {
                0
            } else if bundles.iter().any(|b| b.summary.errors > 0) {
                2
            } else {
                1
            }
        }
    }
}

/// Scenario files named directly, plus `*.toml` in named directories, sorted.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "toml"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}
