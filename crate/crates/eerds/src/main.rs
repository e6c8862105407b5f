use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eerds::pipeline::{run, write_outcome, RunOptions};
use eerds::{selfcheck, Scenario, Stages};

#[derive(Parser)]
#[command(
    name = "eerds",
    version,
    about = "Constrained entropy maximisation and relaxation for 1D electro-energy-reaction-diffusion systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or every scenario in a directory with --batch.
    Run {
        #[arg(required_unless_present = "batch", conflicts_with = "batch")]
        scenario: Option<PathBuf>,
        #[arg(short, long, env = "EERDS_OUTPUT_DIR", default_value = "eerds-out")]
        output: PathBuf,
        /// Comma separated subset of electro,dual,direct,evolve.
        #[arg(long, value_parser = parse_stages)]
        stages: Option<Stages>,
        #[arg(long)]
        tol_grad: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run every *.toml in this directory concurrently.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Also write gnuplot-style .dat files.
        #[arg(long)]
        dat: bool,
    },
    /// Run the fast invariant suite.
    Selfcheck {
        /// Override a check tolerance, e.g. young_bound=-1.
        #[arg(long, value_parser = parse_override)]
        inject_tolerance: Vec<(String, f64)>,
    },
}

fn parse_stages(s: &str) -> Result<Stages, String> {
    Stages::parse_list(s).map_err(|e| e.to_string())
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    if !selfcheck::CHECK_NAMES.contains(&name) {
        return Err(format!(
            "unknown check '{name}', expected one of {}",
            selfcheck::CHECK_NAMES.join(", ")
        ));
    }
    let v = value.parse::<f64>().map_err(|e| format!("{value}: {e}"))?;
    Ok((name.to_string(), v))
}

fn run_one(path: &Path, out: &Path, opts: &RunOptions, dat: bool) -> bool {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return false;
        }
    };
    match run(&scenario, opts).and_then(|o| write_outcome(&o, out, dat).map(|_| o)) {
        Ok(o) => {
            let s = &o.summary;
            println!(
                "{}: {:?}{}  -> {}",
                s.scenario,
                s.status,
                s.message
                    .as_deref()
                    .map(|m| format!(" ({m})"))
                    .unwrap_or_default(),
                out.display()
            );
            s.passed()
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            false
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ok = match cli.command {
        Command::Run {
            scenario,
            output,
            stages,
            tol_grad,
            seed,
            batch,
            dat,
        } => {
            let opts = RunOptions {
                stages,
                tol_grad,
                seed,
            };
            match (scenario, batch) {
                (Some(p), _) => run_one(&p, &output, &opts, dat),
                (None, Some(dir)) => {
                    let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
                        Ok(rd) => rd
                            .filter_map(|e| e.ok().map(|e| e.path()))
                            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                            .collect(),
                        Err(e) => {
                            eprintln!("{}: {e}", dir.display());
                            return ExitCode::FAILURE;
                        }
                    };
                    files.sort();
                    std::thread::scope(|sc| {
                        let handles: Vec<_> = files
                            .iter()
                            .map(|f| {
                                let out = output.join(f.file_stem().unwrap_or_default());
                                let opts = &opts;
                                sc.spawn(move || run_one(f, &out, opts, dat))
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().unwrap_or(false))
                            .fold(true, |a, b| a & b)
                    })
                }
                (None, None) => unreachable!("clap requires a scenario or --batch"),
            }
        }
        Command::Selfcheck { inject_tolerance } => {
            let overrides: BTreeMap<String, f64> = inject_tolerance.into_iter().collect();
            let report = selfcheck::run(&overrides);
            print!("{report}");
            report.passed()
        }
    };
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
