use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lorenzlab_cli::manifest::exit;
use lorenzlab_cli::systems::SYSTEMS;
use lorenzlab_cli::{report, run, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(name = "lorenzlab", version, about = "Numerical experiments on Lorenz-like flows")]
struct Cli {
    /// Worker threads for intra-stage parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// RNG seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Integration tolerance, overriding the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (or the shipped recipe name "lorenz-full").
    Run { config: PathBuf },
    /// Summarise a run from its manifest.
    Report { manifest: PathBuf },
    /// List the available systems and stages.
    ListSystems,
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
}

fn load(cli: &Cli, path: &PathBuf) -> Result<ExperimentConfig, String> {
    let mut c = ExperimentConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(t) = cli.tol {
        c.tol = t;
    }
    if let Some(o) = &cli.output {
        c.output_dir = o.clone();
    }
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::INPUT as u8);
        }
    }
    let code = match &cli.command {
        Command::Run { config } => match load(&cli, config) {
            Err(e) => {
                eprintln!("error: {e}");
                exit::INPUT
            }
            Ok(c) => match run(&c) {
                Ok(m) => {
                    for s in &m.stages {
                        let verdict = if s.error.is_some() {
                            "error"
                        } else if s.passed {
                            "pass"
                        } else {
                            "FAIL"
                        };
                        println!("{:<14} {verdict:<5} {:>8.2}s  {}", s.stage, s.wall_secs, s.summary);
                        if let Some(e) = &s.error {
                            eprintln!("error in {}: {e}", s.stage);
                        }
                    }
                    println!("manifest: {}", c.output_dir.join("manifest.json").display());
                    m.exit_code
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit::INPUT
                }
            },
        },
        Command::Report { manifest } => match report::report(manifest) {
            Ok(text) => {
                print!("{text}");
                exit::PASS
            }
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", manifest.display());
                exit::INPUT
            }
        },
        Command::ListSystems => {
            for s in SYSTEMS {
                println!("{:<10} {}  [{}]", s.name, s.summary, s.params);
            }
            let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
            println!("\nstages: {}", names.join(", "));
            exit::PASS
        }
        Command::Validate { config } => match load(&cli, config) {
            Ok(c) => {
                println!("ok: {} stages on {}", c.pipeline.len(), c.system.name);
                exit::PASS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit::INPUT
            }
        },
    };
    ExitCode::from(code as u8)
}
