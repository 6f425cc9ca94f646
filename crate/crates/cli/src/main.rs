use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rollgeo::scenario::{catalog, resolve, run, write_outputs, Format, Overrides, ScenarioError};
use rollgeo::suites::{report_lines, verify, VerifyOptions};

/// Normal geodesics of rolling manifolds and lifted Hamiltonian flows.
#[derive(Parser)]
#[command(name = "rollgeo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (JSON or TOML) or a catalog entry.
    Run {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run an acceptance suite.
    Verify {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
    /// Inspect the built-in scenarios.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    /// List catalog entries.
    List,
    /// Print a catalog entry as a scenario file.
    Show { name: String },
}

#[derive(Args)]
struct Common {
    /// Integrator tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Final time.
    #[arg(long = "T", value_name = "T")]
    t_end: Option<f64>,
    /// Directory for trajectories and summaries.
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory format.
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            tol: self.tol,
            t_end: self.t_end,
            seed: self.seed,
        }
    }

    fn format(&self) -> Format {
        self.format.parse().expect("validated by clap")
    }
}

fn fail(e: ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, common } => {
            let s = match resolve(&scenario) {
                Ok(s) => s.with_overrides(&common.overrides()),
                Err(e) => return fail(e),
            };
            let mut out = match run(&s) {
                Ok(o) => o,
                Err(e) => return fail(e),
            };
            let written = match write_outputs(&mut out, &common.output_dir, common.format()) {
                Ok(w) => w,
                Err(e) => return fail(e),
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&out.summary).expect("summary serializes")
            );
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::from(out.summary.exit_code() as u8)
        }
        Command::Verify { suite, common } => {
            let opts = VerifyOptions {
                overrides: common.overrides(),
                output_dir: Some(common.output_dir.clone()),
                format: common.format(),
            };
            match verify(&suite, &opts) {
                Ok(r) => {
                    for l in report_lines(&r) {
                        println!("{l}");
                    }
                    ExitCode::from(r.exit_code() as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Catalog { action } => match action {
            CatalogAction::List => {
                for s in catalog() {
                    println!("{:<36} {}", s.name, s.kind.id());
                }
                ExitCode::SUCCESS
            }
            CatalogAction::Show { name } => match catalog().into_iter().find(|s| s.name == name) {
                Some(s) => {
                    println!("{}", s.to_json());
                    ExitCode::SUCCESS
                }
                None => fail(ScenarioError::Validation(format!(
                    "no catalog entry `{name}`; see `rollgeo catalog list`"
                ))),
            },
        },
    }
}
