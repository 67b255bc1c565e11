use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fenep_cli::audit::audit_file;
use fenep_cli::config::RunConfig;
use fenep_cli::error::{CliError, CliResult};
use fenep_cli::run::{parse_sweep, run, run_sweep};
use fenep_core::mesh::TriMesh;
use fenep_core::nlsolve::PicardConfig;
use fenep_core::verify::{run_suite, VerifyOptions};

#[derive(Parser)]
#[command(name = "fenep", version, about = "FENE-P finite element solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file.
    Run(RunArgs),
    /// Re-check the energy inequality row by row in an energy.csv file.
    Audit {
        csv: PathBuf,
        /// Solver tolerance used for the slack.
        #[arg(long, default_value_t = PicardConfig::default().tol)]
        tol: f64,
        /// Leave the stress diffusion columns out of the dissipation.
        #[arg(long)]
        no_diffusion: bool,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
    /// Run the property-oracle verification suite.
    Verify {
        /// Fewer random samples.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write the structured n×n unit-square mesh.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    tmax: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    wi: Option<String>,
    #[arg(long)]
    re: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Repeat the run for several δ values, e.g. `delta=0.1,0.01`.
    #[arg(long)]
    sweep: Option<String>,
}

impl RunArgs {
    fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        let overrides = [
            ("model.scheme", &self.scheme),
            ("model.delta", &self.delta),
            ("model.alpha", &self.alpha),
            ("time.dt", &self.dt),
            ("time.t_max", &self.tmax),
            ("model.b", &self.b),
            ("model.wi", &self.wi),
            ("model.re", &self.re),
            ("model.eps", &self.eps),
            ("output.dir", &self.out),
        ];
        for (key, v) in overrides {
            if let Some(v) = v {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let summaries = match &args.sweep {
                Some(spec) => run_sweep(&cfg, &parse_sweep(spec)?)?,
                None => vec![run(&cfg)?],
            };
            for s in summaries {
                println!(
                    "{} steps, final F = {:.12e}, audits passed {}/{}, max residual {:.2e}",
                    s.steps,
                    s.final_free_energy,
                    s.audits_passed,
                    s.steps,
                    s.max_residual
                );
            }
            Ok(())
        }
        Command::Audit { csv, tol, no_diffusion } => {
            let rep = audit_file(&csv, tol, !no_diffusion)?;
            for r in rep.rows.iter().filter(|r| !r.pass || r.flag_mismatch) {
                println!(
                    "step {}: margin {:.3e} (slack {:.1e}){}",
                    r.step,
                    r.margin,
                    r.slack,
                    if r.flag_mismatch { ", disagrees with recorded flag" } else { "" }
                );
            }
            println!(
                "{} steps checked, {} failed, {} flag mismatches, worst margin {:.3e}",
                rep.rows.len(),
                rep.failed,
                rep.mismatched,
                rep.worst_margin
            );
            if rep.ok() {
                Ok(())
            } else {
                Err(CliError::Audit(format!("{} rows violate the energy inequality", rep.failed)))
            }
        }
        Command::Mesh {
            command: MeshCommand::Gen { n, out },
        } => {
            let mesh = TriMesh::structured_unit_square(n)
                .and_then(|m| m.save(&out).map(|_| m))
                .map_err(|e| CliError::Mesh(e.to_string()))?;
            println!("{} vertices, {} cells -> {}", mesh.n_vertices(), mesh.n_cells(), out.display());
            Ok(())
        }
        Command::Verify { quick, seed } => {
            let opts = if quick {
                VerifyOptions {
                    lemma_samples: 5_000,
                    lambda_fields: 200,
                    seed,
                }
            } else {
                VerifyOptions {
                    seed,
                    ..VerifyOptions::default()
                }
            };
            let outcomes = run_suite(&opts);
            for o in &outcomes {
                println!("[{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            let failed = outcomes.iter().filter(|o| !o.pass).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(CliError::Audit(format!("{failed} verification checks failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
