//! Thin command-line front end. The library and its examples are the
//! primary interface; this binary wires the configured workflows:
//! thermo-check, run-limit, run-primitive, sweep, compare.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbrot::config::{parse_config, RunConfig};
use rbrot::harness;

#[derive(Parser)]
#[command(name = "rbrot", version, about = "Rotating Rayleigh-Benard laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the configured equation of state: identity suite, Gibbs
    /// residual, structural checks. Writes a text and CSV report.
    ThermoCheck { config: PathBuf },
    /// Integrate the singular-limit target system.
    RunLimit { config: PathBuf },
    /// Integrate the scaled compressible system at one eps.
    RunPrimitive {
        config: PathBuf,
        #[arg(long)]
        eps: f64,
    },
    /// Limit run plus one primitive run per configured eps (parallel),
    /// then the convergence report.
    Sweep { config: PathBuf },
    /// Relative-energy diagnostics between a stored primitive run and a
    /// stored limit run.
    Compare {
        prim_manifest: PathBuf,
        limit_manifest: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> rbrot::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| rbrot::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn dispatch(cmd: Command) -> rbrot::Result<()> {
    match cmd {
        Command::ThermoCheck { config } => {
            let cfg = load_config(&config)?;
            let outdir = PathBuf::from(&cfg.output.dir).join("thermo-check");
            let text = harness::cmd_thermo_check(&cfg, &outdir)?;
            print!("{text}");
            println!("report written to {}", outdir.display());
        }
        Command::RunLimit { config } => {
            let cfg = load_config(&config)?;
            let outdir = PathBuf::from(&cfg.output.dir).join("limit");
            let out = harness::run_limit(&cfg, Some(&outdir))?;
            println!(
                "limit run complete: t = {:.6}, {} snapshots, outputs in {}",
                out.final_state.t,
                out.trajectory.times.len(),
                outdir.display()
            );
        }
        Command::RunPrimitive { config, eps } => {
            let cfg = load_config(&config)?;
            let outdir = PathBuf::from(&cfg.output.dir).join(format!("eps_{eps:.6}"));
            let out = harness::run_primitive(&cfg, eps, None, Some(&outdir))?;
            let last = out.records.last().expect("at least one record");
            println!(
                "primitive run complete: t = {:.6}, mass drift {:.3e}, |u3| = {:.6e}, outputs in {}",
                out.final_state.t,
                last.mass_drift,
                last.u3_l2,
                outdir.display()
            );
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let outdir = PathBuf::from(&cfg.output.dir);
            let out = harness::run_sweep(&cfg, Some(&outdir))?;
            print!("{}", out.report);
            println!("outputs in {}", outdir.display());
        }
        Command::Compare {
            prim_manifest,
            limit_manifest,
        } => {
            let csv = harness::compare_runs(&prim_manifest, &limit_manifest)?;
            let out_path = prim_manifest
                .parent()
                .unwrap_or(std::path::Path::new("."))
                .join("compare.csv");
            std::fs::write(&out_path, &csv)?;
            println!("comparison written to {}", out_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
