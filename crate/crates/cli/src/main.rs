use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gridshare::harness::{
    load_scenario, regime_boundaries, run, summary, sweep, verify_tolerance, write_run,
    write_sweep, RunResult, Scenario, Verification,
};
use gridshare::network::voltage_models;
use gridshare::prosumer::utility_families;
use gridshare::welfare::central_solvers;

#[derive(Parser)]
#[command(
    name = "gridshare",
    version,
    about = "Voltage-aware energy sharing under net metering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one period and report prices, settlement and voltages.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Keep the dual solver trace (written to trace.csv).
        #[arg(long)]
        trace: bool,
        /// Directory for CSV/JSON reports; prints a summary when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario at several generation scales.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Ascending, comma separated generation scales.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        scales: Vec<f64>,
        /// Directory for sweep.csv; prints the CSV when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check equilibrium, neutrality, payment uniformity and KKT residuals.
    Verify {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Tolerance; defaults to $GRIDSHARE_TOL or 1e-7.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Generation scales where total generation crosses sigma1 and sigma2.
    Boundaries {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// List the registered strategies.
    List,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Dual solver strategy, overriding the scenario file.
    #[arg(long)]
    solver: Option<String>,
    /// Voltage model for the report, overriding the scenario file.
    #[arg(long)]
    report_model: Option<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut sc = load_scenario(&self.scenario)
            .with_context(|| format!("loading {}", self.scenario.display()))?;
        if let Some(method) = &self.solver {
            anyhow::ensure!(
                central_solvers().contains(method),
                "unknown solver `{method}` (registered: {})",
                central_solvers().names().join(", ")
            );
            sc.solver.method = method.clone();
        }
        if let Some(model) = &self.report_model {
            anyhow::ensure!(
                voltage_models().contains(model),
                "unknown voltage model `{model}` (registered: {})",
                voltage_models().names().join(", ")
            );
            sc.options.report_model = model.clone();
        }
        Ok(sc)
    }
}

enum Outcome {
    Pass,
    VerificationFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Run {
            scenario,
            trace,
            out,
        } => {
            let mut sc = scenario.load()?;
            sc.options.trace |= trace;
            let result = run(&sc)?;
            let verification = result.verify(verify_tolerance()?);
            match out {
                Some(dir) => {
                    for p in write_run(&dir, &result, &verification)? {
                        println!("wrote {}", p.display());
                    }
                }
                None => print_summary(&result, &verification)?,
            }
            Ok(Outcome::Pass)
        }
        Command::Sweep {
            scenario,
            scales,
            out,
        } => {
            let sc = scenario.load()?;
            let points = sweep(&sc, &scales)?;
            let mut buf = Vec::new();
            write_sweep(&mut buf, &points)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    let p = dir.join("sweep.csv");
                    fs::write(&p, &buf)?;
                    println!("wrote {}", p.display());
                }
                None => std::io::stdout().write_all(&buf)?,
            }
            let failed: Vec<String> = points
                .iter()
                .filter_map(|p| {
                    p.result
                        .as_ref()
                        .err()
                        .map(|e| format!("g_scale {}: {e}", p.g_scale))
                })
                .collect();
            anyhow::ensure!(
                failed.is_empty(),
                "{} sweep point(s) failed:\n{}",
                failed.len(),
                failed.join("\n")
            );
            Ok(Outcome::Pass)
        }
        Command::Verify { scenario, tol } => {
            let sc = scenario.load()?;
            let tol = match tol {
                Some(t) => t,
                None => verify_tolerance()?,
            };
            let result = run(&sc)?;
            let verification = result.verify(tol);
            for c in &verification.checks {
                println!(
                    "{} {:<30} {:.3e} (tol {:.1e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.tol
                );
            }
            if verification.all_pass() {
                println!(
                    "all checks passed for {}",
                    display_name(&sc.name, &scenario.scenario)
                );
                Ok(Outcome::Pass)
            } else {
                println!(
                    "verification failed for {}",
                    display_name(&sc.name, &scenario.scenario)
                );
                Ok(Outcome::VerificationFailed)
            }
        }
        Command::Boundaries { scenario } => {
            let sc = scenario.load()?;
            let (s1, s2) = regime_boundaries(&sc)?;
            let g = sc.with_g_scale(1.0)?.generation();
            println!("sigma1 crossing: g_scale {s1:.6} (G0 {:.3} kWh)", s1 * g);
            println!("sigma2 crossing: g_scale {s2:.6} (G0 {:.3} kWh)", s2 * g);
            Ok(Outcome::Pass)
        }
        Command::List => {
            println!("central solvers: {}", central_solvers().names().join(", "));
            println!("voltage models: {}", voltage_models().names().join(", "));
            println!(
                "utility families: {}",
                utility_families().names().join(", ")
            );
            Ok(Outcome::Pass)
        }
    }
}

fn display_name(name: &str, path: &Path) -> String {
    format!("{name} ({})", path.display())
}

fn print_summary(r: &RunResult, v: &Verification) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&summary(r, v))?;
    text.push('\n');
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}
