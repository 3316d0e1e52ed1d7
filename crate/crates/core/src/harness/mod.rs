//! Scenario files, runs, sweeps and reports.

mod report;
mod run;
mod scenario;
mod sweep;

use crate::error::{Error, Result};

pub use report::{
    summary, write_run, write_schedule, write_settlement, write_sweep, write_trace, write_voltages,
    RunSummary, SweepRow, SETTLEMENT_TOL,
};
pub use run::{run, Check, RunResult, Verification, DEFAULT_VERIFY_TOL};
pub use scenario::{load_scenario, Scenario, ScenarioOptions};
pub use sweep::{regime_boundaries, sweep, SweepPoint};

/// Environment variable overriding the verification tolerance.
pub const TOL_ENV: &str = "GRIDSHARE_TOL";

/// Verification tolerance from `GRIDSHARE_TOL`, or the default.
pub fn verify_tolerance() -> Result<f64> {
    match std::env::var(TOL_ENV) {
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(t),
            _ => Err(Error::config(
                TOL_ENV,
                format!("expected a positive number, got `{v}`"),
            )),
        },
        Err(_) => Ok(DEFAULT_VERIFY_TOL),
    }
}
