//! Generation sweeps.

use rayon::prelude::*;

use super::{run, RunResult, Scenario};
use crate::error::{Error, Result};
use crate::network::build_sensitivities;
use crate::roots::try_decreasing_root;
use crate::welfare::{solve_subproblem, Regime};

#[derive(Debug)]
pub struct SweepPoint {
    pub g_scale: f64,
    pub result: Result<RunResult>,
}

/// Runs the scenario at each generation scale. Runs are independent and
/// execute in parallel; results come back in input order and a failed
/// run does not stop the others.
pub fn sweep(sc: &Scenario, g_scales: &[f64]) -> Result<Vec<SweepPoint>> {
    if g_scales.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::config(
            "scales",
            "generation scales must be sorted ascending",
        ));
    }
    for &s in g_scales {
        sc.with_g_scale(s)?;
    }
    Ok(g_scales
        .par_iter()
        .map(|&g_scale| SweepPoint {
            g_scale,
            result: sc.with_g_scale(g_scale).and_then(|s| run(&s)),
        })
        .collect())
}

/// Generation scales at which the import and the export piece reach zero
/// net consumption, i.e. where total generation crosses `sigma1` and
/// `sigma2`. Found by bisection; both are monotone in the scale.
pub fn regime_boundaries(sc: &Scenario) -> Result<(f64, f64)> {
    let sens = build_sensitivities(&sc.network);
    let boundary = |regime: Regime| -> Result<f64> {
        let z0 = |s: f64| -> Result<f64> {
            let sc = sc.with_g_scale(s.max(0.0))?;
            let sol = solve_subproblem(&sens, &sc.prosumers(), &sc.tariff, regime, &sc.solver)?;
            Ok(sol.z0)
        };
        try_decreasing_root(z0, 0.0, 1.0, 40, 1e-12)
    };
    Ok((boundary(Regime::Import)?, boundary(Regime::Export)?))
}
