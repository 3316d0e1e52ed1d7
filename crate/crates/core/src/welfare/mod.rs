//! Centralized welfare maximization under a NEM tariff and LinDistFlow
//! voltage limits.
//!
//! The NEM cost `max(pi+ Z0, pi- Z0)` splits the program into three smooth
//! pieces: an import piece priced at `pi+`, an export piece priced at
//! `pi-`, and a balanced piece with `Z0 = 0` whose multiplier `mu` acts as
//! the internal price. Each piece is solved by dual decomposition over the
//! voltage multipliers: for fixed multipliers the bus prices are
//! `chi_i = pi - sum_j R_ji (eta_up_j - eta_lo_j)` and every prosumer's
//! consumption is its closed-form response to `chi_i`.

mod dual;
mod kkt;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{check_dim, SensitivityMatrices, VOLTAGE_TOL};
use crate::prosumer::{ConsumptionBundle, Prosumer};
use crate::roots::try_decreasing_root;

pub use dual::{
    central_solvers, DualDecomposition, DualMethod, DualPoint, ProjectedAscent, SolverOptions,
    SolverStats, TraceRow,
};
pub use kkt::{verify_kkt, KktReport};

/// Net consumption below which a signed regime counts as balanced (kWh).
pub const REGIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tariff {
    /// Buy (retail) rate, $/kWh.
    pub pi_plus: f64,
    /// Sell (export) rate, $/kWh.
    pub pi_minus: f64,
}

impl Tariff {
    pub fn new(pi_plus: f64, pi_minus: f64) -> Result<Self> {
        let t = Self { pi_plus, pi_minus };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi_plus >= self.pi_minus && self.pi_minus >= 0.0 && self.pi_plus.is_finite()) {
            return Err(Error::Domain(format!(
                "tariff must satisfy pi+ >= pi- >= 0, got ({}, {})",
                self.pi_plus, self.pi_minus
            )));
        }
        Ok(())
    }

    /// NEM rate applied to coalition net consumption `z0`.
    pub fn rate(&self, z0: f64) -> f64 {
        if z0 >= 0.0 {
            self.pi_plus
        } else {
            self.pi_minus
        }
    }
}

pub fn nem_cost(tariff: &Tariff, z0: f64) -> f64 {
    tariff.rate(z0) * z0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Import,
    Balanced,
    Export,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Import, Regime::Balanced, Regime::Export];

    pub fn index(self) -> usize {
        match self {
            Regime::Import => 0,
            Regime::Balanced => 1,
            Regime::Export => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Import => "IMPORT",
            Regime::Balanced => "BALANCED",
            Regime::Export => "EXPORT",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prosumers attached to a feeder, ready for dual evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Market<'a> {
    pub sens: &'a SensitivityMatrices,
    pub prosumers: &'a [Prosumer],
}

/// Everything the inner step produces for one set of voltage multipliers.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Bus prices `chi`.
    pub chi: Vec<f64>,
    pub bundles: Vec<ConsumptionBundle>,
    pub z_bus: Vec<f64>,
    pub z0: f64,
    /// `R Z`.
    pub y: Vec<f64>,
    /// Per-bus `-dZ_i/dchi_i` on the current piece.
    pub sensitivity: Vec<f64>,
    pub utility: f64,
    /// `sum_n U_n - chi_i z_n`, the smooth part of the dual function.
    pub lagrangian: f64,
}

impl<'a> Market<'a> {
    pub fn new(sens: &'a SensitivityMatrices, prosumers: &'a [Prosumer]) -> Result<Self> {
        let b = sens.dim();
        for p in prosumers {
            if p.bus == 0 || p.bus > b {
                return Err(Error::Domain(format!(
                    "prosumer {} is attached to bus {} outside 1..={b}",
                    p.id, p.bus
                )));
            }
        }
        Ok(Self { sens, prosumers })
    }

    pub fn num_buses(&self) -> usize {
        self.sens.dim()
    }

    pub fn total_generation(&self) -> f64 {
        self.prosumers.iter().map(|p| p.g).sum()
    }

    /// `base - R' lambda` per bus.
    pub fn bus_prices(&self, base: f64, lambda: &[f64]) -> Vec<f64> {
        let (up, lo): (Vec<f64>, Vec<f64>) =
            lambda.iter().map(|&l| (l.max(0.0), (-l).max(0.0))).unzip();
        self.sens
            .price_adjustment(&up, &lo)
            .into_iter()
            .map(|adj| base - adj)
            .collect()
    }

    pub fn evaluate(&self, base: f64, lambda: &[f64]) -> Result<Evaluation> {
        check_dim(self.num_buses(), lambda.len())?;
        self.evaluate_at_prices(&self.bus_prices(base, lambda))
    }

    pub fn evaluate_at_prices(&self, chi: &[f64]) -> Result<Evaluation> {
        let b = self.num_buses();
        check_dim(b, chi.len())?;
        let mut z_bus = vec![0.0; b];
        let mut sensitivity = vec![0.0; b];
        let mut bundles = Vec::with_capacity(self.prosumers.len());
        let mut utility = 0.0;
        let mut lagrangian = 0.0;
        for p in self.prosumers {
            let i = p.bus - 1;
            let bundle = p.respond(chi[i])?;
            let u = p.utility(&bundle.d)?;
            utility += u;
            lagrangian += u - chi[i] * bundle.z;
            z_bus[i] += bundle.z;
            sensitivity[i] += p.consumption_sensitivity(chi[i]);
            bundles.push(bundle);
        }
        let y = self.sens.r_times(&z_bus);
        let z0 = z_bus.iter().sum();
        Ok(Evaluation {
            chi: chi.to_vec(),
            bundles,
            z_bus,
            z0,
            y,
            sensitivity,
            utility,
            lagrangian,
        })
    }

    /// Quick necessary test for a nonempty voltage-feasible set: each bus
    /// must be able to reach its band using the extreme net consumptions
    /// (valid because `R` is entrywise nonnegative).
    pub fn check_reachable(&self) -> Result<()> {
        let b = self.num_buses();
        let mut z_min = vec![0.0; b];
        let mut z_max = vec![0.0; b];
        for p in self.prosumers {
            let (mut lo, mut hi) = (p.min_consumption(), p.max_consumption());
            if let Some((elo, ehi)) = p.total_bounds() {
                lo = lo.max(elo);
                hi = hi.min(ehi);
            }
            z_min[p.bus - 1] += lo - p.g;
            z_max[p.bus - 1] += hi - p.g;
        }
        let y_min = self.sens.r_times(&z_min);
        let y_max = self.sens.r_times(&z_max);
        for i in 0..b {
            if y_min[i] > self.sens.v_lower[i] + VOLTAGE_TOL {
                return Err(Error::Infeasible(format!(
                    "bus {} stays below v_min even at minimum consumption",
                    i + 1
                )));
            }
            if y_max[i] < -self.sens.v_upper[i] - VOLTAGE_TOL {
                return Err(Error::Infeasible(format!(
                    "bus {} stays above v_max even at maximum consumption",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarketSolution {
    pub regime: Regime,
    pub bundles: Vec<ConsumptionBundle>,
    pub z_bus: Vec<f64>,
    pub z0: f64,
    pub eta_up: Vec<f64>,
    pub eta_lo: Vec<f64>,
    /// Zero-net price; set only for the balanced piece.
    pub mu: Option<f64>,
    /// Bus prices the consumptions respond to.
    pub bus_price: Vec<f64>,
    /// `sum U - C_NEM(Z0)`.
    pub welfare: f64,
    /// `sum U - pi Z0` with the piece's own price.
    pub objective: f64,
    pub stats: SolverStats,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl MarketSolution {
    fn from_point(
        regime: Regime,
        base: f64,
        mu: Option<f64>,
        point: DualPoint,
        tariff: &Tariff,
    ) -> Self {
        let DualPoint {
            lambda,
            eval,
            stats,
            trace,
        } = point;
        Self {
            regime,
            z0: eval.z0,
            eta_up: lambda.iter().map(|l| l.max(0.0)).collect(),
            eta_lo: lambda.iter().map(|l| (-l).max(0.0)).collect(),
            mu,
            welfare: eval.utility - nem_cost(tariff, eval.z0),
            objective: eval.utility - base * eval.z0,
            bus_price: eval.chi,
            z_bus: eval.z_bus,
            bundles: eval.bundles,
            stats,
            trace,
        }
    }

    pub fn z(&self) -> Vec<f64> {
        self.bundles.iter().map(|b| b.z).collect()
    }

    pub fn d(&self, n: usize) -> &[f64] {
        &self.bundles[n].d
    }

    /// Signed multipliers `eta_up - eta_lo`.
    pub fn lambda(&self) -> Vec<f64> {
        self.eta_up
            .iter()
            .zip(&self.eta_lo)
            .map(|(u, l)| u - l)
            .collect()
    }

    pub fn duals_are_zero(&self) -> bool {
        self.eta_up.iter().chain(&self.eta_lo).all(|&e| e == 0.0)
    }

    /// Price `pi^kappa` before voltage adjustment.
    pub fn base_price(&self, tariff: &Tariff) -> f64 {
        match self.regime {
            Regime::Import => tariff.pi_plus,
            Regime::Export => tariff.pi_minus,
            Regime::Balanced => self.mu.unwrap_or(f64::NAN),
        }
    }
}

/// Solves one piece of the central program.
///
/// The import and export pieces are solved without their sign constraint
/// on `Z0`; [`solve_central`] discards them when the sign comes out wrong.
pub fn solve_subproblem(
    sens: &SensitivityMatrices,
    prosumers: &[Prosumer],
    tariff: &Tariff,
    regime: Regime,
    opts: &SolverOptions,
) -> Result<MarketSolution> {
    tariff.validate()?;
    let market = Market::new(sens, prosumers)?;
    market.check_reachable()?;
    let method = central_solvers().build(&opts.method, &())?;
    match regime {
        Regime::Import | Regime::Export => {
            let price = if regime == Regime::Import {
                tariff.pi_plus
            } else {
                tariff.pi_minus
            };
            let point = method.minimize(&market, price, None, opts)?;
            Ok(MarketSolution::from_point(
                regime, price, None, point, tariff,
            ))
        }
        Regime::Balanced => solve_balanced(&market, tariff, method.as_ref(), opts),
    }
}

fn solve_balanced(
    market: &Market,
    tariff: &Tariff,
    method: &dyn DualMethod,
    opts: &SolverOptions,
) -> Result<MarketSolution> {
    // Z0 of the relaxed piece is non-increasing in its price, so the
    // zero-net price is a monotone root.
    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<(f64, DualPoint)> = None;
    let mut iterations = 0;
    let scale = tariff.pi_plus.abs().max(1.0);
    let root = try_decreasing_root(
        |mu| {
            let point = method.minimize(market, mu, warm.as_deref(), opts)?;
            iterations += point.stats.iterations;
            warm = Some(point.lambda.clone());
            let mut z0 = point.eval.z0;
            if (mu == tariff.pi_minus || mu == tariff.pi_plus) && z0.abs() <= REGIME_TOL {
                z0 = 0.0;
            }
            if best
                .as_ref()
                .is_none_or(|(_, b)| z0.abs() < b.eval.z0.abs())
            {
                best = Some((mu, point));
            }
            Ok(z0)
        },
        tariff.pi_minus,
        tariff.pi_plus,
        0,
        1e-14 * scale,
    );
    let mu = match root {
        Ok(mu) => mu,
        Err(Error::RootBracket { .. }) => {
            return Err(Error::Infeasible(
                "zero net consumption is not reachable within the bracketed prices".into(),
            ))
        }
        Err(e) => return Err(e),
    };
    let (mu, mut point) = match best {
        Some((m, p)) if m == mu => (m, p),
        _ => (mu, method.minimize(market, mu, warm.as_deref(), opts)?),
    };
    point.stats.iterations = iterations;
    Ok(MarketSolution::from_point(
        Regime::Balanced,
        mu,
        Some(mu),
        point,
        tariff,
    ))
}

/// The chosen central solution together with every piece that was solved.
#[derive(Debug, Clone, Serialize)]
pub struct CentralSolution {
    pub solution: MarketSolution,
    pub import: MarketSolution,
    /// Solved only when neither signed piece has the matching sign.
    pub balanced: Option<MarketSolution>,
    pub export: MarketSolution,
}

impl CentralSolution {
    pub fn regime(&self) -> Regime {
        self.solution.regime
    }

    pub fn welfare(&self) -> f64 {
        self.solution.welfare
    }
}

/// Maximizes `sum U - C_NEM(Z0)` subject to device limits, envelopes and
/// voltage limits.
///
/// The import (export) piece is optimal for the full program whenever its
/// net consumption is positive (negative), since the NEM cost coincides
/// with its linear price there and lies above it elsewhere. Otherwise the
/// optimum has `Z0 = 0` and the balanced piece is returned.
pub fn solve_central(
    sens: &SensitivityMatrices,
    prosumers: &[Prosumer],
    tariff: &Tariff,
    opts: &SolverOptions,
) -> Result<CentralSolution> {
    let import = solve_subproblem(sens, prosumers, tariff, Regime::Import, opts)?;
    let export = solve_subproblem(sens, prosumers, tariff, Regime::Export, opts)?;
    let import_ok = import.z0 > REGIME_TOL;
    let export_ok = export.z0 < -REGIME_TOL;
    let balanced = if import_ok || export_ok {
        None
    } else {
        match solve_subproblem(sens, prosumers, tariff, Regime::Balanced, opts) {
            Ok(sol) => Some(sol),
            Err(Error::Infeasible(msg)) => {
                log::debug!("balanced piece infeasible: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    };
    let solution = match (import_ok, export_ok) {
        (true, true) => {
            if import.welfare >= export.welfare {
                import.clone()
            } else {
                export.clone()
            }
        }
        (true, false) => import.clone(),
        (false, true) => export.clone(),
        (false, false) => balanced.clone().ok_or_else(|| {
            Error::Infeasible("no sign-consistent piece of the central program".into())
        })?,
    };

    for other in [Some(&import), balanced.as_ref(), Some(&export)]
        .into_iter()
        .flatten()
    {
        let consistent = match other.regime {
            Regime::Import => other.z0 >= -REGIME_TOL,
            Regime::Export => other.z0 <= REGIME_TOL,
            Regime::Balanced => true,
        };
        if consistent && other.welfare > solution.welfare + 1e-9 * solution.welfare.abs().max(1.0) {
            log::warn!(
                "{} piece has higher welfare ({}) than the selected {} piece ({})",
                other.regime,
                other.welfare,
                solution.regime,
                solution.welfare
            );
        }
    }

    Ok(CentralSolution {
        solution,
        import,
        balanced,
        export,
    })
}
