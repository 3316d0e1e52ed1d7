//! Ex-ante bus prices that decentralize the central solution, the
//! generation thresholds that decide the regime, and the balanced-regime
//! price `mu`.

mod equilibrium;
mod settlement;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{check_dim, SensitivityMatrices};
use crate::prosumer::Prosumer;
use crate::roots::try_decreasing_root;
use crate::welfare::{CentralSolution, Regime, Tariff, REGIME_TOL};

pub use equilibrium::{verify_equilibrium, EquilibriumReport};
pub use settlement::{settle, AllocationLedger, Settlement, SettlementRow};

/// `base - R' (eta_up - eta_lo)` per bus.
pub fn bus_prices(
    sens: &SensitivityMatrices,
    base: f64,
    eta_up: &[f64],
    eta_lo: &[f64],
) -> Result<Vec<f64>> {
    check_dim(sens.dim(), eta_up.len())?;
    check_dim(sens.dim(), eta_lo.len())?;
    Ok(sens
        .price_adjustment(eta_up, eta_lo)
        .into_iter()
        .map(|a| base - a)
        .collect())
}

/// Total consumption `sum_n 1'd_n` when every prosumer responds to the
/// price of its bus.
pub fn total_consumption(prosumers: &[Prosumer], prices: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for p in prosumers {
        let bundle = p.respond(prices[p.bus - 1])?;
        total += bundle.z + p.g;
    }
    Ok(total)
}

/// Generation levels separating the regimes: the community imports when
/// total generation is below `sigma1`, exports above `sigma2` and balances
/// in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Thresholds {
    pub fn from_central(prosumers: &[Prosumer], central: &CentralSolution) -> Result<Self> {
        Ok(Self {
            sigma1: total_consumption(prosumers, &central.import.bus_price)?,
            sigma2: total_consumption(prosumers, &central.export.bus_price)?,
        })
    }

    pub fn classify(&self, generation: f64) -> Regime {
        if generation < self.sigma1 - REGIME_TOL {
            Regime::Import
        } else if generation > self.sigma2 + REGIME_TOL {
            Regime::Export
        } else {
            Regime::Balanced
        }
    }
}

/// Base price at which the responses to `mu - R'(eta_up - eta_lo)` sum to
/// zero net consumption, with the multipliers held fixed. The search starts
/// from `[pi- - D, pi+ + D]`, `D` the largest price adjustment.
pub fn solve_mu(
    sens: &SensitivityMatrices,
    prosumers: &[Prosumer],
    tariff: &Tariff,
    eta_up: &[f64],
    eta_lo: &[f64],
) -> Result<f64> {
    let adj = bus_prices(sens, 0.0, eta_up, eta_lo)?;
    let generation: f64 = prosumers.iter().map(|p| p.g).sum();
    let net = |mu: f64| -> Result<f64> {
        let prices: Vec<f64> = adj.iter().map(|a| mu + a).collect();
        Ok(total_consumption(prosumers, &prices)? - generation)
    };
    let scale = tariff.pi_plus.abs().max(1.0);
    let delta = adj.iter().map(|a| a.abs()).fold(0.0, f64::max) + 1e-9 * scale;
    try_decreasing_root(
        net,
        tariff.pi_minus - delta,
        tariff.pi_plus + delta,
        10,
        1e-14 * scale,
    )
}

/// The posted prices of one period.
#[derive(Debug, Clone, Serialize)]
pub struct PriceSchedule {
    pub regime: Regime,
    /// `pi+`, `pi-` or `mu`.
    pub base_price: f64,
    pub bus_price: Vec<f64>,
    pub eta_up: Vec<f64>,
    pub eta_lo: Vec<f64>,
    pub thresholds: Thresholds,
    pub generation: f64,
}

impl PriceSchedule {
    pub fn price_at(&self, bus: usize) -> f64 {
        self.bus_price[bus - 1]
    }
}

/// Posts the bus prices of the regime the thresholds select, using that
/// regime's voltage multipliers.
pub fn ex_ante_prices(
    sens: &SensitivityMatrices,
    prosumers: &[Prosumer],
    tariff: &Tariff,
    central: &CentralSolution,
) -> Result<PriceSchedule> {
    let thresholds = Thresholds::from_central(prosumers, central)?;
    let generation: f64 = prosumers.iter().map(|p| p.g).sum();
    let regime = thresholds.classify(generation);
    if regime != central.regime() {
        return Err(Error::Infeasible(format!(
            "thresholds select {regime} but the central solution is {}",
            central.regime()
        )));
    }
    let sol = &central.solution;
    let base_price = match regime {
        Regime::Import => tariff.pi_plus,
        Regime::Export => tariff.pi_minus,
        Regime::Balanced => {
            let mu = solve_mu(sens, prosumers, tariff, &sol.eta_up, &sol.eta_lo)?;
            if let Some(central_mu) = sol.mu {
                if (mu - central_mu).abs() > 1e-8 * tariff.pi_plus.abs().max(1.0) {
                    log::warn!("posted mu {mu} differs from the central mu {central_mu}");
                }
            }
            mu
        }
    };
    Ok(PriceSchedule {
        regime,
        base_price,
        bus_price: bus_prices(sens, base_price, &sol.eta_up, &sol.eta_lo)?,
        eta_up: sol.eta_up.clone(),
        eta_lo: sol.eta_lo.clone(),
        thresholds,
        generation,
    })
}
