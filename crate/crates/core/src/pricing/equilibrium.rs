//! Checks that posted prices decentralize the central solution.

use serde::Serialize;

use super::{settle, PriceSchedule};
use crate::error::{Error, Result};
use crate::network::check_dim;
use crate::prosumer::Prosumer;
use crate::welfare::{MarketSolution, Tariff};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    /// Largest device-level gap between a best response and the central
    /// consumption, kWh.
    pub max_deviation: f64,
    pub worst_prosumer: Option<usize>,
    /// `sum (U_n - final payment_n)` minus the central welfare.
    pub welfare_gap: f64,
    pub operator_balance: f64,
}

impl EquilibriumReport {
    /// Fails with the offending prosumer when a best response strays from
    /// the central solution by more than `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        if self.max_deviation > tol {
            return Err(Error::EquilibriumViolation {
                prosumer: self.worst_prosumer.unwrap_or(0),
                deviation: self.max_deviation,
                tol,
            });
        }
        Ok(())
    }
}

pub fn verify_equilibrium(
    prosumers: &[Prosumer],
    tariff: &Tariff,
    schedule: &PriceSchedule,
    central: &MarketSolution,
) -> Result<EquilibriumReport> {
    check_dim(prosumers.len(), central.bundles.len())?;
    let mut max_deviation = 0.0;
    let mut worst_prosumer = None;
    let mut z = Vec::with_capacity(prosumers.len());
    let mut utility = 0.0;
    for (p, target) in prosumers.iter().zip(&central.bundles) {
        let bundle = p.respond(schedule.price_at(p.bus))?;
        for (a, b) in bundle.d.iter().zip(&target.d) {
            let dev = (a - b).abs();
            if dev > max_deviation {
                max_deviation = dev;
                worst_prosumer = Some(p.id);
            }
        }
        utility += p.utility(&bundle.d)?;
        z.push(bundle.z);
    }
    let settlement = settle(prosumers, tariff, schedule, &z)?;
    Ok(EquilibriumReport {
        max_deviation,
        worst_prosumer,
        welfare_gap: utility - settlement.total_payment - central.welfare,
        operator_balance: settlement.operator_balance,
    })
}
