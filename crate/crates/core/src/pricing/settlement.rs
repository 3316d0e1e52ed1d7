//! Ex-post settlement: prosumers are charged at their bus price, then the
//! difference to the NEM rate the operator actually faces is allocated back
//! so that the operator's books balance.

use std::collections::BTreeMap;

use serde::Serialize;

use super::PriceSchedule;
use crate::error::{Error, Result};
use crate::network::check_dim;
use crate::prosumer::Prosumer;
use crate::welfare::{nem_cost, Tariff};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlementRow {
    pub prosumer_id: usize,
    pub bus: usize,
    pub z_kwh: f64,
    pub bus_price: f64,
    pub ex_ante_charge: f64,
    pub allocation: f64,
    pub final_payment: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Settlement {
    pub rows: Vec<SettlementRow>,
    pub z0: f64,
    /// NEM rate applied to `z0`; `pi+` when `z0` is exactly zero.
    pub nem_rate: f64,
    pub nem_cost: f64,
    pub total_payment: f64,
    /// Collected payments minus the NEM bill.
    pub operator_balance: f64,
}

impl Settlement {
    /// Fails unless the operator balance and every deviation of a payment
    /// from `nem_rate * z` are within `tol`, relative to magnitudes of at
    /// least one dollar.
    pub fn check(&self, tol: f64) -> Result<()> {
        let balance = self.operator_balance.abs() / self.nem_cost.abs().max(1.0);
        if !(balance <= tol) {
            return Err(Error::Settlement(format!(
                "operator balance {} against NEM cost {}",
                self.operator_balance, self.nem_cost
            )));
        }
        for r in &self.rows {
            let owed = self.nem_rate * r.z_kwh;
            if !((r.final_payment - owed).abs() <= tol * owed.abs().max(1.0)) {
                return Err(Error::Settlement(format!(
                    "prosumer {} pays {} instead of {}",
                    r.prosumer_id, r.final_payment, owed
                )));
            }
        }
        Ok(())
    }
}

/// Settles realized net consumptions `z` (one per prosumer).
pub fn settle(
    prosumers: &[Prosumer],
    tariff: &Tariff,
    schedule: &PriceSchedule,
    z: &[f64],
) -> Result<Settlement> {
    check_dim(prosumers.len(), z.len())?;
    let z0: f64 = z.iter().sum();
    let nem_rate = tariff.rate(z0);
    let rows: Vec<SettlementRow> = prosumers
        .iter()
        .zip(z)
        .map(|(p, &zn)| {
            let price = schedule.price_at(p.bus);
            let ex_ante_charge = price * zn;
            let allocation = (price - nem_rate) * zn;
            SettlementRow {
                prosumer_id: p.id,
                bus: p.bus,
                z_kwh: zn,
                bus_price: price,
                ex_ante_charge,
                allocation,
                final_payment: ex_ante_charge - allocation,
            }
        })
        .collect();
    let total_payment: f64 = rows.iter().map(|r| r.final_payment).sum();
    let nem_cost = nem_cost(tariff, z0);
    Ok(Settlement {
        rows,
        z0,
        nem_rate,
        nem_cost,
        total_payment,
        operator_balance: total_payment - nem_cost,
    })
}

/// Running totals of allocations and payments across periods.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AllocationLedger {
    pub periods: usize,
    pub allocation: BTreeMap<usize, f64>,
    pub payment: BTreeMap<usize, f64>,
    pub operator_balance: f64,
}

impl AllocationLedger {
    pub fn record(&mut self, settlement: &Settlement) {
        self.periods += 1;
        for row in &settlement.rows {
            *self.allocation.entry(row.prosumer_id).or_default() += row.allocation;
            *self.payment.entry(row.prosumer_id).or_default() += row.final_payment;
        }
        self.operator_balance += settlement.operator_balance;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::Thresholds;
    use crate::prosumer::Device;
    use crate::welfare::Regime;

    fn schedule(prices: Vec<f64>) -> PriceSchedule {
        let n = prices.len();
        PriceSchedule {
            regime: Regime::Import,
            base_price: 4.0,
            bus_price: prices,
            eta_up: vec![0.0; n],
            eta_lo: vec![0.0; n],
            thresholds: Thresholds {
                sigma1: 0.0,
                sigma2: 0.0,
            },
            generation: 0.0,
        }
    }

    fn prosumers() -> Vec<Prosumer> {
        (1..=2)
            .map(|b| {
                Prosumer::new(
                    b,
                    b,
                    vec![Device::quadratic(10.0, 2.0, 0.0, 10.0).unwrap()],
                    0.0,
                    None,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn allocations_close_the_books() {
        let t = Tariff::new(4.0, 2.0).unwrap();
        let s = settle(&prosumers(), &t, &schedule(vec![4.5, 5.0]), &[2.0, 1.0]).unwrap();
        assert_eq!(s.z0, 3.0);
        assert_eq!(s.nem_cost, 12.0);
        assert_eq!(s.rows[0].ex_ante_charge, 9.0);
        assert_eq!(s.rows[0].allocation, 1.0);
        assert_eq!(s.rows[1].allocation, 1.0);
        assert!(s.operator_balance.abs() < 1e-12);
    }

    #[test]
    fn zero_net_uses_retail_rate() {
        let t = Tariff::new(4.0, 2.0).unwrap();
        let s = settle(&prosumers(), &t, &schedule(vec![3.0, 3.0]), &[1.0, -1.0]).unwrap();
        assert_eq!(s.nem_rate, 4.0);
        assert_eq!(s.nem_cost, 0.0);
        assert!(s.operator_balance.abs() < 1e-12);
    }

    #[test]
    fn ledger_accumulates() {
        let t = Tariff::new(4.0, 2.0).unwrap();
        let s = settle(&prosumers(), &t, &schedule(vec![4.5, 5.0]), &[2.0, 1.0]).unwrap();
        let mut ledger = AllocationLedger::default();
        ledger.record(&s);
        ledger.record(&s);
        assert_eq!(ledger.periods, 2);
        assert_eq!(ledger.allocation[&1], 2.0);
        assert_eq!(ledger.payment[&2], 8.0);
    }
}
