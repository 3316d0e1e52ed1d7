//! Prosumer DER model and price response.
//!
//! A prosumer owns a bundle of flexible devices with concave utilities and
//! a known renewable output `g`. Facing a linear price, each device
//! consumes where its marginal utility meets the price, clipped to its
//! flexibility limits. With an operating envelope the bundle total is
//! additionally projected into `[z_lo + g, z_hi + g]`, and the pinned total
//! is split across devices by equalizing marginal utility.

mod file;
mod utility;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::roots::decreasing_root;

pub use file::{load_prosumers, parse_prosumers, DeviceSpec, ProsumerSpec};
pub use utility::{utility_families, Calibration, CappedQuadratic, Utility};

/// Tolerance on the pinned bundle total when an envelope binds (kWh).
pub const ENVELOPE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Device {
    pub utility: Arc<dyn Utility>,
    pub d_lo: f64,
    pub d_hi: f64,
}

impl Device {
    pub fn new(utility: Arc<dyn Utility>, d_lo: f64, d_hi: f64) -> Result<Self> {
        if !(d_lo >= 0.0 && d_lo <= d_hi && d_hi.is_finite()) {
            return Err(Error::Domain(format!(
                "device bounds must satisfy 0 <= d_lo <= d_hi, got [{d_lo}, {d_hi}]"
            )));
        }
        Ok(Self {
            utility,
            d_lo,
            d_hi,
        })
    }

    pub fn quadratic(alpha: f64, beta: f64, d_lo: f64, d_hi: f64) -> Result<Self> {
        Self::new(Arc::new(CappedQuadratic::new(alpha, beta)?), d_lo, d_hi)
    }

    /// Clipped inverse marginal utility.
    pub fn demand(&self, price: f64) -> f64 {
        self.utility
            .inverse_marginal(price)
            .clamp(self.d_lo, self.d_hi)
    }

    /// Whether `price` puts this device strictly inside its limits.
    pub fn is_free(&self, price: f64) -> bool {
        let f = self.utility.inverse_marginal(price);
        f > self.d_lo && f < self.d_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub z_lo: f64,
    pub z_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct Prosumer {
    pub id: usize,
    pub bus: usize,
    pub devices: Vec<Device>,
    pub g: f64,
    pub envelope: Option<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumptionBundle {
    pub d: Vec<f64>,
    pub z: f64,
    /// Common marginal utility of the free devices: the posted price, or
    /// the internal price of the bundle when the envelope binds.
    pub shadow_price: f64,
    pub pinned: Option<EnvelopeSide>,
}

impl Prosumer {
    pub fn new(
        id: usize,
        bus: usize,
        devices: Vec<Device>,
        g: f64,
        envelope: Option<Envelope>,
    ) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::Domain(format!("prosumer {id} has no devices")));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::Domain(format!(
                "prosumer {id} needs finite g >= 0, got {g}"
            )));
        }
        if let Some(env) = envelope {
            if !(env.z_lo <= 0.0 && env.z_hi >= 0.0) {
                return Err(Error::Domain(format!(
                    "prosumer {id} envelope must satisfy z_lo <= 0 <= z_hi, got [{}, {}]",
                    env.z_lo, env.z_hi
                )));
            }
        }
        Ok(Self {
            id,
            bus,
            devices,
            g,
            envelope,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn with_generation(&self, g: f64) -> Self {
        Self { g, ..self.clone() }
    }

    pub fn max_consumption(&self) -> f64 {
        self.devices.iter().map(|d| d.d_hi).sum()
    }

    pub fn min_consumption(&self) -> f64 {
        self.devices.iter().map(|d| d.d_lo).sum()
    }

    /// Bounds on the bundle total `1'd` imposed by the envelope, if any.
    pub fn total_bounds(&self) -> Option<(f64, f64)> {
        self.envelope.map(|e| (e.z_lo + self.g, e.z_hi + self.g))
    }

    pub fn utility(&self, d: &[f64]) -> Result<f64> {
        self.check_len(d.len())?;
        let mut total = 0.0;
        for (dev, &dk) in self.devices.iter().zip(d) {
            if !(dk >= 0.0) {
                return Err(Error::Domain(format!(
                    "prosumer {} consumption must be >= 0, got {dk}",
                    self.id
                )));
            }
            total += dev.utility.value(dk);
        }
        Ok(total)
    }

    pub fn inverse_marginal(&self, price: f64) -> Vec<f64> {
        self.devices
            .iter()
            .map(|d| d.utility.inverse_marginal(price))
            .collect()
    }

    /// Surplus-maximizing bundle under a linear price, ignoring any envelope.
    pub fn best_response(&self, price: f64) -> ConsumptionBundle {
        let d: Vec<f64> = self.devices.iter().map(|dev| dev.demand(price)).collect();
        let z = d.iter().sum::<f64>() - self.g;
        ConsumptionBundle {
            d,
            z,
            shadow_price: price,
            pinned: None,
        }
    }

    /// Best response with the bundle total held inside the envelope.
    pub fn best_response_enveloped(&self, price: f64) -> Result<ConsumptionBundle> {
        let Some((lo, hi)) = self.total_bounds() else {
            return Ok(self.best_response(price));
        };
        if lo > self.max_consumption() || hi < self.min_consumption() {
            return Err(Error::EnvelopeInfeasible { prosumer: self.id });
        }
        let free = self.best_response(price);
        let total: f64 = free.d.iter().sum();
        let (target, side) = if total > hi {
            (hi, EnvelopeSide::Upper)
        } else if total < lo {
            (lo, EnvelopeSide::Lower)
        } else {
            return Ok(free);
        };
        let (d, shadow_price) = self.fill_to_total(target, price)?;
        Ok(ConsumptionBundle {
            z: target - self.g,
            d,
            shadow_price,
            pinned: Some(side),
        })
    }

    /// Response to a posted price, honoring the envelope when present.
    pub fn respond(&self, price: f64) -> Result<ConsumptionBundle> {
        if self.envelope.is_some() {
            self.best_response_enveloped(price)
        } else {
            Ok(self.best_response(price))
        }
    }

    /// Bundle total `1'd` of the response to `price`, with the envelope
    /// projection applied but without splitting it across devices.
    pub fn aggregate_consumption(&self, price: f64) -> f64 {
        let total: f64 = self.devices.iter().map(|d| d.demand(price)).sum();
        match self.total_bounds() {
            Some((lo, hi)) => total.clamp(lo, hi),
            None => total,
        }
    }

    /// `-d(1'd)/d(price)` of the response, taken on the current piece.
    pub fn consumption_sensitivity(&self, price: f64) -> f64 {
        if let Some((lo, hi)) = self.total_bounds() {
            let total: f64 = self.devices.iter().map(|d| d.demand(price)).sum();
            if total > hi || total < lo {
                return 0.0;
            }
        }
        self.devices
            .iter()
            .filter(|d| d.is_free(price))
            .map(|d| -d.utility.inverse_marginal_slope(price))
            .sum()
    }

    pub fn surplus(&self, d: &[f64], payment: f64) -> Result<f64> {
        Ok(self.utility(d)? - payment)
    }

    pub fn net_consumption(&self, d: &[f64]) -> f64 {
        d.iter().sum::<f64>() - self.g
    }

    /// Splits a fixed bundle total across devices at a common marginal
    /// utility (water-filling), returning the split and that price.
    fn fill_to_total(&self, target: f64, hint: f64) -> Result<(Vec<f64>, f64)> {
        let excess = |nu: f64| self.devices.iter().map(|d| d.demand(nu)).sum::<f64>() - target;
        let x_tol = 1e-14 * hint.abs().max(1.0);
        let nu = decreasing_root(excess, hint - 1.0, hint + 1.0, 60, x_tol)?;
        let d: Vec<f64> = self.devices.iter().map(|dev| dev.demand(nu)).collect();
        let miss = d.iter().sum::<f64>() - target;
        if miss.abs() > ENVELOPE_TOL * target.abs().max(1.0) {
            return Err(Error::SolverDiverged {
                iterations: 0,
                dual_residual: miss.abs(),
                primal_residual: miss.abs(),
            });
        }
        Ok((d, nu))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        crate::network::check_dim(self.devices.len(), len)
    }
}
