//! KKT residuals of a central solution against the full NEM program.

use serde::Serialize;

use super::{MarketSolution, Regime, Tariff};
use crate::error::Result;
use crate::network::{check_dim, SensitivityMatrices};
use crate::prosumer::{EnvelopeSide, Prosumer};

/// Largest violation of each condition group. Voltage terms are in p.u.^2,
/// consumption terms in kWh and price terms in $/kWh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub stationarity: f64,
    pub balance: f64,
    /// Sign of `Z0` against the regime, and `mu` against `[pi-, pi+]`.
    pub regime: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.primal,
            self.dual,
            self.complementarity,
            self.stationarity,
            self.balance,
            self.regime,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn verify_kkt(
    sens: &SensitivityMatrices,
    prosumers: &[Prosumer],
    tariff: &Tariff,
    sol: &MarketSolution,
) -> Result<KktReport> {
    let b = sens.dim();
    check_dim(prosumers.len(), sol.bundles.len())?;
    check_dim(b, sol.z_bus.len())?;
    let mut rep = KktReport::default();

    let mut z_bus = vec![0.0; b];
    for (p, bundle) in prosumers.iter().zip(&sol.bundles) {
        check_dim(p.num_devices(), bundle.d.len())?;
        let chi = sol.bus_price[p.bus - 1];
        let total: f64 = bundle.d.iter().sum();
        z_bus[p.bus - 1] += total - p.g;
        rep.balance = rep.balance.max((total - p.g - bundle.z).abs());

        if let Some((lo, hi)) = p.total_bounds() {
            rep.primal = rep.primal.max(lo - total).max(total - hi);
        }
        let effective = match bundle.pinned {
            None => chi,
            Some(side) => {
                // the envelope multiplier must push the right way
                let wrong = match side {
                    EnvelopeSide::Upper => chi - bundle.shadow_price,
                    EnvelopeSide::Lower => bundle.shadow_price - chi,
                };
                rep.dual = rep.dual.max(wrong);
                bundle.shadow_price
            }
        };
        for (dev, &d) in p.devices.iter().zip(&bundle.d) {
            rep.primal = rep.primal.max(dev.d_lo - d).max(d - dev.d_hi);
            let g = dev.utility.marginal(d) - effective;
            let scale = 1e-12 * (dev.d_hi - dev.d_lo).abs().max(1.0);
            let s = if d <= dev.d_lo + scale {
                (g).max(0.0)
            } else if d >= dev.d_hi - scale {
                (-g).max(0.0)
            } else {
                g.abs()
            };
            rep.stationarity = rep.stationarity.max(s);
        }
    }
    for i in 0..b {
        rep.balance = rep.balance.max((z_bus[i] - sol.z_bus[i]).abs());
    }
    let z0: f64 = z_bus.iter().sum();
    rep.balance = rep.balance.max((z0 - sol.z0).abs());

    let y = sens.r_times(&z_bus);
    for i in 0..b {
        let up = -sens.v_upper[i] - y[i];
        let lo = y[i] - sens.v_lower[i];
        rep.primal = rep.primal.max(up).max(lo);
        let (eu, el) = (sol.eta_up[i], sol.eta_lo[i]);
        rep.dual = rep.dual.max(-eu).max(-el);
        rep.complementarity = rep
            .complementarity
            .max(eu.max(0.0) * up.abs())
            .max(el.max(0.0) * lo.abs());
    }

    let base = sol.base_price(tariff);
    let adj = sens.price_adjustment(&sol.eta_up, &sol.eta_lo);
    for i in 0..b {
        rep.stationarity = rep
            .stationarity
            .max((sol.bus_price[i] - (base - adj[i])).abs());
    }

    rep.regime = match sol.regime {
        Regime::Import => (-z0).max(0.0),
        Regime::Export => z0.max(0.0),
        Regime::Balanced => z0
            .abs()
            .max(tariff.pi_minus - base)
            .max(base - tariff.pi_plus)
            .max(0.0),
    };
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_sensitivities, Bus, Line, RadialNetwork};
    use crate::prosumer::Device;
    use crate::welfare::{solve_central, SolverOptions};

    #[test]
    fn central_solution_satisfies_kkt_and_tampering_is_caught() {
        let net = RadialNetwork::new(
            vec![Bus {
                id: 1,
                q: 0.0,
                name: None,
            }],
            vec![Line {
                from: 0,
                to: 1,
                r: 0.1,
                x: 0.0,
            }],
            1.0,
            0.6f64.sqrt(),
            2.0,
        )
        .unwrap();
        let sens = build_sensitivities(&net);
        let ps = vec![Prosumer::new(
            1,
            1,
            vec![Device::quadratic(10.0, 2.0, 0.0, 10.0).unwrap()],
            0.0,
            None,
        )
        .unwrap()];
        let t = Tariff::new(4.0, 2.0).unwrap();
        let c = solve_central(&sens, &ps, &t, &SolverOptions::default()).unwrap();
        let rep = verify_kkt(&sens, &ps, &t, &c.solution).unwrap();
        assert!(rep.passes(1e-9), "{rep:?}");

        let mut bad = c.solution.clone();
        bad.eta_lo[0] *= 0.5;
        assert!(!verify_kkt(&sens, &ps, &t, &bad).unwrap().passes(1e-3));
    }
}
