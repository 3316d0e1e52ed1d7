//! Backward/forward sweep for the nonlinear DistFlow equations.

use serde::Serialize;

use super::{check_dim, RadialNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DistFlowSweep {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DistFlowSweep {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSolution {
    /// Squared voltage magnitudes, p.u.^2, indexed by bus id - 1.
    pub v2: Vec<f64>,
    /// Active flow into each bus on its feeding line (p.u.).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Squared current magnitude of each feeding line.
    pub current_sq: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl DistFlowSweep {
    /// Solves for squared voltages given bus net consumption in prosumer
    /// energy units (converted with the network's energy scale).
    ///
    /// Each pass accumulates line flows leaf-to-root including the
    /// `r * l` and `x * l` loss terms, then propagates voltages
    /// root-to-leaf. The first pass has zero losses and so reproduces the
    /// linear model exactly.
    pub fn solve(&self, net: &RadialNetwork, z_bus: &[f64]) -> Result<SweepSolution> {
        let n = net.num_buses();
        check_dim(n, z_bus.len())?;
        let scale = net.energy_to_pu();
        let p_load: Vec<f64> = z_bus.iter().map(|z| z * scale).collect();
        let q_load = net.reactive_loads();
        let v0sq = net.v0() * net.v0();

        // index 0 is the slack; bus b at index b
        let mut v2 = vec![v0sq; n + 1];
        let mut ell = vec![0.0; n + 1];
        let mut p = vec![0.0; n + 1];
        let mut q = vec![0.0; n + 1];
        let order = net.bfs_order();

        let mut residual = f64::INFINITY;
        for iter in 1..=self.max_iter {
            p.iter_mut().for_each(|x| *x = 0.0);
            q.iter_mut().for_each(|x| *x = 0.0);
            for &b in order.iter().rev() {
                let line = net.feeding_line(b);
                p[b] += p_load[b - 1] + line.r * ell[b];
                q[b] += q_load[b - 1] + line.x * ell[b];
                p[line.from] += p[b];
                q[line.from] += q[b];
            }

            residual = 0.0;
            for &b in order {
                let line = net.feeding_line(b);
                let vi = v2[line.from];
                let vj = vi - 2.0 * (line.r * p[b] + line.x * q[b])
                    + (line.r * line.r + line.x * line.x) * ell[b];
                if !vj.is_finite() || vj <= 0.0 {
                    return Err(Error::PowerFlowDiverged {
                        iterations: iter,
                        residual: f64::INFINITY,
                    });
                }
                residual = f64::max(residual, (vj - v2[b]).abs());
                v2[b] = vj;
            }
            for &b in order {
                let from = net.feeding_line(b).from;
                ell[b] = (p[b] * p[b] + q[b] * q[b]) / v2[from];
            }

            if residual < self.tol {
                return Ok(SweepSolution {
                    v2: v2[1..].to_vec(),
                    p: p[1..].to_vec(),
                    q: q[1..].to_vec(),
                    current_sq: ell[1..].to_vec(),
                    iterations: iter,
                    residual,
                });
            }
        }
        Err(Error::PowerFlowDiverged {
            iterations: self.max_iter,
            residual,
        })
    }
}

/// Squared voltages from the exact DistFlow model with default settings.
pub fn exact_voltages(net: &RadialNetwork, z_bus: &[f64]) -> Result<Vec<f64>> {
    DistFlowSweep::default().solve(net, z_bus).map(|s| s.v2)
}
