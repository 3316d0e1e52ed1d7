//! Radial feeder topology and voltage models.
//!
//! Squared voltage magnitudes are affine in bus net consumption under the
//! loss-free (LinDistFlow) linearization: `v = -R Z + v_hat`. The exact
//! DistFlow recursion is solved by a backward/forward sweep in [`sweep`]
//! and is used to report how far the linear model is from the true flow.

mod feeder_file;
pub mod sweep;
mod voltage_model;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use feeder_file::{load_feeder, parse_feeder, FeederFile};
pub use sweep::{exact_voltages, DistFlowSweep, SweepSolution};
pub use voltage_model::{voltage_models, LinDistFlow, SweepModel, VoltageModel};

/// Slack on closed voltage intervals, in p.u.^2.
pub const VOLTAGE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Fixed reactive consumption (p.u.).
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

/// A validated radial network rooted at the slack bus 0.
///
/// Buses are stored sorted by id, so bus `i` lives at index `i - 1`.
#[derive(Debug, Clone)]
pub struct RadialNetwork {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    v0: f64,
    v_min: f64,
    v_max: f64,
    energy_to_pu: f64,
    /// Index into `lines` of the line feeding each bus.
    feeding_line: Vec<usize>,
    /// Buses (by id) in breadth-first order from the slack.
    order: Vec<usize>,
}

impl RadialNetwork {
    pub fn new(
        mut buses: Vec<Bus>,
        lines: Vec<Line>,
        v0: f64,
        v_min: f64,
        v_max: f64,
    ) -> Result<Self> {
        buses.sort_by_key(|b| b.id);
        let n = buses.len();
        if n == 0 {
            return Err(Error::Topology("network has no buses".into()));
        }
        for (k, bus) in buses.iter().enumerate() {
            if bus.id != k + 1 {
                return Err(Error::Topology(format!(
                    "bus ids must be contiguous 1..{n}, found id {} at position {}",
                    bus.id,
                    k + 1
                )));
            }
            if !bus.q.is_finite() {
                return Err(Error::Domain(format!("bus {} has non-finite q", bus.id)));
            }
        }
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(Error::Domain(format!(
                "slack voltage must be positive, got {v0}"
            )));
        }
        if !(v_min > 0.0 && v_min < v_max && v_max.is_finite()) {
            return Err(Error::Domain(format!(
                "voltage bounds must satisfy 0 < v_min < v_max, got [{v_min}, {v_max}]"
            )));
        }
        if lines.len() != n {
            return Err(Error::Topology(format!(
                "a radial network with {n} buses needs {n} lines, found {}",
                lines.len()
            )));
        }

        let mut feeding_line = vec![usize::MAX; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for (k, line) in lines.iter().enumerate() {
            if !(line.r >= 0.0 && line.x >= 0.0 && line.r.is_finite() && line.x.is_finite()) {
                return Err(Error::Domain(format!(
                    "line {}->{} needs finite r, x >= 0",
                    line.from, line.to
                )));
            }
            if line.to == 0 || line.to > n || line.from > n || line.from == line.to {
                return Err(Error::Topology(format!(
                    "line {}->{} references an invalid bus",
                    line.from, line.to
                )));
            }
            if feeding_line[line.to - 1] != usize::MAX {
                return Err(Error::Topology(format!(
                    "bus {} is fed by more than one line",
                    line.to
                )));
            }
            feeding_line[line.to - 1] = k;
            children[line.from].push(line.to);
        }

        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n + 1];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(b) = queue.pop_front() {
            for &c in &children[b] {
                if seen[c] {
                    return Err(Error::Topology(format!("bus {c} is reached twice")));
                }
                seen[c] = true;
                order.push(c);
                queue.push_back(c);
            }
        }
        if order.len() != n {
            let missing: Vec<usize> = (1..=n).filter(|&b| !seen[b]).collect();
            return Err(Error::Topology(format!(
                "buses {missing:?} are not reachable from the slack bus"
            )));
        }

        Ok(Self {
            buses,
            lines,
            v0,
            v_min,
            v_max,
            energy_to_pu: 1.0,
            feeding_line,
            order,
        })
    }

    /// Sets the conversion from prosumer energy units (kWh per netting
    /// period) to per-unit bus power. Defaults to 1.
    pub fn with_energy_to_pu(mut self, scale: f64) -> Self {
        self.energy_to_pu = scale;
        self
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn energy_to_pu(&self) -> f64 {
        self.energy_to_pu
    }

    pub fn reactive_loads(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.q).collect()
    }

    /// The line feeding `bus` (1-based id).
    pub fn feeding_line(&self, bus: usize) -> &Line {
        &self.lines[self.feeding_line[bus - 1]]
    }

    /// Parent bus id of `bus`; 0 is the slack.
    pub fn parent(&self, bus: usize) -> usize {
        self.feeding_line(bus).from
    }

    /// Bus ids in breadth-first order from the slack.
    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    /// Replaces the reactive loads, keeping topology and bounds.
    pub fn with_reactive_loads(&self, q: &[f64]) -> Result<Self> {
        check_dim(self.num_buses(), q.len())?;
        let mut out = self.clone();
        for (bus, &qi) in out.buses.iter_mut().zip(q) {
            bus.q = qi;
        }
        Ok(out)
    }

    /// Replaces the voltage limits, keeping topology.
    pub fn with_voltage_limits(&self, v_min: f64, v_max: f64) -> Result<Self> {
        let net = Self::new(
            self.buses.clone(),
            self.lines.clone(),
            self.v0,
            v_min,
            v_max,
        )?;
        Ok(net.with_energy_to_pu(self.energy_to_pu))
    }
}

/// LinDistFlow sensitivities of squared voltages to bus consumption.
///
/// `r` maps bus net consumption in prosumer energy units to p.u.^2, so the
/// per-unit conversion is folded in; `x` maps reactive p.u. loads.
#[derive(Debug, Clone)]
pub struct SensitivityMatrices {
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub v_hat: Vec<f64>,
    /// `v_max^2 - v_hat`: headroom for `-R Z` before the upper limit.
    pub v_upper: Vec<f64>,
    /// `v_hat - v_min^2`: headroom for `R Z` before the lower limit.
    pub v_lower: Vec<f64>,
}

impl SensitivityMatrices {
    pub fn dim(&self) -> usize {
        self.v_hat.len()
    }

    /// `R Z` for a bus vector.
    pub fn r_times(&self, z: &[f64]) -> Vec<f64> {
        mat_vec(&self.r, z)
    }

    /// Per-bus price adjustment `sum_j R_ji (eta_up_j - eta_lo_j)`.
    pub fn price_adjustment(&self, eta_up: &[f64], eta_lo: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = eta_up.iter().zip(eta_lo).map(|(u, l)| u - l).collect();
        let rt = self.r.transpose();
        mat_vec(&rt, &diff)
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let out = m * DVector::from_column_slice(v);
    out.iter().copied().collect()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

pub fn build_sensitivities(net: &RadialNetwork) -> SensitivityMatrices {
    let n = net.num_buses();
    // Cumulative path resistance/reactance from the slack, plus depth.
    let mut cum_r = vec![0.0; n + 1];
    let mut cum_x = vec![0.0; n + 1];
    let mut depth = vec![0usize; n + 1];
    for &b in net.bfs_order() {
        let line = net.feeding_line(b);
        cum_r[b] = cum_r[line.from] + line.r;
        cum_x[b] = cum_x[line.from] + line.x;
        depth[b] = depth[line.from] + 1;
    }
    let parent = |b: usize| if b == 0 { 0 } else { net.parent(b) };
    let lca = |mut a: usize, mut b: usize| {
        while depth[a] > depth[b] {
            a = parent(a);
        }
        while depth[b] > depth[a] {
            b = parent(b);
        }
        while a != b {
            a = parent(a);
            b = parent(b);
        }
        a
    };

    let scale = net.energy_to_pu();
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 1..=n {
        for j in i..=n {
            let c = lca(i, j);
            let (rij, xij) = (2.0 * cum_r[c], 2.0 * cum_x[c]);
            r[(i - 1, j - 1)] = rij * scale;
            r[(j - 1, i - 1)] = rij * scale;
            x[(i - 1, j - 1)] = xij;
            x[(j - 1, i - 1)] = xij;
        }
    }

    let q = net.reactive_loads();
    let xq = mat_vec(&x, &q);
    let v0sq = net.v0() * net.v0();
    let v_hat: Vec<f64> = xq.iter().map(|xqi| v0sq - xqi).collect();
    let vmax2 = net.v_max() * net.v_max();
    let vmin2 = net.v_min() * net.v_min();
    let v_upper = v_hat.iter().map(|vh| vmax2 - vh).collect();
    let v_lower = v_hat.iter().map(|vh| vh - vmin2).collect();

    SensitivityMatrices {
        r,
        x,
        v_hat,
        v_upper,
        v_lower,
    }
}

/// Squared voltages under LinDistFlow: `-R Z + v_hat`.
pub fn lin_voltages(sens: &SensitivityMatrices, z_bus: &[f64]) -> Result<Vec<f64>> {
    check_dim(sens.dim(), z_bus.len())?;
    let rz = sens.r_times(z_bus);
    Ok(rz.iter().zip(&sens.v_hat).map(|(rz, vh)| vh - rz).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusFeasibility {
    pub bus: usize,
    /// Linear squared voltage at this bus.
    pub v2: f64,
    /// `v_upper + (R Z)_i`; negative when the upper limit is exceeded.
    pub upper_margin: f64,
    /// `v_lower - (R Z)_i`; negative when the lower limit is exceeded.
    pub lower_margin: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub buses: Vec<BusFeasibility>,
}

impl FeasibilityReport {
    pub fn all_feasible(&self) -> bool {
        self.buses.iter().all(|b| b.feasible)
    }

    pub fn violations(&self) -> impl Iterator<Item = &BusFeasibility> {
        self.buses.iter().filter(|b| !b.feasible)
    }

    /// Largest limit violation in p.u.^2 (0 when feasible).
    pub fn max_violation(&self) -> f64 {
        self.buses
            .iter()
            .map(|b| (-b.upper_margin).max(-b.lower_margin).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Checks `-v_lower - tol <= -(R Z)_i <= v_upper + tol` on each bus.
pub fn check_voltage_feasibility(
    sens: &SensitivityMatrices,
    z_bus: &[f64],
    tol: f64,
) -> Result<FeasibilityReport> {
    check_dim(sens.dim(), z_bus.len())?;
    let rz = sens.r_times(z_bus);
    let buses = rz
        .iter()
        .enumerate()
        .map(|(i, &rzi)| {
            let upper_margin = sens.v_upper[i] + rzi;
            let lower_margin = sens.v_lower[i] - rzi;
            BusFeasibility {
                bus: i + 1,
                v2: sens.v_hat[i] - rzi,
                upper_margin,
                lower_margin,
                feasible: upper_margin >= -tol && lower_margin >= -tol,
            }
        })
        .collect();
    Ok(FeasibilityReport { buses })
}
