//! Random instances and an independent welfare oracle shared by the
//! integration tests.
#![allow(dead_code)]

use gridshare::network::{Bus, Line, RadialNetwork};
use gridshare::prosumer::{Device, Envelope, Prosumer};
use gridshare::welfare::Tariff;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DeviceSpec {
    pub alpha: f64,
    pub beta: f64,
    pub d_lo: f64,
    pub d_hi: f64,
}

#[derive(Debug, Clone)]
pub struct ProsumerSpec {
    pub bus: usize,
    pub g: f64,
    pub devices: Vec<DeviceSpec>,
    pub envelope: Option<(f64, f64)>,
}

/// A plain description of a market instance from which both the library
/// objects and the oracle's data are built.
#[derive(Debug, Clone)]
pub struct Instance {
    /// `parents[k]` feeds bus `k + 1`.
    pub parents: Vec<usize>,
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub prosumers: Vec<ProsumerSpec>,
    pub pi_plus: f64,
    pub pi_minus: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub max_buses: usize,
    pub max_prosumers: usize,
    pub max_devices: usize,
    pub envelopes: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            max_buses: 3,
            max_prosumers: 5,
            max_devices: 2,
            envelopes: false,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

impl Instance {
    pub fn random(seed: u64, opts: GenOptions) -> Self {
        let mut rng = rng(seed);
        let b = rng.gen_range(1..=opts.max_buses);
        let parents: Vec<usize> = (0..b).map(|k| rng.gen_range(0..=k)).collect();
        let r: Vec<f64> = (0..b).map(|_| rng.gen_range(0.002..0.02)).collect();
        let x: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..0.02)).collect();
        let q: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..0.5)).collect();
        let n = rng.gen_range(1..=opts.max_prosumers);
        let mut prosumers = Vec::with_capacity(n);
        let mut d_ref = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.gen_range(1..=opts.max_devices);
            let mut devices = Vec::with_capacity(k);
            let mut total_ref = 0.0;
            for _ in 0..k {
                let beta = rng.gen_range(0.5..5.0);
                let alpha = rng.gen_range(2.0..10.0);
                let sat = alpha / beta;
                let d_lo = rng.gen_range(0.0..0.3) * sat;
                let d_hi = d_lo + rng.gen_range(0.2..1.0) * (sat - d_lo);
                total_ref += rng.gen_range(d_lo..d_hi);
                devices.push(DeviceSpec {
                    alpha,
                    beta,
                    d_lo,
                    d_hi,
                });
            }
            let g = if rng.gen_bool(0.7) {
                rng.gen_range(0.0..6.0)
            } else {
                0.0
            };
            let envelope = if opts.envelopes {
                let width = rng.gen_range(0.05..1.5);
                let z_ref = total_ref - g;
                Some((
                    z_ref.min(0.0) - rng.gen_range(0.0..1.0) * width,
                    z_ref.max(0.0) + rng.gen_range(0.0..1.0) * width,
                ))
            } else {
                None
            };
            prosumers.push(ProsumerSpec {
                bus: rng.gen_range(1..=b),
                g,
                devices,
                envelope,
            });
            d_ref.push(total_ref);
        }
        let pi_plus = rng.gen_range(0.5..5.0);
        let pi_minus = pi_plus * rng.gen_range(0.0..1.0);

        // voltage band drawn around a reference point so it is feasible
        let mut inst = Self {
            parents,
            r,
            x,
            q,
            v0: 1.0,
            v_min: 0.0,
            v_max: 0.0,
            prosumers,
            pi_plus,
            pi_minus,
        };
        let mut z_ref = vec![0.0; b];
        for (p, d) in inst.prosumers.iter().zip(&d_ref) {
            z_ref[p.bus - 1] += d - p.g;
        }
        let v2 = inst.lin_v2(&z_ref);
        let lo = v2.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let wide = rng.gen_bool(0.25);
        let m = if wide { 0.5 } else { 0.02 };
        inst.v_min = (lo - rng.gen_range(0.0..1.0) * m).max(0.01).sqrt();
        inst.v_max = (hi + rng.gen_range(1e-4..1.0) * m).sqrt();
        if inst.v_min >= inst.v_max {
            inst.v_min = 0.5 * inst.v_max;
        }
        inst
    }

    pub fn num_buses(&self) -> usize {
        self.parents.len()
    }

    pub fn network(&self) -> RadialNetwork {
        let buses = (1..=self.num_buses())
            .map(|id| Bus {
                id,
                q: self.q[id - 1],
                name: None,
            })
            .collect();
        let lines = (0..self.num_buses())
            .map(|k| Line {
                from: self.parents[k],
                to: k + 1,
                r: self.r[k],
                x: self.x[k],
            })
            .collect();
        RadialNetwork::new(buses, lines, self.v0, self.v_min, self.v_max)
            .expect("valid random network")
    }

    pub fn prosumers(&self) -> Vec<Prosumer> {
        self.prosumers
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let devices = p
                    .devices
                    .iter()
                    .map(|d| Device::quadratic(d.alpha, d.beta, d.d_lo, d.d_hi).unwrap())
                    .collect();
                let envelope = p.envelope.map(|(z_lo, z_hi)| Envelope { z_lo, z_hi });
                Prosumer::new(i + 1, p.bus, devices, p.g, envelope).unwrap()
            })
            .collect()
    }

    pub fn tariff(&self) -> Tariff {
        Tariff::new(self.pi_plus, self.pi_minus).unwrap()
    }

    /// Buses on the path from the slack to `bus`, excluding the slack.
    fn path(&self, bus: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut b = bus;
        while b != 0 {
            out.push(b);
            b = self.parents[b - 1];
        }
        out
    }

    /// `(R, X)` from explicit path intersections.
    pub fn path_matrices(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let b = self.num_buses();
        let mut r = vec![vec![0.0; b]; b];
        let mut x = vec![vec![0.0; b]; b];
        for i in 1..=b {
            let pi = self.path(i);
            for j in 1..=b {
                let pj = self.path(j);
                for &k in pi.iter().filter(|k| pj.contains(k)) {
                    r[i - 1][j - 1] += 2.0 * self.r[k - 1];
                    x[i - 1][j - 1] += 2.0 * self.x[k - 1];
                }
            }
        }
        (r, x)
    }

    pub fn lin_v2(&self, z_bus: &[f64]) -> Vec<f64> {
        let (r, x) = self.path_matrices();
        let b = self.num_buses();
        (0..b)
            .map(|i| {
                let rz: f64 = (0..b).map(|j| r[i][j] * z_bus[j]).sum();
                let xq: f64 = (0..b).map(|j| x[i][j] * self.q[j]).sum();
                self.v0 * self.v0 - xq - rz
            })
            .collect()
    }
}

fn utility(d: &DeviceSpec, v: f64) -> f64 {
    d.alpha * v - 0.5 * d.beta * v * v
}

/// Euclidean projection of `p` onto `{lo <= d <= hi, s_lo <= sum d <= s_hi}`.
fn project(p: &[f64], lo: &[f64], hi: &[f64], s_lo: f64, s_hi: f64) -> Vec<f64> {
    let shifted = |tau: f64| -> Vec<f64> {
        (0..p.len())
            .map(|k| (p[k] - tau).clamp(lo[k], hi[k]))
            .collect()
    };
    let sum = |tau: f64| shifted(tau).iter().sum::<f64>();
    let s0 = sum(0.0);
    let target = if s0 > s_hi {
        s_hi
    } else if s0 < s_lo {
        s_lo
    } else {
        return shifted(0.0);
    };
    // the clipped sum is piecewise linear and non-increasing in tau
    let mut knots: Vec<f64> = (0..p.len())
        .flat_map(|k| [p[k] - hi[k], p[k] - lo[k]])
        .collect();
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in knots.windows(2) {
        let (s_a, s_b) = (sum(w[0]), sum(w[1]));
        if s_a >= target && target >= s_b {
            let tau = if s_a == s_b {
                w[0]
            } else {
                w[0] + (s_a - target) / (s_a - s_b) * (w[1] - w[0])
            };
            return shifted(tau);
        }
    }
    shifted(if target >= sum(knots[0]) {
        knots[0]
    } else {
        knots[knots.len() - 1]
    })
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub welfare: f64,
    pub d: Vec<Vec<f64>>,
    pub z0: f64,
    pub max_violation: f64,
}

/// Maximizes `sum U - C_NEM(Z0)` by solving the import (`Z0 >= 0`, price
/// `pi+`) and export (`Z0 <= 0`, price `pi-`) restrictions with an
/// augmented Lagrangian over the voltage and sign constraints, each inner
/// problem by accelerated projected gradient. Returns the better branch.
pub fn oracle(inst: &Instance) -> OracleResult {
    let a = oracle_branch(inst, inst.pi_plus, 1.0);
    let b = oracle_branch(inst, inst.pi_minus, -1.0);
    match (a, b) {
        (Some(a), Some(b)) => {
            if a.welfare >= b.welfare {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => panic!("oracle found no feasible branch"),
    }
}

fn oracle_branch(inst: &Instance, price: f64, sign: f64) -> Option<OracleResult> {
    let b = inst.num_buses();
    let (r, x) = inst.path_matrices();
    let v2_hat: Vec<f64> = (0..b)
        .map(|i| inst.v0 * inst.v0 - (0..b).map(|j| x[i][j] * inst.q[j]).sum::<f64>())
        .collect();
    let v_lower: Vec<f64> = v2_hat.iter().map(|v| v - inst.v_min * inst.v_min).collect();
    let v_upper: Vec<f64> = v2_hat.iter().map(|v| inst.v_max * inst.v_max - v).collect();

    // flatten devices
    let mut owner = Vec::new();
    let mut specs = Vec::new();
    for (n, p) in inst.prosumers.iter().enumerate() {
        for d in &p.devices {
            owner.push(n);
            specs.push(d.clone());
        }
    }
    let k = specs.len();
    let bus_of: Vec<usize> = owner.iter().map(|&n| inst.prosumers[n].bus - 1).collect();
    let g_bus: Vec<f64> = (0..b)
        .map(|i| {
            inst.prosumers
                .iter()
                .filter(|p| p.bus - 1 == i)
                .map(|p| p.g)
                .sum()
        })
        .collect();
    let g_total: f64 = inst.prosumers.iter().map(|p| p.g).sum();

    // constraint rows: y_i <= v_lower_i, -y_i <= v_upper_i, -sign * Z0 <= 0
    let m = 2 * b + 1;
    let mut jac = vec![vec![0.0; k]; m];
    for i in 0..b {
        for kk in 0..k {
            jac[i][kk] = r[i][bus_of[kk]];
            jac[b + i][kk] = -r[i][bus_of[kk]];
        }
    }
    for kk in 0..k {
        jac[2 * b][kk] = -sign;
    }
    // unit-norm rows keep one penalty weight adequate for every constraint
    let row_scale: Vec<f64> = jac
        .iter()
        .map(|row| {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for (row, sc) in jac.iter_mut().zip(&row_scale) {
        for v in row.iter_mut() {
            *v /= sc;
        }
    }
    let raw_constraints = |d: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; b];
        for kk in 0..k {
            z[bus_of[kk]] += d[kk];
        }
        for i in 0..b {
            z[i] -= g_bus[i];
        }
        let y: Vec<f64> = (0..b)
            .map(|i| (0..b).map(|j| r[i][j] * z[j]).sum())
            .collect();
        let z0: f64 = d.iter().sum::<f64>() - g_total;
        let mut c = Vec::with_capacity(m);
        c.extend((0..b).map(|i| y[i] - v_lower[i]));
        c.extend((0..b).map(|i| -y[i] - v_upper[i]));
        c.push(-sign * z0);
        c
    };
    let constraints = |d: &[f64]| -> Vec<f64> {
        raw_constraints(d)
            .iter()
            .zip(&row_scale)
            .map(|(c, s)| c / s)
            .collect()
    };
    let a_norm2: f64 = jac.iter().flatten().map(|v| v * v).sum();
    let beta_max = specs.iter().map(|s| s.beta).fold(0.0, f64::max);
    let mut rho = beta_max / a_norm2.max(1e-12);

    let groups: Vec<Vec<usize>> = (0..inst.prosumers.len())
        .map(|n| (0..k).filter(|&kk| owner[kk] == n).collect())
        .collect();
    let proj = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; k];
        for (n, idx) in groups.iter().enumerate() {
            let p: Vec<f64> = idx.iter().map(|&kk| v[kk]).collect();
            let lo: Vec<f64> = idx.iter().map(|&kk| specs[kk].d_lo).collect();
            let hi: Vec<f64> = idx.iter().map(|&kk| specs[kk].d_hi).collect();
            let (s_lo, s_hi) = match inst.prosumers[n].envelope {
                Some((zl, zh)) => (zl + inst.prosumers[n].g, zh + inst.prosumers[n].g),
                None => (f64::NEG_INFINITY, f64::INFINITY),
            };
            for (j, val) in project(&p, &lo, &hi, s_lo, s_hi).into_iter().enumerate() {
                out[idx[j]] = val;
            }
        }
        out
    };

    let mut d = proj(
        &specs
            .iter()
            .map(|s| 0.5 * (s.d_lo + s.d_hi))
            .collect::<Vec<_>>(),
    );
    let mut mult = vec![0.0; m];
    let mut prev_viol = f64::INFINITY;
    let mut stalled = 0;
    for _outer in 0..400 {
        let lip = beta_max + rho * a_norm2;
        let grad = |v: &[f64]| -> Vec<f64> {
            let c = constraints(v);
            let w: Vec<f64> = (0..m).map(|j| (mult[j] + rho * c[j]).max(0.0)).collect();
            (0..k)
                .map(|kk| {
                    let s = &specs[kk];
                    -(s.alpha - s.beta * v[kk])
                        + price
                        + (0..m).map(|j| w[j] * jac[j][kk]).sum::<f64>()
                })
                .collect()
        };
        // accelerated projected gradient with adaptive restart
        let start = d.clone();
        let mut x = d.clone();
        let mut yv = d.clone();
        let mut t = 1.0f64;
        for _inner in 0..50_000 {
            let g = grad(&yv);
            let next = proj(&(0..k).map(|kk| yv[kk] - g[kk] / lip).collect::<Vec<_>>());
            let step = (0..k)
                .map(|kk| (next[kk] - yv[kk]).abs())
                .fold(0.0, f64::max);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let restart = (0..k)
                .map(|kk| (yv[kk] - next[kk]) * (next[kk] - x[kk]))
                .sum::<f64>()
                > 0.0;
            if restart {
                yv = next.clone();
                t = 1.0;
            } else {
                yv = (0..k)
                    .map(|kk| next[kk] + (t - 1.0) / t_next * (next[kk] - x[kk]))
                    .collect();
                t = t_next;
            }
            x = next;
            if step * lip < 1e-12 || step < 1e-15 * x.iter().fold(1.0, |a: f64, v| a.max(v.abs())) {
                break;
            }
        }
        d = x;
        let c = constraints(&d);
        for j in 0..m {
            mult[j] = (mult[j] + rho * c[j]).max(0.0);
        }
        let viol = c.iter().cloned().fold(0.0, f64::max);
        let moved = (0..k)
            .map(|kk| (d[kk] - start[kk]).abs())
            .fold(0.0, f64::max);
        if viol < 1e-12 && moved < 1e-12 {
            break;
        }
        if viol > 0.25 * prev_viol {
            if rho < 1e8 * beta_max {
                rho *= 4.0;
            } else if viol > 1e-6 {
                stalled += 1;
                if stalled > 30 {
                    return None;
                }
            }
        }
        prev_viol = viol;
    }
    let c = raw_constraints(&d);
    let max_violation = c.iter().cloned().fold(0.0, f64::max);
    if max_violation > 1e-7 {
        return None;
    }
    let z0: f64 = d.iter().sum::<f64>() - g_total;
    let u: f64 = (0..k).map(|kk| utility(&specs[kk], d[kk])).sum();
    let cost = if z0 >= 0.0 {
        inst.pi_plus * z0
    } else {
        inst.pi_minus * z0
    };
    let mut per = vec![Vec::new(); inst.prosumers.len()];
    for kk in 0..k {
        per[owner[kk]].push(d[kk]);
    }
    Some(OracleResult {
        welfare: u - cost,
        d: per,
        z0,
        max_violation,
    })
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
