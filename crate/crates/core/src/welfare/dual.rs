//! Minimization of the dual function over the signed voltage multipliers
//! `lambda = eta_up - eta_lo`.
//!
//! For a fixed base price the dual is
//! `q(lambda) = h(lambda) + sum_i v_upper_i lambda_i^+ + v_lower_i lambda_i^-`
//! where `h` is smooth with gradient `y = R Z(lambda)`. Strategies differ in
//! how they drive the natural residual `|lambda - prox_t(lambda - t y)| / t`
//! (units of squared voltage) to zero.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Evaluation, Market};
use crate::error::{Error, Result};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Registered name of the dual strategy.
    pub method: String,
    /// Target natural residual, p.u.^2.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep one [`TraceRow`] per iteration.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: "dual-decomposition".into(),
            tol: 1e-11,
            max_iter: 20_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub newton_steps: usize,
    pub dual_residual: f64,
    pub primal_residual: f64,
    /// `q(lambda)` minus the piece objective at the response, equal to the
    /// complementarity slack of the multipliers.
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub dual_residual: f64,
    pub primal_residual: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone)]
pub struct DualPoint {
    pub lambda: Vec<f64>,
    pub eval: Evaluation,
    pub stats: SolverStats,
    pub trace: Vec<TraceRow>,
}

pub trait DualMethod: Send + Sync {
    fn name(&self) -> &'static str;

    /// Minimizes the dual for base price `price`, optionally starting from
    /// `warm`.
    fn minimize(
        &self,
        market: &Market,
        price: f64,
        warm: Option<&[f64]>,
        opts: &SolverOptions,
    ) -> Result<DualPoint>;
}

/// Registered dual strategies, keyed by [`SolverOptions::method`].
pub fn central_solvers() -> &'static Registry<dyn DualMethod> {
    static REGISTRY: OnceLock<Registry<dyn DualMethod>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn DualMethod> = Registry::new("central solver");
        reg.register("dual-decomposition", |_: &()| {
            Ok(Arc::new(DualDecomposition::default()) as Arc<dyn DualMethod>)
        });
        reg.register("subgradient", |_: &()| {
            Ok(Arc::new(ProjectedAscent::default()) as Arc<dyn DualMethod>)
        });
        reg
    })
}

fn prox(u: f64, t: f64, v_upper: f64, v_lower: f64) -> f64 {
    if u > t * v_upper {
        u - t * v_upper
    } else if u < -t * v_lower {
        u + t * v_lower
    } else {
        0.0
    }
}

struct Problem<'m, 'a> {
    market: &'m Market<'a>,
    price: f64,
    /// Reference step for residuals and active sets.
    t_ref: f64,
    /// Multiplier scale past which the dual is taken to be unbounded.
    blowup: f64,
}

impl<'m, 'a> Problem<'m, 'a> {
    fn new(market: &'m Market<'a>, price: f64) -> Self {
        let l = lipschitz(market, price);
        let t_ref = if l > 0.0 { 1.0 / l } else { 1.0 };
        let r_max = market
            .sens
            .r
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        Self {
            market,
            price,
            t_ref,
            blowup: 1e9 * (1.0 + price.abs()) / r_max,
        }
    }

    fn eval(&self, lambda: &[f64]) -> Result<Evaluation> {
        if lambda.iter().any(|l| !(l.abs() <= self.blowup)) {
            return Err(Error::Infeasible(
                "voltage multipliers diverge; the voltage limits cannot be met".into(),
            ));
        }
        self.market.evaluate(self.price, lambda)
    }

    fn prox_step(&self, w: &[f64], y: &[f64], t: f64) -> Vec<f64> {
        let s = self.market.sens;
        (0..w.len())
            .map(|i| prox(w[i] - t * y[i], t, s.v_upper[i], s.v_lower[i]))
            .collect()
    }

    fn residual(&self, lambda: &[f64], ev: &Evaluation) -> f64 {
        let p = self.prox_step(lambda, &ev.y, self.t_ref);
        norm(&sub(lambda, &p)) / self.t_ref
    }

    fn primal_residual(&self, ev: &Evaluation) -> f64 {
        let s = self.market.sens;
        (0..ev.y.len())
            .map(|i| {
                (ev.y[i] - s.v_lower[i])
                    .max(-s.v_upper[i] - ev.y[i])
                    .max(0.0)
            })
            .fold(0.0, f64::max)
    }

    fn gap(&self, lambda: &[f64], ev: &Evaluation) -> f64 {
        let s = self.market.sens;
        (0..lambda.len())
            .map(|i| {
                lambda[i].max(0.0) * (s.v_upper[i] + ev.y[i])
                    + (-lambda[i]).max(0.0) * (s.v_lower[i] - ev.y[i])
            })
            .sum()
    }

    fn row(&self, iteration: usize, lambda: &[f64], ev: &Evaluation) -> TraceRow {
        TraceRow {
            iteration,
            dual_residual: self.residual(lambda, ev),
            primal_residual: self.primal_residual(ev),
            welfare: ev.utility - self.price * ev.z0,
        }
    }

    fn finish(
        &self,
        lambda: Vec<f64>,
        eval: Evaluation,
        iterations: usize,
        newton_steps: usize,
        trace: Vec<TraceRow>,
    ) -> DualPoint {
        let stats = SolverStats {
            iterations,
            newton_steps,
            dual_residual: self.residual(&lambda, &eval),
            primal_residual: self.primal_residual(&eval),
            duality_gap: self.gap(&lambda, &eval),
        };
        DualPoint {
            lambda,
            eval,
            stats,
            trace,
        }
    }

    /// Semismooth Newton on the natural residual. Guesses the binding set
    /// from the prox, solves the linearized binding equations restricted to
    /// it and keeps the step only when the residual falls.
    fn newton(
        &self,
        lambda: &mut Vec<f64>,
        ev: &mut Evaluation,
        max_steps: usize,
        tol: f64,
    ) -> Result<usize> {
        let s = self.market.sens;
        let b = lambda.len();
        let mut taken = 0;
        let mut r = self.residual(lambda, ev);
        while taken < max_steps && r > tol {
            let t = self.t_ref;
            let mut active = Vec::new();
            let mut target = Vec::new();
            for i in 0..b {
                let u = lambda[i] - t * ev.y[i];
                if u > t * s.v_upper[i] {
                    active.push(i);
                    target.push(-s.v_upper[i]);
                } else if u < -t * s.v_lower[i] {
                    active.push(i);
                    target.push(s.v_lower[i]);
                }
            }
            let Some(cand) = self.restricted_solve(lambda, ev, active, target) else {
                break;
            };
            let dir = sub(&cand, lambda);
            let mut accepted = None;
            let mut step = 1.0;
            for _ in 0..8 {
                let trial: Vec<f64> = lambda.iter().zip(&dir).map(|(l, d)| l + step * d).collect();
                let trial_ev = match self.eval(&trial) {
                    Ok(e) => e,
                    Err(Error::Infeasible(_)) => {
                        step *= 0.5;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let rt = self.residual(&trial, &trial_ev);
                if rt <= tol || rt < (1.0 - 0.1 * step) * r {
                    accepted = Some((trial, trial_ev, rt));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, trial_ev, rt)) = accepted else {
                break;
            };
            *lambda = trial;
            *ev = trial_ev;
            r = rt;
            taken += 1;
        }
        Ok(taken)
    }

    /// Solves the linearized equations `y_A = target_A` for the multipliers
    /// on `active`, zero elsewhere. Indices whose multiplier comes out with
    /// the wrong sign are released and the system re-solved.
    fn restricted_solve(
        &self,
        lambda: &[f64],
        ev: &Evaluation,
        mut active: Vec<usize>,
        mut target: Vec<f64>,
    ) -> Option<Vec<f64>> {
        let s = self.market.sens;
        let b = lambda.len();
        // y(lambda') ~ y + J (lambda' - lambda) with J = R diag(S) R
        let rl = s.r_times(lambda);
        let srl: Vec<f64> = (0..b).map(|k| ev.sensitivity[k] * rl[k]).collect();
        let jl = s.r_times(&srl);
        loop {
            let mut cand = vec![0.0; b];
            if active.is_empty() {
                return Some(cand);
            }
            let m = active.len();
            let mut jac = DMatrix::zeros(m, m);
            for (a, &i) in active.iter().enumerate() {
                for (c, &j) in active.iter().enumerate() {
                    jac[(a, c)] = (0..b)
                        .map(|k| s.r[(i, k)] * ev.sensitivity[k] * s.r[(k, j)])
                        .sum();
                }
            }
            let rhs = DVector::from_iterator(
                m,
                active
                    .iter()
                    .zip(&target)
                    .map(|(&i, &tg)| tg - ev.y[i] + jl[i]),
            );
            let scale = jac.iter().cloned().fold(0.0, f64::max);
            if scale <= 0.0 {
                return None;
            }
            let x = jac.svd(true, true).solve(&rhs, 1e-13 * scale).ok()?;
            let mut keep = Vec::with_capacity(m);
            for (a, &i) in active.iter().enumerate() {
                cand[i] = x[a];
                // upper limits carry lambda >= 0, lower limits lambda <= 0
                let upper = target[a] == -s.v_upper[i];
                keep.push(if upper { x[a] >= 0.0 } else { x[a] <= 0.0 });
            }
            if keep.iter().all(|&k| k) {
                return Some(cand);
            }
            let (a2, t2): (Vec<usize>, Vec<f64>) = active
                .iter()
                .zip(&target)
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|((&i, &tg), _)| (i, tg))
                .unzip();
            active = a2;
            target = t2;
        }
    }
}

/// Upper bound on the Lipschitz constant of `y(lambda)` from the largest
/// per-bus sensitivities, by power iteration on `R diag(S) R`.
fn lipschitz(market: &Market, price: f64) -> f64 {
    let s = market.sens;
    let b = s.dim();
    let mut sens = vec![0.0; b];
    for p in market.prosumers {
        sens[p.bus - 1] += p
            .devices
            .iter()
            .map(|d| -d.utility.inverse_marginal_slope(price))
            .sum::<f64>();
    }
    let apply = |v: &[f64]| {
        let rv = s.r_times(v);
        let srv: Vec<f64> = rv.iter().zip(&sens).map(|(a, b)| a * b).collect();
        s.r_times(&srv)
    };
    let mut v = vec![1.0 / (b as f64).sqrt(); b];
    let mut est = 0.0;
    for _ in 0..100 {
        let w = apply(&v);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let prev = est;
        est = nw;
        v = w.iter().map(|x| x / nw).collect();
        if (est - prev).abs() <= 1e-6 * est {
            break;
        }
    }
    1.05 * est
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn start(market: &Market, warm: Option<&[f64]>) -> Vec<f64> {
    let b = market.num_buses();
    match warm {
        Some(w) if w.len() == b => w.to_vec(),
        _ => vec![0.0; b],
    }
}

/// Accelerated proximal gradient with backtracking and adaptive restart,
/// alternated with semismooth Newton steps on the binding set. Converges to
/// machine precision when the binding set is identified, which for
/// piecewise-quadratic utilities happens after finitely many steps.
#[derive(Debug, Clone, Copy)]
pub struct DualDecomposition {
    /// Gradient iterations between Newton attempts.
    pub block: usize,
    pub newton_steps: usize,
}

impl Default for DualDecomposition {
    fn default() -> Self {
        Self {
            block: 50,
            newton_steps: 30,
        }
    }
}

impl DualMethod for DualDecomposition {
    fn name(&self) -> &'static str {
        "dual-decomposition"
    }

    fn minimize(
        &self,
        market: &Market,
        price: f64,
        warm: Option<&[f64]>,
        opts: &SolverOptions,
    ) -> Result<DualPoint> {
        let pb = Problem::new(market, price);
        let mut lambda = start(market, warm);
        let mut ev = pb.eval(&lambda)?;
        let mut trace = Vec::new();
        if opts.trace {
            trace.push(pb.row(0, &lambda, &ev));
        }
        let mut iterations = 0;
        let mut newton_total = 0;
        let mut t = pb.t_ref;
        loop {
            let steps = pb.newton(&mut lambda, &mut ev, self.newton_steps, opts.tol)?;
            if steps > 0 {
                newton_total += steps;
                iterations += 1;
                if opts.trace {
                    trace.push(pb.row(iterations, &lambda, &ev));
                }
            }
            if pb.residual(&lambda, &ev) <= opts.tol {
                return Ok(pb.finish(lambda, ev, iterations, newton_total, trace));
            }
            if iterations >= opts.max_iter {
                let row = pb.row(iterations, &lambda, &ev);
                return Err(Error::SolverDiverged {
                    iterations,
                    dual_residual: row.dual_residual,
                    primal_residual: row.primal_residual,
                });
            }

            let mut prev = lambda.clone();
            let mut theta = 1.0_f64;
            for _ in 0..self.block {
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let beta = (theta - 1.0) / theta_next;
                let (w, ev_w) = if beta == 0.0 {
                    (lambda.clone(), ev.clone())
                } else {
                    let w: Vec<f64> = lambda
                        .iter()
                        .zip(&prev)
                        .map(|(l, p)| l + beta * (l - p))
                        .collect();
                    let e = pb.eval(&w)?;
                    (w, e)
                };
                let (cand, ev_c) = loop {
                    let cand = pb.prox_step(&w, &ev_w.y, t);
                    let ev_c = pb.eval(&cand)?;
                    let dy = norm(&sub(&ev_c.y, &ev_w.y));
                    let dx = norm(&sub(&cand, &w));
                    if t * dy <= dx * (1.0 + 1e-9) || t < 1e-12 * pb.t_ref {
                        break (cand, ev_c);
                    }
                    t *= 0.5;
                };
                let restart: f64 = (0..w.len())
                    .map(|i| (w[i] - cand[i]) * (cand[i] - lambda[i]))
                    .sum();
                theta = if restart > 0.0 { 1.0 } else { theta_next };
                prev = std::mem::replace(&mut lambda, cand);
                ev = ev_c;
                iterations += 1;
                if opts.trace {
                    trace.push(pb.row(iterations, &lambda, &ev));
                }
                if pb.residual(&lambda, &ev) <= opts.tol || iterations >= opts.max_iter {
                    break;
                }
            }
        }
    }
}

/// Projected gradient steps on `(eta_up, eta_lo) >= 0` with diminishing
/// step `a / (1 + k / k0)`, `a = 1 / L`. Simple and slow; kept as a
/// reference strategy.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedAscent {
    pub k0: f64,
}

impl Default for ProjectedAscent {
    fn default() -> Self {
        Self { k0: 1e4 }
    }
}

impl DualMethod for ProjectedAscent {
    fn name(&self) -> &'static str {
        "subgradient"
    }

    fn minimize(
        &self,
        market: &Market,
        price: f64,
        warm: Option<&[f64]>,
        opts: &SolverOptions,
    ) -> Result<DualPoint> {
        let pb = Problem::new(market, price);
        let mut lambda = start(market, warm);
        let mut ev = pb.eval(&lambda)?;
        let mut trace = Vec::new();
        if opts.trace {
            trace.push(pb.row(0, &lambda, &ev));
        }
        for k in 0..opts.max_iter {
            if pb.residual(&lambda, &ev) <= opts.tol {
                return Ok(pb.finish(lambda, ev, k, 0, trace));
            }
            let step = pb.t_ref / (1.0 + k as f64 / self.k0);
            lambda = pb.prox_step(&lambda, &ev.y, step);
            ev = pb.eval(&lambda)?;
            if opts.trace {
                trace.push(pb.row(k + 1, &lambda, &ev));
            }
        }
        if pb.residual(&lambda, &ev) <= opts.tol {
            return Ok(pb.finish(lambda, ev, opts.max_iter, 0, trace));
        }
        let row = pb.row(opts.max_iter, &lambda, &ev);
        Err(Error::SolverDiverged {
            iterations: opts.max_iter,
            dual_residual: row.dual_residual,
            primal_residual: row.primal_residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_sensitivities, Bus, Line, RadialNetwork, SensitivityMatrices};
    use crate::prosumer::{Device, Prosumer};

    fn chain() -> (SensitivityMatrices, Vec<Prosumer>) {
        let net = RadialNetwork::new(
            vec![
                Bus {
                    id: 1,
                    q: 0.0,
                    name: None,
                },
                Bus {
                    id: 2,
                    q: 0.0,
                    name: None,
                },
                Bus {
                    id: 3,
                    q: 0.0,
                    name: None,
                },
            ],
            vec![
                Line {
                    from: 0,
                    to: 1,
                    r: 0.01,
                    x: 0.0,
                },
                Line {
                    from: 1,
                    to: 2,
                    r: 0.02,
                    x: 0.0,
                },
                Line {
                    from: 1,
                    to: 3,
                    r: 0.03,
                    x: 0.0,
                },
            ],
            1.0,
            0.95,
            1.05,
        )
        .unwrap();
        let sens = build_sensitivities(&net);
        let ps = (1..=3)
            .map(|b| {
                Prosumer::new(
                    b,
                    b,
                    vec![Device::quadratic(10.0, 1.0, 0.0, 10.0).unwrap()],
                    0.0,
                    None,
                )
                .unwrap()
            })
            .collect();
        (sens, ps)
    }

    #[test]
    fn prox_cases() {
        assert_eq!(prox(3.0, 1.0, 1.0, 1.0), 2.0);
        assert_eq!(prox(-3.0, 1.0, 1.0, 2.0), -1.0);
        assert_eq!(prox(0.5, 1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn strategies_agree_on_binding_instance() {
        let (sens, ps) = chain();
        let market = Market::new(&sens, &ps).unwrap();
        let opts = SolverOptions::default();
        let fast = DualDecomposition::default()
            .minimize(&market, 1.0, None, &opts)
            .unwrap();
        assert!(fast.stats.dual_residual <= 1e-11);
        assert!(
            fast.lambda.iter().any(|&l| l < 0.0),
            "lower limit should bind: {:?}",
            fast.lambda
        );
        let slow_opts = SolverOptions {
            tol: 1e-8,
            max_iter: 500_000,
            ..opts
        };
        let slow = ProjectedAscent::default()
            .minimize(&market, 1.0, None, &slow_opts)
            .unwrap();
        for (a, b) in fast.eval.z_bus.iter().zip(&slow.eval.z_bus) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn trace_is_recorded() {
        let (sens, ps) = chain();
        let market = Market::new(&sens, &ps).unwrap();
        let opts = SolverOptions {
            trace: true,
            ..Default::default()
        };
        let p = DualDecomposition::default()
            .minimize(&market, 1.0, None, &opts)
            .unwrap();
        assert!(!p.trace.is_empty());
        assert_eq!(p.trace[0].iteration, 0);
        assert!(p.trace.last().unwrap().dual_residual <= 1e-11);
    }

    #[test]
    fn registry_lists_strategies() {
        assert_eq!(
            central_solvers().names(),
            vec!["dual-decomposition", "subgradient"]
        );
        assert!(central_solvers().build("newton", &()).is_err());
    }
}
