//! One market period: central solve, posted prices, best-response check,
//! settlement and voltage report.

use serde::Serialize;

use super::Scenario;
use crate::error::Result;
use crate::network::{
    build_sensitivities, check_voltage_feasibility, lin_voltages, voltage_models, VOLTAGE_TOL,
};
use crate::pricing::{
    ex_ante_prices, settle, verify_equilibrium, EquilibriumReport, PriceSchedule, Settlement,
};
use crate::welfare::{
    solve_central, verify_kkt, CentralSolution, KktReport, Regime, SolverOptions, SolverStats,
    TraceRow,
};

/// Default tolerance of [`RunResult::verify`].
pub const DEFAULT_VERIFY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub name: String,
    pub g_scale: f64,
    pub generation: f64,
    pub regime: Regime,
    pub z0: f64,
    pub welfare: f64,
    pub schedule: PriceSchedule,
    pub settlement: Settlement,
    pub equilibrium: EquilibriumReport,
    pub kkt: KktReport,
    /// Linearized voltage magnitudes, p.u.
    pub voltages_linear: Vec<f64>,
    /// Voltage magnitudes from the report model, p.u.
    pub voltages_exact: Option<Vec<f64>>,
    pub v_min: f64,
    pub v_max: f64,
    pub solver_stats: SolverStats,
    #[serde(skip)]
    pub central: CentralSolution,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub checks: Vec<Check>,
}

impl Verification {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl RunResult {
    /// Largest `|v_exact - v_linear|`, p.u.
    pub fn max_voltage_mismatch(&self) -> Option<f64> {
        self.voltages_exact.as_ref().map(|ex| {
            ex.iter()
                .zip(&self.voltages_linear)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }

    /// Equilibrium, neutrality, payment uniformity and KKT checks.
    pub fn verify(&self, tol: f64) -> Verification {
        let s = &self.settlement;
        let uniformity = s
            .rows
            .iter()
            .map(|r| (r.final_payment - s.nem_rate * r.z_kwh).abs())
            .fold(0.0, f64::max);
        let rel = |x: f64, scale: f64| x.abs() / scale.abs().max(1.0);
        let mut checks = Vec::new();
        let mut add = |name, value: f64| {
            checks.push(Check {
                name,
                value,
                tol,
                pass: value <= tol,
            })
        };
        add(
            "best_response_deviation_kwh",
            self.equilibrium.max_deviation,
        );
        add(
            "surplus_vs_welfare_rel",
            rel(self.equilibrium.welfare_gap, self.welfare),
        );
        add("operator_balance_rel", rel(s.operator_balance, s.nem_cost));
        add("payment_uniformity_usd", uniformity);
        add("kkt_primal", self.kkt.primal);
        add("kkt_dual", self.kkt.dual);
        add("kkt_complementarity", self.kkt.complementarity);
        add("kkt_stationarity", self.kkt.stationarity);
        add("kkt_balance", self.kkt.balance);
        add("kkt_regime", self.kkt.regime);
        Verification { checks }
    }
}

pub fn run(sc: &Scenario) -> Result<RunResult> {
    run_inner(sc).map_err(|e| e.context(format!("scenario `{}` (g_scale {})", sc.name, sc.g_scale)))
}

fn run_inner(sc: &Scenario) -> Result<RunResult> {
    let net = &sc.network;
    let sens = build_sensitivities(net);
    let prosumers = sc.prosumers();
    let tariff = sc.tariff;
    let opts = SolverOptions {
        trace: sc.options.trace,
        ..sc.solver.clone()
    };

    let central = solve_central(&sens, &prosumers, &tariff, &opts)?;
    let sol = &central.solution;
    let schedule = ex_ante_prices(&sens, &prosumers, &tariff, &central)?;
    let equilibrium = verify_equilibrium(&prosumers, &tariff, &schedule, sol)?;
    let settlement = settle(&prosumers, &tariff, &schedule, &sol.z())?;
    let kkt = verify_kkt(&sens, &prosumers, &tariff, sol)?;

    let feasibility = check_voltage_feasibility(&sens, &sol.z_bus, VOLTAGE_TOL)?;
    if !feasibility.all_feasible() {
        log::warn!(
            "{}: linearized voltages leave the band by {:e}",
            sc.name,
            feasibility.max_violation()
        );
    }
    let voltages_linear = lin_voltages(&sens, &sol.z_bus)?
        .into_iter()
        .map(f64::sqrt)
        .collect();
    let voltages_exact = if sc.options.use_exact_pf_for_report {
        let model = voltage_models().build(&sc.options.report_model, &())?;
        let v2 = model.squared_voltages(net, &sens, &sol.z_bus)?;
        Some(v2.into_iter().map(f64::sqrt).collect())
    } else {
        None
    };

    Ok(RunResult {
        name: sc.name.clone(),
        g_scale: sc.g_scale,
        generation: sc.generation(),
        regime: sol.regime,
        z0: sol.z0,
        welfare: sol.welfare,
        schedule,
        settlement,
        equilibrium,
        kkt,
        voltages_linear,
        voltages_exact,
        v_min: net.v_min(),
        v_max: net.v_max(),
        solver_stats: sol.stats.clone(),
        trace: sol.trace.clone(),
        central,
    })
}
