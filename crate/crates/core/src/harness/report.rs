//! CSV and JSON emitters. Floats are written in shortest round-trip form,
//! so identical results give byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{RunResult, SweepPoint, Verification};
use crate::error::Result;
use crate::pricing::{PriceSchedule, Settlement, SettlementRow};
use crate::welfare::{KktReport, TraceRow};

/// Maps `-0.0` to `0.0`.
fn clean(x: f64) -> f64 {
    x + 0.0
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Tolerance of the neutrality and uniformity re-check done before a
/// settlement is written.
pub const SETTLEMENT_TOL: f64 = 1e-9;

/// Columns: prosumer_id, bus, z_kwh, bus_price, ex_ante_charge, allocation,
/// final_payment. Prices in $/kWh, charges in $.
pub fn write_settlement<W: Write>(w: W, s: &Settlement) -> Result<()> {
    s.check(SETTLEMENT_TOL)?;
    write_rows(
        w,
        s.rows.iter().map(|r| SettlementRow {
            prosumer_id: r.prosumer_id,
            bus: r.bus,
            z_kwh: clean(r.z_kwh),
            bus_price: clean(r.bus_price),
            ex_ante_charge: clean(r.ex_ante_charge),
            allocation: clean(r.allocation),
            final_payment: clean(r.final_payment),
        }),
    )
}

/// Columns: bus, price, eta_up, eta_lo. Price in $/kWh, multipliers in
/// $/kWh per p.u.^2.
pub fn write_schedule<W: Write>(w: W, s: &PriceSchedule) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        bus: usize,
        price: f64,
        eta_up: f64,
        eta_lo: f64,
    }
    write_rows(
        w,
        (0..s.bus_price.len()).map(|i| Row {
            bus: i + 1,
            price: clean(s.bus_price[i]),
            eta_up: clean(s.eta_up[i]),
            eta_lo: clean(s.eta_lo[i]),
        }),
    )
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        iteration: usize,
        dual_residual_pu2: f64,
        primal_residual_pu2: f64,
        welfare_usd: f64,
    }
    write_rows(
        w,
        trace.iter().map(|t| Row {
            iteration: t.iteration,
            dual_residual_pu2: clean(t.dual_residual),
            primal_residual_pu2: clean(t.primal_residual),
            welfare_usd: clean(t.welfare),
        }),
    )
}

pub fn write_voltages<W: Write>(w: W, r: &RunResult) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        bus: usize,
        v_linear_pu: f64,
        v_exact_pu: Option<f64>,
        mismatch_pu: Option<f64>,
        v_min_pu: f64,
        v_max_pu: f64,
    }
    write_rows(
        w,
        r.voltages_linear.iter().enumerate().map(|(i, &v)| {
            let ex = r.voltages_exact.as_ref().map(|e| e[i]);
            Row {
                bus: i + 1,
                v_linear_pu: clean(v),
                v_exact_pu: ex.map(clean),
                mismatch_pu: ex.map(|e| clean(e - v)),
                v_min_pu: r.v_min,
                v_max_pu: r.v_max,
            }
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub g_scale: f64,
    pub generation_kwh: Option<f64>,
    pub regime: Option<String>,
    pub regime_index: Option<usize>,
    pub z0_kwh: Option<f64>,
    pub sigma1_kwh: Option<f64>,
    pub sigma2_kwh: Option<f64>,
    pub base_price_usd_per_kwh: Option<f64>,
    pub min_bus_price_usd_per_kwh: Option<f64>,
    pub max_bus_price_usd_per_kwh: Option<f64>,
    pub welfare_usd: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_point(p: &SweepPoint) -> Self {
        match &p.result {
            Ok(r) => {
                let prices = &r.schedule.bus_price;
                Self {
                    g_scale: p.g_scale,
                    generation_kwh: Some(clean(r.generation)),
                    regime: Some(r.regime.to_string()),
                    regime_index: Some(r.regime.index()),
                    z0_kwh: Some(clean(r.z0)),
                    sigma1_kwh: Some(clean(r.schedule.thresholds.sigma1)),
                    sigma2_kwh: Some(clean(r.schedule.thresholds.sigma2)),
                    base_price_usd_per_kwh: Some(clean(r.schedule.base_price)),
                    min_bus_price_usd_per_kwh: Some(clean(
                        prices.iter().cloned().fold(f64::INFINITY, f64::min),
                    )),
                    max_bus_price_usd_per_kwh: Some(clean(
                        prices.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    )),
                    welfare_usd: Some(clean(r.welfare)),
                    error: None,
                }
            }
            Err(e) => Self {
                g_scale: p.g_scale,
                generation_kwh: None,
                regime: None,
                regime_index: None,
                z0_kwh: None,
                sigma1_kwh: None,
                sigma2_kwh: None,
                base_price_usd_per_kwh: None,
                min_bus_price_usd_per_kwh: None,
                max_bus_price_usd_per_kwh: None,
                welfare_usd: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// One row per sweep point, in sweep order, followed by nothing else.
pub fn write_sweep<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    write_rows(w, points.iter().map(SweepRow::from_point))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub name: &'a str,
    pub g_scale: f64,
    pub generation_kwh: f64,
    pub regime: String,
    pub z0_kwh: f64,
    pub sigma1_kwh: f64,
    pub sigma2_kwh: f64,
    pub base_price_usd_per_kwh: f64,
    pub welfare_usd: f64,
    pub nem_cost_usd: f64,
    pub operator_balance_usd: f64,
    pub best_response_deviation_kwh: f64,
    pub max_voltage_mismatch_pu: Option<f64>,
    pub iterations: usize,
    pub newton_steps: usize,
    pub dual_residual_pu2: f64,
    pub primal_residual_pu2: f64,
    pub kkt: KktReport,
    pub verification: &'a Verification,
}

pub fn summary<'a>(r: &'a RunResult, verification: &'a Verification) -> RunSummary<'a> {
    RunSummary {
        name: &r.name,
        g_scale: r.g_scale,
        generation_kwh: clean(r.generation),
        regime: r.regime.to_string(),
        z0_kwh: clean(r.z0),
        sigma1_kwh: clean(r.schedule.thresholds.sigma1),
        sigma2_kwh: clean(r.schedule.thresholds.sigma2),
        base_price_usd_per_kwh: clean(r.schedule.base_price),
        welfare_usd: clean(r.welfare),
        nem_cost_usd: clean(r.settlement.nem_cost),
        operator_balance_usd: clean(r.settlement.operator_balance),
        best_response_deviation_kwh: r.equilibrium.max_deviation,
        max_voltage_mismatch_pu: r.max_voltage_mismatch(),
        iterations: r.solver_stats.iterations,
        newton_steps: r.solver_stats.newton_steps,
        dual_residual_pu2: r.solver_stats.dual_residual,
        primal_residual_pu2: r.solver_stats.primal_residual,
        kkt: r.kkt,
        verification,
    }
}

/// Writes `settlement.csv`, `schedule.csv`, `voltages.csv`, `summary.json`
/// and, when a trace was kept, `trace.csv` into `dir`.
pub fn write_run(dir: &Path, r: &RunResult, verification: &Verification) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |file: &str, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(file);
        fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    let mut buf = Vec::new();
    write_settlement(&mut buf, &r.settlement)?;
    emit("settlement.csv", std::mem::take(&mut buf))?;
    write_schedule(&mut buf, &r.schedule)?;
    emit("schedule.csv", std::mem::take(&mut buf))?;
    write_voltages(&mut buf, r)?;
    emit("voltages.csv", std::mem::take(&mut buf))?;
    if !r.trace.is_empty() {
        write_trace(&mut buf, &r.trace)?;
        emit("trace.csv", std::mem::take(&mut buf))?;
    }
    let mut json = serde_json::to_vec_pretty(&summary(r, verification))?;
    json.push(b'\n');
    emit("summary.json", json)?;
    Ok(written)
}
