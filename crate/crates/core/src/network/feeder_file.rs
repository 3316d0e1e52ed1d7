//! JSON feeder description.
//!
//! ```json
//! {
//!   "buses": [{"id": 1, "q": 0.01}],
//!   "lines": [{"from": 0, "to": 1, "r": 0.1, "x": 0.05}],
//!   "slack": {"v0": 1.0, "v_min": 0.95, "v_max": 1.05},
//!   "base": {"s_base_kva": 1000.0, "v_base_kv": 4.16}
//! }
//! ```
//!
//! Without `base`, every value is already per-unit and prosumer energy is
//! taken as per-unit power. With `base`, `r`/`x` are ohms, `q` is kvar and
//! prosumer kWh per netting period are converted with `s_base_kva`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bus, Line, RadialNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub slack: Slack,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Base>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slack {
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Base {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    #[serde(default = "one_hour")]
    pub period_hours: f64,
}

fn one_hour() -> f64 {
    1.0
}

impl FeederFile {
    pub fn into_network(self) -> Result<RadialNetwork> {
        let Self {
            buses,
            lines,
            slack,
            base,
            ..
        } = self;
        match base {
            None => RadialNetwork::new(buses, lines, slack.v0, slack.v_min, slack.v_max),
            Some(base) => {
                if !(base.s_base_kva > 0.0 && base.v_base_kv > 0.0 && base.period_hours > 0.0) {
                    return Err(Error::config("base", "bases and period must be positive"));
                }
                let z_base = base.v_base_kv * base.v_base_kv * 1000.0 / base.s_base_kva;
                let buses = buses
                    .into_iter()
                    .map(|b| Bus {
                        q: b.q / base.s_base_kva,
                        ..b
                    })
                    .collect();
                let lines = lines
                    .into_iter()
                    .map(|l| Line {
                        r: l.r / z_base,
                        x: l.x / z_base,
                        ..l
                    })
                    .collect();
                let net = RadialNetwork::new(buses, lines, slack.v0, slack.v_min, slack.v_max)?;
                Ok(net.with_energy_to_pu(1.0 / (base.s_base_kva * base.period_hours)))
            }
        }
    }
}

pub fn parse_feeder(text: &str) -> Result<RadialNetwork> {
    let file: FeederFile =
        serde_json::from_str(text).map_err(|e| Error::config("feeder", e.to_string()))?;
    file.into_network()
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<RadialNetwork> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_feeder(&text)
}
