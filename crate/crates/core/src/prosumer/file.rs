//! JSON prosumer description: either a bare list of prosumers or an object
//! `{"description": ..., "prosumers": [...]}`.
//!
//! ```json
//! [{"id": 1, "bus": 2, "g_kwh": 1.5,
//!   "envelope": {"z_lo": -2.0, "z_hi": 3.0},
//!   "devices": [{"alpha": 10.0, "beta": 2.0, "d_lo": 0.0, "d_hi": 5.0},
//!               {"calibrate": {"pi0": 0.12, "d0": 3.0, "elasticity": 0.21},
//!                "d_lo": 0.0, "d_hi": 3.6}]}]
//! ```
//!
//! A device may name its utility family with `kind` (default `quadratic`);
//! the remaining fields are handed to that family's constructor.

use std::path::Path;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{utility_families, Device, Envelope, Prosumer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerSpec {
    pub id: usize,
    pub bus: usize,
    pub g_kwh: f64,
    #[serde(default)]
    pub envelope: Option<EnvelopeSpec>,
    pub devices: Vec<DeviceSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub z_lo: f64,
    pub z_hi: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DeviceSpec {
    #[serde(default = "default_kind")]
    pub kind: String,
    pub d_lo: f64,
    pub d_hi: f64,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

fn default_kind() -> String {
    "quadratic".to_string()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProsumerFile {
    List(Vec<ProsumerSpec>),
    Described {
        #[allow(dead_code)]
        description: Option<String>,
        prosumers: Vec<ProsumerSpec>,
    },
}

impl ProsumerSpec {
    pub fn build(&self, index: usize) -> Result<Prosumer> {
        let mut devices = Vec::with_capacity(self.devices.len());
        for (k, spec) in self.devices.iter().enumerate() {
            let path = format!("prosumers[{index}].devices[{k}]");
            let utility = utility_families()
                .build(&spec.kind, &Value::Object(spec.params.clone()))
                .map_err(|e| Error::config(&path, e.to_string()))?;
            let device = Device::new(utility, spec.d_lo, spec.d_hi)
                .map_err(|e| Error::config(&path, e.to_string()))?;
            devices.push(device);
        }
        let envelope = self.envelope.map(|e| Envelope {
            z_lo: e.z_lo,
            z_hi: e.z_hi,
        });
        Prosumer::new(self.id, self.bus, devices, self.g_kwh, envelope)
            .map_err(|e| Error::config(format!("prosumers[{index}]"), e.to_string()))
    }
}

pub fn parse_prosumers(text: &str) -> Result<Vec<Prosumer>> {
    let file: ProsumerFile =
        serde_json::from_str(text).map_err(|e| Error::config("prosumers", e.to_string()))?;
    let specs = match file {
        ProsumerFile::List(specs) => specs,
        ProsumerFile::Described { prosumers, .. } => prosumers,
    };
    specs.iter().enumerate().map(|(i, s)| s.build(i)).collect()
}

pub fn load_prosumers(path: impl AsRef<Path>) -> Result<Vec<Prosumer>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_prosumers(&text)
}
