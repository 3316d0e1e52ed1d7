//! Scenario files.
//!
//! ```json
//! {"name": "ieee13_s1",
//!  "network_file": "feeder.json",
//!  "prosumer_file": "prosumers.json",
//!  "tariff": {"pi_plus": 0.12, "pi_minus": 0.06},
//!  "g_scale": 0.0,
//!  "seed": 13,
//!  "options": {"trace": false, "use_exact_pf_for_report": true}}
//! ```
//!
//! Relative file paths resolve against the scenario file's directory.
//! Optional `solver` (see [`SolverOptions`]) and `options.report_model`
//! (a registered voltage model, default `distflow-sweep`) select strategies.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{load_feeder, voltage_models, RadialNetwork};
use crate::prosumer::{load_prosumers, Prosumer};
use crate::welfare::{central_solvers, SolverOptions, Tariff};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    pub trace: bool,
    pub use_exact_pf_for_report: bool,
    pub report_model: String,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            trace: false,
            use_exact_pf_for_report: true,
            report_model: "distflow-sweep".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: Option<String>,
    network_file: PathBuf,
    prosumer_file: PathBuf,
    tariff: Option<Tariff>,
    #[serde(default = "one")]
    g_scale: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    options: ScenarioOptions,
    #[serde(default)]
    solver: SolverOptions,
}

fn one() -> f64 {
    1.0
}

/// A validated scenario with its feeder and prosumers loaded. Prosumer
/// generation is stored unscaled; [`Scenario::prosumers`] applies
/// `g_scale`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub network_file: PathBuf,
    pub prosumer_file: PathBuf,
    pub tariff: Tariff,
    pub g_scale: f64,
    pub seed: u64,
    pub options: ScenarioOptions,
    pub solver: SolverOptions,
    pub network: RadialNetwork,
    base_prosumers: Vec<Prosumer>,
}

impl Scenario {
    /// Builds a scenario from already loaded inputs.
    pub fn new(
        name: impl Into<String>,
        network: RadialNetwork,
        prosumers: Vec<Prosumer>,
        tariff: Tariff,
        g_scale: f64,
    ) -> Result<Self> {
        let sc = Self {
            name: name.into(),
            description: None,
            network_file: PathBuf::new(),
            prosumer_file: PathBuf::new(),
            tariff,
            g_scale,
            seed: 0,
            options: ScenarioOptions::default(),
            solver: SolverOptions::default(),
            network,
            base_prosumers: prosumers,
        };
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<()> {
        if !(self.g_scale >= 0.0 && self.g_scale.is_finite()) {
            return Err(Error::config(
                "g_scale",
                format!("must be finite and >= 0, got {}", self.g_scale),
            ));
        }
        self.tariff
            .validate()
            .map_err(|e| Error::config("tariff", e.to_string()))?;
        if !central_solvers().contains(&self.solver.method) {
            return Err(Error::config(
                "solver.method",
                format!(
                    "unknown solver `{}` (registered: {})",
                    self.solver.method,
                    central_solvers().names().join(", ")
                ),
            ));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if !voltage_models().contains(&self.options.report_model) {
            return Err(Error::config(
                "options.report_model",
                format!(
                    "unknown voltage model `{}` (registered: {})",
                    self.options.report_model,
                    voltage_models().names().join(", ")
                ),
            ));
        }
        let b = self.network.num_buses();
        let mut ids = BTreeSet::new();
        for (i, p) in self.base_prosumers.iter().enumerate() {
            if p.bus == 0 || p.bus > b {
                return Err(Error::config(
                    format!("prosumers[{i}].bus"),
                    format!("bus {} is not a load bus of the feeder (1..={b})", p.bus),
                ));
            }
            if !ids.insert(p.id) {
                return Err(Error::config(
                    format!("prosumers[{i}].id"),
                    format!("duplicate prosumer id {}", p.id),
                ));
            }
        }
        Ok(())
    }

    /// Prosumers with generation multiplied by `g_scale`.
    pub fn prosumers(&self) -> Vec<Prosumer> {
        self.base_prosumers
            .iter()
            .map(|p| p.with_generation(p.g * self.g_scale))
            .collect()
    }

    pub fn base_prosumers(&self) -> &[Prosumer] {
        &self.base_prosumers
    }

    /// Total generation `G0` at the scenario's scale, kWh.
    pub fn generation(&self) -> f64 {
        self.base_prosumers.iter().map(|p| p.g).sum::<f64>() * self.g_scale
    }

    pub fn with_g_scale(&self, g_scale: f64) -> Result<Self> {
        let sc = Self {
            g_scale,
            ..self.clone()
        };
        sc.validate()?;
        Ok(sc)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| Error::config("scenario", e.to_string()))?;
    let tariff = file
        .tariff
        .ok_or_else(|| Error::config("tariff", "missing tariff {pi_plus, pi_minus}"))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            dir.join(p)
        }
    };
    let network_file = resolve(&file.network_file);
    let prosumer_file = resolve(&file.prosumer_file);
    let network = load_feeder(&network_file)
        .map_err(|e| Error::config("network_file", format!("{}: {e}", network_file.display())))?;
    let prosumers = load_prosumers(&prosumer_file)
        .map_err(|e| Error::config("prosumer_file", format!("{}: {e}", prosumer_file.display())))?;
    let sc = Scenario {
        name: file.name,
        description: file.description,
        network_file,
        prosumer_file,
        tariff,
        g_scale: file.g_scale,
        seed: file.seed,
        options: file.options,
        solver: file.solver,
        network,
        base_prosumers: prosumers,
    };
    sc.validate()?;
    Ok(sc)
}
