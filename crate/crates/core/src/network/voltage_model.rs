use std::sync::{Arc, OnceLock};

use super::{lin_voltages, DistFlowSweep, RadialNetwork, SensitivityMatrices};
use crate::error::Result;
use crate::registry::Registry;

/// A map from bus net consumption to squared bus voltages.
pub trait VoltageModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn squared_voltages(
        &self,
        net: &RadialNetwork,
        sens: &SensitivityMatrices,
        z_bus: &[f64],
    ) -> Result<Vec<f64>>;
}

#[derive(Debug, Default)]
pub struct LinDistFlow;

impl VoltageModel for LinDistFlow {
    fn name(&self) -> &'static str {
        "lindistflow"
    }

    fn squared_voltages(
        &self,
        _net: &RadialNetwork,
        sens: &SensitivityMatrices,
        z_bus: &[f64],
    ) -> Result<Vec<f64>> {
        lin_voltages(sens, z_bus)
    }
}

#[derive(Debug, Default)]
pub struct SweepModel(pub DistFlowSweep);

impl VoltageModel for SweepModel {
    fn name(&self) -> &'static str {
        "distflow-sweep"
    }

    fn squared_voltages(
        &self,
        net: &RadialNetwork,
        _sens: &SensitivityMatrices,
        z_bus: &[f64],
    ) -> Result<Vec<f64>> {
        self.0.solve(net, z_bus).map(|s| s.v2)
    }
}

/// Registered voltage models: `lindistflow`, `distflow-sweep`.
pub fn voltage_models() -> &'static Registry<dyn VoltageModel> {
    static REGISTRY: OnceLock<Registry<dyn VoltageModel>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn VoltageModel> = Registry::new("voltage model");
        reg.register("lindistflow", |_| Ok(Arc::new(LinDistFlow)));
        reg.register("distflow-sweep", |_| Ok(Arc::new(SweepModel::default())));
        reg
    })
}
