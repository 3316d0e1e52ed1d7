//! Device utility families.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// A concave, non-decreasing device utility together with its inverse
/// marginal utility. Implementations must keep `inverse_marginal`
/// non-increasing so aggregate demand is monotone in price.
pub trait Utility: Send + Sync + fmt::Debug {
    fn family(&self) -> &'static str;

    fn value(&self, d: f64) -> f64;

    fn marginal(&self, d: f64) -> f64;

    /// Unclipped consumption at which marginal utility equals `price`.
    fn inverse_marginal(&self, price: f64) -> f64;

    /// Derivative of `inverse_marginal` with respect to price.
    fn inverse_marginal_slope(&self, price: f64) -> f64;

    /// Parameters in the prosumer-file form.
    fn params(&self) -> Value;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub pi0: f64,
    pub d0: f64,
    pub elasticity: f64,
}

/// `alpha d - beta d^2 / 2`, held at `alpha^2 / (2 beta)` past `alpha / beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedQuadratic {
    pub alpha: f64,
    pub beta: f64,
    calibration: Option<Calibration>,
}

impl CappedQuadratic {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!(
                "utility slope beta must be positive, got {beta}"
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "utility intercept alpha must be finite, got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            calibration: None,
        })
    }

    /// Constant-slope fit through an anchor `(pi0, d0)` with price
    /// elasticity `-elasticity` at the anchor.
    pub fn calibrated(cal: Calibration) -> Result<Self> {
        let Calibration {
            pi0,
            d0,
            elasticity,
        } = cal;
        if !(pi0 > 0.0 && d0 > 0.0 && elasticity > 0.0) {
            return Err(Error::Domain(format!(
                "calibration needs pi0, d0, elasticity > 0, got ({pi0}, {d0}, {elasticity})"
            )));
        }
        let beta = pi0 / (elasticity * d0);
        let alpha = pi0 + beta * d0;
        let mut u = Self::new(alpha, beta)?;
        u.calibration = Some(cal);
        Ok(u)
    }

    pub fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }

    /// Consumption beyond which utility no longer grows.
    pub fn saturation(&self) -> f64 {
        self.alpha / self.beta
    }
}

impl Utility for CappedQuadratic {
    fn family(&self) -> &'static str {
        "quadratic"
    }

    fn value(&self, d: f64) -> f64 {
        let d = d.min(self.saturation());
        self.alpha * d - 0.5 * self.beta * d * d
    }

    fn marginal(&self, d: f64) -> f64 {
        (self.alpha - self.beta * d).max(0.0)
    }

    fn inverse_marginal(&self, price: f64) -> f64 {
        (self.alpha - price) / self.beta
    }

    fn inverse_marginal_slope(&self, _price: f64) -> f64 {
        -1.0 / self.beta
    }

    fn params(&self) -> Value {
        let mut obj = serde_json::json!({ "alpha": self.alpha, "beta": self.beta });
        if let Some(cal) = self.calibration {
            obj["calibrate"] = serde_json::to_value(cal).unwrap_or(Value::Null);
        }
        obj
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticParams {
    alpha: Option<f64>,
    beta: Option<f64>,
    calibrate: Option<Calibration>,
}

fn quadratic_from_params(params: &Value) -> Result<Arc<dyn Utility>> {
    let p: QuadraticParams = serde_json::from_value(params.clone())
        .map_err(|e| Error::config("devices[]", e.to_string()))?;
    let u = match (p.alpha, p.beta, p.calibrate) {
        (None, None, Some(cal)) => CappedQuadratic::calibrated(cal),
        (Some(alpha), Some(beta), None) => CappedQuadratic::new(alpha, beta),
        _ => {
            return Err(Error::config(
                "devices[]",
                "quadratic utility needs either `alpha` and `beta` or `calibrate`",
            ))
        }
    };
    Ok(Arc::new(
        u.map_err(|e| Error::config("devices[]", e.to_string()))?,
    ))
}

/// Registered utility families, keyed by the device `kind` field.
pub fn utility_families() -> &'static Registry<dyn Utility, Value> {
    static REGISTRY: OnceLock<Registry<dyn Utility, Value>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Utility, Value> = Registry::new("utility family");
        reg.register("quadratic", quadratic_from_params);
        reg
    })
}
