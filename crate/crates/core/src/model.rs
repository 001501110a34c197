//! Inverse quadratic regression models.
//!
//! Two parameterizations of `E(Y|u)` are supported:
//!
//! * [`ModelKind::P1`]: `η(u, θ) = u / (θ₀ + θ₁u + θ₂u²)`
//! * [`ModelKind::P2`]: `η(u, θ) = θ₀u / (θ₁ + u + θ₂u²)`
//!
//! Both rise from zero to a single maximum and decay back to a zero asymptote.
//! Optimal designs depend on θ only through the peak location and a
//! dimensionless shape ratio, see [`ModelSpec::gamma`].

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    P1,
    P2,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::P1 => f.write_str("P1"),
            ModelKind::P2 => f.write_str("P2"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P1" => Ok(ModelKind::P1),
            "P2" => Ok(ModelKind::P2),
            other => Err(Error::Validation(format!(
                "unknown model kind {other:?}, expected P1 or P2"
            ))),
        }
    }
}

/// Dimensionless shape ratio of a model.
///
/// `θ₁/√(θ₀θ₂)` for P1 and `1/√(θ₁θ₂)` for P2. Together with the peak
/// location it determines the geometric scaling factors of the optimal designs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GammaFactor(pub f64);

impl GammaFactor {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawModel {
    kind: ModelKind,
    theta: [f64; 3],
}

/// A validated inverse quadratic model: parameterization plus `θ = (θ₀, θ₁, θ₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ModelSpec {
    kind: ModelKind,
    theta: [f64; 3],
}

impl TryFrom<RawModel> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        ModelSpec::new(raw.kind, raw.theta)
    }
}

impl From<ModelSpec> for RawModel {
    fn from(m: ModelSpec) -> Self {
        RawModel {
            kind: m.kind,
            theta: m.theta,
        }
    }
}

impl ModelSpec {
    /// Builds a model, rejecting parameters outside the positivity region.
    pub fn new(kind: ModelKind, theta: [f64; 3]) -> Result<Self> {
        validate(kind, theta)?;
        Ok(ModelSpec { kind, theta })
    }

    /// Skips validation; for iterates of a fitting routine.
    pub(crate) fn unchecked(kind: ModelKind, theta: [f64; 3]) -> Self {
        ModelSpec { kind, theta }
    }

    pub fn p1(theta0: f64, theta1: f64, theta2: f64) -> Result<Self> {
        Self::new(ModelKind::P1, [theta0, theta1, theta2])
    }

    pub fn p2(theta0: f64, theta1: f64, theta2: f64) -> Result<Self> {
        Self::new(ModelKind::P2, [theta0, theta1, theta2])
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn theta(&self) -> [f64; 3] {
        self.theta
    }

    /// Re-checks the parameter constraints.
    pub fn validate(&self) -> Result<()> {
        validate(self.kind, self.theta)
    }

    /// Expected response `η(u, θ)`.
    pub fn eta(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let [t0, t1, t2] = self.theta;
        match self.kind {
            ModelKind::P1 => u / (t0 + t1 * u + t2 * u * u),
            ModelKind::P2 => t0 * u / (t1 + u + t2 * u * u),
        }
    }

    /// Gradient of `η` with respect to θ at design point `u`.
    ///
    /// The zero vector at `u = 0`.
    pub fn gradient(&self, u: f64) -> Vector3<f64> {
        if u == 0.0 {
            return Vector3::zeros();
        }
        let [t0, t1, t2] = self.theta;
        match self.kind {
            ModelKind::P1 => {
                let d = t0 + t1 * u + t2 * u * u;
                let s = -u / (d * d);
                Vector3::new(s, s * u, s * u * u)
            }
            ModelKind::P2 => {
                let d = t1 + u + t2 * u * u;
                let s = u / d;
                Vector3::new(s, -s * t0 / d, -s * t0 * u * u / d)
            }
        }
    }

    /// Derivative of [`ModelSpec::gradient`] with respect to `u`.
    pub fn gradient_du(&self, u: f64) -> Vector3<f64> {
        let [t0, t1, t2] = self.theta;
        match self.kind {
            ModelKind::P1 => {
                // f_j = -u^{j+1} d^{-2}
                let d = t0 + t1 * u + t2 * u * u;
                let dd = t1 + 2.0 * t2 * u;
                let d2 = d * d;
                let d3 = d2 * d;
                Vector3::new(
                    -1.0 / d2 + 2.0 * u * dd / d3,
                    -2.0 * u / d2 + 2.0 * u * u * dd / d3,
                    -3.0 * u * u / d2 + 2.0 * u * u * u * dd / d3,
                )
            }
            ModelKind::P2 => {
                let d = t1 + u + t2 * u * u;
                let dd = 1.0 + 2.0 * t2 * u;
                let d2 = d * d;
                let d3 = d2 * d;
                Vector3::new(
                    1.0 / d - u * dd / d2,
                    -t0 * (1.0 / d2 - 2.0 * u * dd / d3),
                    -t0 * (3.0 * u * u / d2 - 2.0 * u * u * u * dd / d3),
                )
            }
        }
    }

    /// Location of the response maximum.
    pub fn peak_location(&self) -> f64 {
        let [t0, t1, t2] = self.theta;
        match self.kind {
            ModelKind::P1 => (t0 / t2).sqrt(),
            ModelKind::P2 => (t1 / t2).sqrt(),
        }
    }

    /// Height of the response maximum.
    pub fn peak_value(&self) -> f64 {
        let [t0, t1, t2] = self.theta;
        match self.kind {
            ModelKind::P1 => 1.0 / (t1 + 2.0 * (t0 * t2).sqrt()),
            ModelKind::P2 => t0 / (1.0 + 2.0 * (t1 * t2).sqrt()),
        }
    }

    pub fn gamma(&self) -> GammaFactor {
        let [t0, t1, t2] = self.theta;
        match self.kind {
            ModelKind::P1 => GammaFactor(t1 / (t0 * t2).sqrt()),
            ModelKind::P2 => GammaFactor(1.0 / (t1 * t2).sqrt()),
        }
    }
}

fn validate(kind: ModelKind, theta: [f64; 3]) -> Result<()> {
    let [t0, t1, t2] = theta;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("θ must be finite".into()));
    }
    match kind {
        ModelKind::P1 => {
            if t0 <= 0.0 {
                return Err(Error::Validation("P1 requires θ₀ > 0".into()));
            }
            if t2 <= 0.0 {
                return Err(Error::Validation("P1 requires θ₂ > 0".into()));
            }
            // denominator must stay positive on (0, ∞); at equality it vanishes at the peak
            if t1 <= -2.0 * (t0 * t2).sqrt() {
                return Err(Error::Validation("P1 requires θ₁ > −2√(θ₀θ₂)".into()));
            }
        }
        ModelKind::P2 => {
            if t0 <= 0.0 || t1 <= 0.0 || t2 <= 0.0 {
                return Err(Error::Validation("P2 requires θ₀, θ₁, θ₂ > 0".into()));
            }
            if 2.0 * (t1 * t2).sqrt() <= 1.0 {
                return Err(Error::Validation("P2 requires 2√(θ₁θ₂) > 1".into()));
            }
        }
    }
    Ok(())
}
