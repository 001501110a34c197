//! Locally optimal designs for inverse quadratic regression
//! `η(u) = u / (θ₀ + θ₁u + θ₂u²)` and its alternative parameterization.
//!
//! ```
//! use invquad::{Criterion, DesignSpace, ModelSpec};
//! use invquad::optimize::{optimal_design, SolverConfig};
//!
//! let model = ModelSpec::p1(0.0002865, 0.0002117, 0.0000301)?;
//! let space = DesignSpace::new(1.0, 14.0)?;
//! let sol = optimal_design(&model, &Criterion::D, &space, &SolverConfig::default())?;
//! assert!(sol.report.passed);
//! assert!((sol.design.points()[1] - 3.409).abs() < 1e-3);
//! # Ok::<(), invquad::Error>(())
//! ```

pub mod chebyshev;
pub mod closed_form;
pub mod design;
pub mod error;
mod grid;
pub mod model;
pub mod optimize;
pub mod simulate;
pub mod verify;

pub use design::{Criterion, DEfficiency, Design, DesignSpace, InformationMatrix};
pub use error::{Error, Result};
pub use model::{GammaFactor, ModelKind, ModelSpec};
