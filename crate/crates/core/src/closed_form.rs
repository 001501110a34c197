//! Explicit optimal designs on large design spaces.
//!
//! For every implemented criterion the optimal design on a sufficiently large
//! interval is geometric: support `{p/ρ, p, ρp}` around the response peak `p`,
//! with a scaling factor `ρ` that depends on the model only through γ.
//! On smaller intervals one or both endpoints become support points; see
//! [`classify_interval`].

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::chebyshev::optimal_weights_for_c;
use crate::design::{Criterion, Design, DesignSpace};
use crate::error::{Error, Result};
use crate::model::{GammaFactor, ModelKind, ModelSpec};

/// Disagreement above which an explicit weight formula is overruled by the
/// general optimal-weight formula.
const WEIGHT_RECONCILE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactor {
    pub rho: f64,
    /// Intermediate `δ = ρ + 1/ρ` of the D-criterion factor.
    pub delta: Option<f64>,
    pub gamma: GammaFactor,
}

/// Scaling factor shared by the D₁-, E- and extrapolation-optimal designs.
pub fn scaling_factor_d1(gamma: GammaFactor) -> ScalingFactor {
    let g = gamma.value();
    let sqrt2 = std::f64::consts::SQRT_2;
    let rho = 1.0 + (2.0 + g) / sqrt2 + (2.0 * (1.0 + sqrt2) + (2.0 + sqrt2) * g + g * g / 2.0).sqrt();
    ScalingFactor {
        rho,
        delta: None,
        gamma,
    }
}

/// Scaling factor of the D-optimal design.
pub fn scaling_factor_d(gamma: GammaFactor) -> ScalingFactor {
    let g = gamma.value();
    let delta = 0.5 * (g + 1.0 + (g * g + 6.0 * g + 33.0).sqrt());
    let rho = (delta + (delta * delta - 4.0).sqrt()) / 2.0;
    ScalingFactor {
        rho,
        delta: Some(delta),
        gamma,
    }
}

/// Scaling factor governing the support of the optimal design for `criterion`.
///
/// General c-vectors share the Chebyshev points of the D₁ criterion.
pub fn criterion_scaling(model: &ModelSpec, criterion: &Criterion) -> ScalingFactor {
    match criterion {
        Criterion::D => scaling_factor_d(model.gamma()),
        _ => scaling_factor_d1(model.gamma()),
    }
}

/// `{p/ρ, p, ρp}`.
pub fn geometric_support(model: &ModelSpec, rho: f64) -> [f64; 3] {
    let p = model.peak_location();
    [p / rho, p, rho * p]
}

/// Which endpoints of `[s, t]` belong to the optimal support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalForm {
    /// The geometric design fits: `s ≤ p/ρ` and `t ≥ ρp`.
    Unconstrained,
    /// Support `{s, u₁, u₂}`.
    LowerPinned,
    /// Support `{u₀, u₁, t}`.
    UpperPinned,
    /// Support `{s, u₁, t}`.
    BothPinned,
}

impl IntervalForm {
    pub fn lower_pinned(self) -> bool {
        matches!(self, IntervalForm::LowerPinned | IntervalForm::BothPinned)
    }

    pub fn upper_pinned(self) -> bool {
        matches!(self, IntervalForm::UpperPinned | IntervalForm::BothPinned)
    }
}

/// Classifies `space` against the geometric support of `criterion`.
///
/// An endpoint that coincides with a geometric support point counts as pinned.
pub fn classify_interval(model: &ModelSpec, criterion: &Criterion, space: &DesignSpace) -> IntervalForm {
    let rho = criterion_scaling(model, criterion).rho;
    let [lo, _, hi] = geometric_support(model, rho);
    let lower = space.lower() > 0.0 && space.lower() >= lo;
    let upper = space.is_bounded() && space.upper() <= hi;
    match (lower, upper) {
        (false, false) => IntervalForm::Unconstrained,
        (true, false) => IntervalForm::LowerPinned,
        (false, true) => IntervalForm::UpperPinned,
        (true, true) => IntervalForm::BothPinned,
    }
}

/// Explicit closed-form D₁-optimal weights `(w₀, w₁, 1 − w₀ − w₁)`.
pub fn d1_weights_closed_form(model: &ModelSpec) -> [f64; 3] {
    let [t0, t1, t2] = model.theta();
    let r = scaling_factor_d1(model.gamma()).rho;
    let (w0, w1) = match model.kind() {
        ModelKind::P1 => {
            let q = (t0 * t2).sqrt();
            let lambda =
                t0 * (t0 * t2 * (1.0 + 6.0 * r * r + r.powi(4)) + 2.0 * t1 * r * (t1 * r + q * (1.0 + r).powi(2)));
            let w0 = (t2.sqrt() * t0 + t1 * t0.sqrt() * r + t2.sqrt() * t0 * r * r).powi(2) / ((1.0 + r) * lambda);
            let w1 = (2.0 * t2.sqrt() * t0 + t1 * t0.sqrt()).powi(2) * r * r / lambda;
            (w0, w1)
        }
        ModelKind::P2 => {
            let q = (t1 * t2).sqrt();
            let lambda = t1
                * (r * (2.0 * r + 3.0 * q * (1.0 + r).powi(2))
                    + t1 * t2
                        * (1.0 + 2.0 * q * (1.0 + r).powi(2) * (1.0 + r * r) + r * (8.0 + r * (6.0 + r * (8.0 + r)))));
            let w0 = (t2.sqrt() * t1 + t1.sqrt() * r + t2.sqrt() * t1 * r * r).powi(2) * (1.0 + q * (1.0 + r))
                / ((1.0 + r) * lambda);
            let w1 = (2.0 * t1 + q).powi(2) * r * (r + q * (1.0 + r * r)) / lambda;
            (w0, w1)
        }
    };
    [w0, w1, 1.0 - w0 - w1]
}

/// Explicit closed-form extrapolation-optimal weights for prediction at `xe`.
pub fn extrapolation_weights_closed_form(model: &ModelSpec, xe: f64) -> [f64; 3] {
    let [t0, t1, t2] = model.theta();
    let r = scaling_factor_d1(model.gamma()).rho;
    let x = xe;
    let r2 = r * r;
    let quart = 1.0 + 6.0 * r2 + r.powi(4);
    let (w0, w1) = match model.kind() {
        ModelKind::P1 => {
            let (s0, s2, q) = (t0.sqrt(), t2.sqrt(), (t0 * t2).sqrt());
            let lambda = t0
                * (t0 * t0 * t2 * quart
                    + t0 * (2.0 * t1 * t1 * r2
                        + 2.0 * t1 * r * (q * (1.0 + r).powi(2) - 4.0 * x * t2 * (1.0 + r2))
                        + t2 * x * (-2.0 * q * (1.0 + r).powi(2) * (1.0 + r2) + x * t2 * quart))
                    + t1 * x
                        * r
                        * (2.0 * q * t2 * x * (1.0 + r).powi(2) - t1 * (q + r * (-2.0 * x * t2 + q * (2.0 + r)))));
            let w0 = (s0 - x * s2) * (-x * s2 + s0 * r) * (t0 * s2 + t1 * s0 * r + t0 * s2 * r2).powi(2)
                / ((1.0 + r) * lambda);
            let w1 = (2.0 * t0 * s2 + t1 * s0).powi(2) * r * (-x * s2 + s0 * r) * (s0 - x * s2 * r) / lambda;
            (w0, w1)
        }
        ModelKind::P2 => {
            let (s1, s2, q) = (t1.sqrt(), t2.sqrt(), (t1 * t2).sqrt());
            let lambda = t1
                * (t1 * t1 * t2 * quart
                    + x * r * (-q + 2.0 * q * t2 * x * (1.0 + r).powi(2) - r * (-2.0 * x * s2 + q * (2.0 + r)))
                    + t1 * (2.0 * r2
                        + 2.0 * r * (q * (1.0 + r).powi(2) - 4.0 * x * s2 * (1.0 + r2))
                        + x * (-2.0 * q * t2 * (1.0 + r).powi(2) * (1.0 + r2) + x * t2 * t2 * quart)));
            let w0 =
                (s1 - x * s2) * (-x * s2 + s1 * r) * (t1 * s2 + s1 * r + t1 * s2 * r2).powi(2) / ((1.0 + r) * lambda);
            let w1 = (2.0 * t1 * s2 + s1).powi(2) * r * (-x * s2 + s1 * r) * (s1 - x * s2 * r) / lambda;
            (w0, w1)
        }
    };
    [w0, w1, 1.0 - w0 - w1]
}

/// Coefficients of the equioscillating polynomial on `[0, ∞)`, normalised so
/// that it equals +1 at the largest Chebyshev point. The E-optimal design is
/// c-optimal for this vector.
pub fn e_chebyshev_vector(model: &ModelSpec) -> Vector3<f64> {
    let [t0, t1, t2] = model.theta();
    let r = scaling_factor_d1(model.gamma()).rho;
    let denom = (r - 1.0).powi(2) * r;
    match model.kind() {
        ModelKind::P1 => {
            let (s0, s2) = (t0.sqrt(), t2.sqrt());
            let a = 2.0 * t1 * t1 * r * r
                + 2.0 * s0 * t1 * s2 * r * (1.0 + r).powi(2)
                + t0 * t2 * (1.0 + 6.0 * r * r + r.powi(4));
            let mid = t1 * t1 * r * (1.0 + r).powi(2)
                + 8.0 * s0 * t1 * s2 * r * (1.0 + r * r)
                + 2.0 * t0 * t2 * (1.0 + r).powi(2) * (1.0 + r * r);
            Vector3::new(-s0 * a / (s2 * denom), mid / denom, -s2 * a / (s0 * denom))
        }
        ModelKind::P2 => {
            let q = (t1 * t2).sqrt();
            let b = (2.0 * r + q * (1.0 + r).powi(2)) * (r + q * (1.0 + r * r));
            let k = (1.0 + 2.0 * q) * b / (t0 * denom);
            Vector3::new(
                -1.0 - 2.0 * q - 2.0 * b / denom,
                -t1.sqrt() * k / t2.sqrt(),
                -t2.sqrt() * k / t1.sqrt(),
            )
        }
    }
}

/// Cross-checks explicit weights against the general formula and keeps the
/// latter when they disagree.
fn reconcile(
    explicit: [f64; 3],
    points: &[f64; 3],
    c: &Vector3<f64>,
    model: &ModelSpec,
    what: &str,
) -> Result<[f64; 3]> {
    let general = optimal_weights_for_c(points, c, model)?;
    let gap = explicit
        .iter()
        .zip(general.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > WEIGHT_RECONCILE_TOL || explicit.iter().any(|w| !w.is_finite()) {
        warn!(
            "{what}: closed-form weights {explicit:?} differ from optimal-weight formula {general:?} by {gap:e}; using the latter"
        );
        Ok(general)
    } else {
        Ok(explicit)
    }
}

/// The geometric optimal design on `[0, ∞)`.
///
/// Supported for D, E, D₁ and extrapolation. For extrapolation `x_e` must lie
/// outside `[p/ρ, ρp]`, where the design is optimal on every interval that
/// contains its support but not `x_e`.
pub fn unbounded_design(model: &ModelSpec, criterion: &Criterion) -> Result<Design> {
    let rho = criterion_scaling(model, criterion).rho;
    let points = geometric_support(model, rho);
    let weights = match *criterion {
        Criterion::D => [1.0 / 3.0; 3],
        Criterion::D1 => reconcile(
            d1_weights_closed_form(model),
            &points,
            &Vector3::new(0.0, 0.0, 1.0),
            model,
            "D1",
        )?,
        Criterion::Extrapolation(xe) => {
            if !(xe.is_finite() && xe > 0.0) || (xe >= points[0] && xe <= points[2]) {
                return Err(Error::Validation(format!(
                    "x_e = {xe} must lie outside [{}, {}]",
                    points[0], points[2]
                )));
            }
            reconcile(
                extrapolation_weights_closed_form(model, xe),
                &points,
                &model.gradient(xe),
                model,
                "extrapolation",
            )?
        }
        Criterion::E => optimal_weights_for_c(&points, &e_chebyshev_vector(model), model)?,
        Criterion::C(_) => return Err(Error::UnsupportedCriterion(criterion.to_string())),
    };
    Design::with_tolerance(points.to_vec(), weights.to_vec(), 1e-10)
}
