//! Equivalence-theorem certification of candidate designs.
//!
//! Each check evaluates a directional function `d(u)` over a dense grid of the
//! design space and compares its maximum with the bound the equivalence
//! theorem prescribes:
//!
//! | criterion | `d(u)` | bound |
//! |-----------|--------|-------|
//! | c, D₁, extrapolation | `(f(u)ᵀGc)²` | `cᵀM⁻c` |
//! | D | `f(u)ᵀM⁻¹f(u)` | 3 |
//! | E | `(f(u)ᵀz)²` | `λ_min` |

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::closed_form::criterion_scaling;
use crate::design::{estimable, information_matrix, Criterion, Design, DesignSpace, InformationMatrix};
use crate::error::{Error, Result};
use crate::grid::{evaluation_grid, golden_max};
use crate::model::ModelSpec;

/// Relative eigenvalue gap below which `λ_min` counts as repeated.
const EIGEN_GAP_TOL: f64 = 1e-8;
/// Grid used while searching the null space for a generalized inverse.
const NULL_SEARCH_POINTS: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub grid_size: usize,
    /// Largest relative violation still reported as passed.
    pub tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            grid_size: 10_000,
            tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub criterion: Criterion,
    pub bound: f64,
    pub max_directional: f64,
    pub argmax_u: f64,
    /// `max(0, max_directional − bound) / bound`.
    pub violation: f64,
    pub passed: bool,
    pub grid_size: usize,
    /// `d(uᵢ)` at each support point, in design order.
    pub support_values: Vec<f64>,
    /// Unbounded spaces only: whether `d` decreases at the right end of the grid.
    pub tail_decreasing: Option<bool>,
}

/// The directional function of one equivalence condition.
#[derive(Debug, Clone, Copy)]
enum Directional {
    Linear(Vector3<f64>),
    Quadratic(Matrix3<f64>),
}

impl Directional {
    fn eval(&self, model: &ModelSpec, u: f64) -> f64 {
        let f = model.gradient(u);
        match self {
            Directional::Linear(h) => f.dot(h).powi(2),
            Directional::Quadratic(a) => f.dot(&(a * f)),
        }
    }
}

fn grid_for(model: &ModelSpec, criterion: &Criterion, space: &DesignSpace, design: &Design, n: usize) -> Vec<f64> {
    let rho = criterion_scaling(model, criterion).rho;
    let mut extra = design.points().to_vec();
    if let Criterion::Extrapolation(xe) = criterion {
        extra.push(*xe);
    }
    evaluation_grid(space, model.peak_location(), rho, n, &extra)
}

fn report(
    d: Directional,
    bound: f64,
    criterion: Criterion,
    design: &Design,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &VerifyConfig,
) -> OptimalityReport {
    let grid = grid_for(model, &criterion, space, design, config.grid_size);
    let values: Vec<f64> = grid.iter().map(|&u| d.eval(model, u)).collect();
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let lo = grid[best_i.saturating_sub(1)];
    let hi = grid[(best_i + 1).min(grid.len() - 1)];
    let (mut argmax, refined) = golden_max(|u| d.eval(model, u), lo, hi, 1e-12 * hi.max(1.0));
    if refined > best {
        best = refined;
    } else {
        argmax = grid[best_i];
    }
    let tail_decreasing = (!space.is_bounded()).then(|| {
        let end = *grid.last().expect("non-empty grid");
        d.eval(model, end * 1.001) <= d.eval(model, end)
    });
    let support_values = design.points().iter().map(|&u| d.eval(model, u)).collect();
    let violation = ((best - bound) / bound).max(0.0);
    OptimalityReport {
        criterion,
        bound,
        max_directional: best,
        argmax_u: argmax,
        violation,
        passed: violation <= config.tolerance && tail_decreasing != Some(false),
        grid_size: grid.len(),
        support_values,
        tail_decreasing,
    }
}

/// Minimises `max_k |fₖᵀ(h₀ + N y)|` over `y` by nested golden-section
/// search. The objective is convex, so each nested minimum is unimodal.
fn minimax_over_null(h0: &Vector3<f64>, basis: &[Vector3<f64>], fs: &[Vector3<f64>]) -> Vector3<f64> {
    let a: Vec<f64> = fs.iter().map(|f| f.dot(h0)).collect();
    let b: Vec<Vec<f64>> = fs.iter().map(|f| basis.iter().map(|n| f.dot(n)).collect()).collect();
    let objective = |y: &[f64]| -> f64 {
        a.iter()
            .zip(&b)
            .map(|(ak, bk)| (ak + bk.iter().zip(y).map(|(x, z)| x * z).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    };
    let scale = h0.norm().max(f64::MIN_POSITIVE);
    let mut radius = scale;
    let mut y = vec![0.0; basis.len()];
    for _ in 0..30 {
        let tol = 1e-13 * radius;
        y = match basis.len() {
            1 => vec![golden_max(|t| -objective(&[t]), -radius, radius, tol).0],
            _ => {
                let inner = |t: f64| golden_max(|s| -objective(&[t, s]), -radius, radius, tol);
                let (t, _) = golden_max(|t| inner(t).1, -radius, radius, tol);
                vec![t, inner(t).0]
            }
        };
        if y.iter().all(|v| v.abs() < 0.9 * radius) {
            break;
        }
        radius *= 4.0;
    }
    basis.iter().zip(&y).fold(*h0, |acc, (n, t)| acc + n * *t)
}

/// Elfving-type check for c-optimality.
///
/// With `M` nonsingular the generalized inverse is `M⁻¹`. With `M` singular
/// every vector `G₀c + n`, `n ∈ null(M)`, is `Gc` for some generalized
/// inverse `G`; the one minimising the grid maximum is used, so a singular
/// optimal design is not rejected merely because `G₀` is the wrong choice.
pub fn check_c_optimality(
    design: &Design,
    c: &Vector3<f64>,
    model: &ModelSpec,
    space: &DesignSpace,
) -> Result<OptimalityReport> {
    check_c_with(
        design,
        c,
        Criterion::C([c[0], c[1], c[2]]),
        model,
        space,
        &VerifyConfig::default(),
    )
}

fn check_c_with(
    design: &Design,
    c: &Vector3<f64>,
    criterion: Criterion,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &VerifyConfig,
) -> Result<OptimalityReport> {
    let m = information_matrix(design, model);
    if !estimable(c, &m) {
        return Err(Error::NotEstimable);
    }
    let null = m.null_space();
    // the component in range(M) is M⁺c, the centre of the null-space search
    let h0 = null.iter().fold(m.generalized_inverse() * c, |h, n| h - n * n.dot(&h));
    let bound = c.dot(&h0);
    let h = if null.is_empty() {
        h0
    } else {
        let grid = grid_for(model, &criterion, space, design, NULL_SEARCH_POINTS);
        let mut fs: Vec<Vector3<f64>> = grid.iter().map(|&u| model.gradient(u)).collect();
        fs.extend(design.points().iter().map(|&u| model.gradient(u)));
        minimax_over_null(&h0, &null, &fs)
    };
    Ok(report(
        Directional::Linear(h),
        bound,
        criterion,
        design,
        model,
        space,
        config,
    ))
}

/// Kiefer–Wolfowitz check `f(u)ᵀM⁻¹f(u) ≤ 3`.
pub fn check_d_optimality(design: &Design, model: &ModelSpec, space: &DesignSpace) -> Result<OptimalityReport> {
    check_d_with(design, model, space, &VerifyConfig::default())
}

fn nonsingular_inverse(m: &InformationMatrix) -> Result<Matrix3<f64>> {
    if !m.is_nonsingular() {
        return Err(Error::SingularMatrix(format!(
            "information matrix has rank {}",
            m.rank()
        )));
    }
    m.matrix()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("information matrix".into()))
}

fn check_d_with(
    design: &Design,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &VerifyConfig,
) -> Result<OptimalityReport> {
    let m = information_matrix(design, model);
    let inv = nonsingular_inverse(&m)?;
    Ok(report(
        Directional::Quadratic(inv),
        3.0,
        Criterion::D,
        design,
        model,
        space,
        config,
    ))
}

/// Check `(f(u)ᵀz)² ≤ λ_min` for a simple smallest eigenvalue with unit
/// eigenvector `z`.
pub fn check_e_optimality(design: &Design, model: &ModelSpec, space: &DesignSpace) -> Result<OptimalityReport> {
    check_e_with(design, model, space, &VerifyConfig::default())
}

fn check_e_with(
    design: &Design,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &VerifyConfig,
) -> Result<OptimalityReport> {
    let m = information_matrix(design, model);
    nonsingular_inverse(&m)?;
    let (values, vectors) = m.eigen();
    let gap = (values[1] - values[0]) / values[2];
    if gap <= EIGEN_GAP_TOL {
        return Err(Error::MultipleMinEigenvalue { gap });
    }
    let z = vectors.column(0).into_owned();
    Ok(report(
        Directional::Linear(z),
        values[0],
        Criterion::E,
        design,
        model,
        space,
        config,
    ))
}

/// Runs the equivalence check matching `criterion`.
pub fn check_design(
    design: &Design,
    criterion: &Criterion,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &VerifyConfig,
) -> Result<OptimalityReport> {
    match criterion {
        Criterion::D => check_d_with(design, model, space, config),
        Criterion::E => check_e_with(design, model, space, config),
        _ => {
            criterion.check_against(space).or_else(|e| match criterion {
                // a one-point design at x_e is a legitimate candidate inside the space
                Criterion::Extrapolation(xe) if xe.is_finite() && *xe > 0.0 => Ok(()),
                _ => Err(e),
            })?;
            let c = criterion.c_vector(model).expect("c-type criterion");
            check_c_with(design, &c, *criterion, model, space, config)
        }
    }
}
