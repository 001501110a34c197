//! Chebyshev-system machinery for the gradient components `{f₀, f₁, f₂}`.
//!
//! The gradient components of both parameterizations form a Chebyshev system
//! on `(0, ∞)`. The unique "polynomial" `φ = Σ αᵢ fᵢ` that equioscillates
//! between ±1 at three points `s₀ < s₁ < s₂` supports every c-optimal design
//! whose `c` lies in the set `A*`, and also the E-optimal design.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_form::scaling_factor_d1;
use crate::design::DesignSpace;
use crate::error::{Error, Result};
use crate::grid::evaluation_grid;
use crate::model::ModelSpec;

const MAX_NEWTON_STEPS: usize = 200;
const RESTARTS: usize = 20;
const GRID_POINTS: usize = 10_000;
const BOUND_TOL: f64 = 1e-8;
const STATIONARY_TOL: f64 = 1e-6;
const DISTINCT_TOL: f64 = 1e-6;

/// Equioscillating combination of the gradient components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSolution {
    /// Chebyshev points `s₀ < s₁ < s₂`.
    pub points: [f64; 3],
    /// Coefficients `α*` with `φ(sᵢ) = (−1)^{2−i}·level`.
    pub coefficients: [f64; 3],
    pub level: f64,
}

impl ChebyshevSolution {
    pub fn phi(&self, model: &ModelSpec, u: f64) -> f64 {
        Vector3::from(self.coefficients).dot(&model.gradient(u))
    }

    pub fn phi_du(&self, model: &ModelSpec, u: f64) -> f64 {
        Vector3::from(self.coefficients).dot(&model.gradient_du(u))
    }

    pub fn coefficient_vector(&self) -> Vector3<f64> {
        Vector3::from(self.coefficients)
    }

    /// Rescales the coefficients so that the oscillation amplitude is `level`.
    pub fn with_level(&self, level: f64) -> Self {
        let k = level / self.level;
        ChebyshevSolution {
            points: self.points,
            coefficients: self.coefficients.map(|a| a * k),
            level,
        }
    }
}

/// Rows are `f(uᵢ)ᵀ`.
fn support_matrix(model: &ModelSpec, points: &[f64; 3]) -> Matrix3<f64> {
    Matrix3::from_rows(&[
        model.gradient(points[0]).transpose(),
        model.gradient(points[1]).transpose(),
        model.gradient(points[2]).transpose(),
    ])
}

fn is_singular(x: &Matrix3<f64>) -> bool {
    let scale: f64 = x.row_iter().map(|r| r.norm()).product();
    scale == 0.0 || !scale.is_finite() || x.determinant().abs() <= 1e-13 * scale
}

/// `det(f(u₀), f(u₁), f(u₂))`; nonzero for distinct positive points.
pub fn system_determinant(model: &ModelSpec, points: [f64; 3]) -> Result<f64> {
    if points.iter().any(|u| !(u.is_finite() && *u > 0.0)) {
        return Err(Error::Validation("points must be positive and finite".into()));
    }
    if points[0] == points[1] || points[1] == points[2] || points[0] == points[2] {
        return Err(Error::Validation("points must be distinct".into()));
    }
    Ok(support_matrix(model, &points).transpose().determinant())
}

/// Coefficients `α` with `Σ αⱼ fⱼ(sᵢ) = (−1)^{2−i}` at the given points.
pub fn interpolating_coefficients(model: &ModelSpec, points: &[f64; 3]) -> Result<Vector3<f64>> {
    let x = support_matrix(model, points);
    if is_singular(&x) {
        return Err(Error::SingularSystem);
    }
    x.lu().solve(&Vector3::new(1.0, -1.0, 1.0)).ok_or(Error::SingularSystem)
}

/// Sampled check that `c` belongs to `A*`.
///
/// Evaluates the bordered determinant `det(f(x₁), f(x₂), c)` over all pairs of
/// a 200-point grid of the space and requires it to stay bounded away from
/// zero with a constant sign. This is a necessary condition only: a sign
/// change or near-zero value proves `c ∉ A*`, passing does not prove membership.
pub fn in_a_star(c: &Vector3<f64>, model: &ModelSpec, space: &DesignSpace) -> bool {
    let cn = c.norm();
    if cn == 0.0 {
        return false;
    }
    let p = model.peak_location();
    let rho = scaling_factor_d1(model.gamma()).rho;
    let grid: Vec<f64> = if space.is_bounded() {
        let lo = if space.lower() > 0.0 {
            space.lower()
        } else {
            space.upper() * 1e-3
        };
        let hi = space.upper();
        (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect()
    } else {
        let lo = if space.lower() > 0.0 {
            space.lower()
        } else {
            p / (100.0 * rho)
        };
        let hi = (100.0 * rho * p).max(lo * 100.0);
        (0..200)
            .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / 199.0).exp())
            .collect()
    };
    let grads: Vec<Vector3<f64>> = grid.iter().map(|&u| model.gradient(u)).collect();
    let mut sign = 0.0;
    for i in 0..grads.len() {
        for j in (i + 1)..grads.len() {
            let (a, b) = (&grads[i], &grads[j]);
            let det = Matrix3::from_columns(&[*a, *b, *c]).determinant();
            let scale = a.norm() * b.norm() * cn;
            if det.abs() <= 1e-12 * scale {
                return false;
            }
            if sign == 0.0 {
                sign = det.signum();
            } else if det.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// Kiefer–Wolfowitz optimal weights for `c` on three support points.
///
/// With `X` the matrix of rows `f(sᵢ)ᵀ`, `v = (XXᵀ)⁻¹Xc` and
/// `wᵢ = |vᵢ| / Σ|vⱼ|`. `X` is square here, so `v` solves `Xᵀv = c`; the
/// parameter columns are equilibrated first, which leaves `v` unchanged.
pub fn optimal_weights_for_c(points: &[f64; 3], c: &Vector3<f64>, model: &ModelSpec) -> Result<[f64; 3]> {
    let x = support_matrix(model, points);
    let scale = Vector3::from_fn(|j, _| {
        let m = x.column(j).amax();
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    });
    let xs = x * Matrix3::from_diagonal(&scale);
    if is_singular(&xs) {
        return Err(Error::SingularSystem);
    }
    let v = xs
        .transpose()
        .full_piv_lu()
        .solve(&c.component_mul(&scale))
        .ok_or(Error::SingularSystem)?;
    let total: f64 = v.iter().map(|vi| vi.abs()).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok([v[0].abs() / total, v[1].abs() / total, v[2].abs() / total])
}

#[derive(Debug, Clone, Copy)]
struct Pinning {
    lower: bool,
    upper: bool,
}

struct Solver<'a> {
    model: &'a ModelSpec,
    space: &'a DesignSpace,
    pin: Pinning,
    pinned_lower: f64,
    pinned_upper: f64,
    lo: f64,
    hi: f64,
}

impl Solver<'_> {
    fn free_indices(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(3);
        if !self.pin.lower {
            v.push(0);
        }
        v.push(1);
        if !self.pin.upper {
            v.push(2);
        }
        v
    }

    fn assemble(&self, free: &[f64]) -> [f64; 3] {
        let mut pts = [self.pinned_lower, 0.0, self.pinned_upper];
        for (k, &i) in self.free_indices().iter().enumerate() {
            pts[i] = free[k].exp();
        }
        pts
    }

    fn feasible(&self, pts: &[f64; 3]) -> bool {
        pts.iter().all(|u| u.is_finite())
            && pts[0] >= self.lo
            && pts[2] <= self.hi
            && pts[0] > 0.0
            && pts[1] > pts[0] * (1.0 + 1e-12)
            && pts[2] > pts[1] * (1.0 + 1e-12)
    }

    /// Scaled stationarity residuals `sᵢ·φ'(sᵢ)` at the free points.
    fn residual(&self, free: &[f64]) -> Option<DVector<f64>> {
        let pts = self.assemble(free);
        if !self.feasible(&pts) {
            return None;
        }
        let alpha = interpolating_coefficients(self.model, &pts).ok()?;
        let idx = self.free_indices();
        Some(DVector::from_iterator(
            idx.len(),
            idx.iter().map(|&i| pts[i] * alpha.dot(&self.model.gradient_du(pts[i]))),
        ))
    }

    fn newton(&self, mut y: Vec<f64>) -> Option<Vec<f64>> {
        let n = y.len();
        let mut r = self.residual(&y)?;
        for _ in 0..MAX_NEWTON_STEPS {
            if r.amax() <= 1e-13 {
                return Some(y);
            }
            let h = 1e-7;
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let (rp, rm) = (self.residual(&yp)?, self.residual(&ym)?);
                jac.set_column(j, &((rp - rm) / (2.0 * h)));
            }
            let step = jac.lu().solve(&(-&r))?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
                if let Some(rc) = self.residual(&cand) {
                    if rc.norm() < r.norm() {
                        y = cand;
                        r = rc;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return if r.amax() <= 1e-9 { Some(y) } else { None };
            }
            if step.amax() * lambda <= 1e-15 {
                return Some(y);
            }
        }
        (r.amax() <= 1e-9).then_some(y)
    }

    fn seed(&self, geometric: [f64; 3]) -> Vec<f64> {
        let lo = self.lo.max(f64::MIN_POSITIVE);
        let inside = |u: f64| u > lo && u < self.hi;
        let mut pts = [self.pinned_lower, geometric[1], self.pinned_upper];
        if !self.pin.lower {
            pts[0] = geometric[0];
        }
        if !self.pin.upper {
            pts[2] = geometric[2];
        }
        if !self.feasible(&pts) || !pts.iter().all(|u| *u >= lo && *u <= self.hi) {
            // spread the free points log-evenly between the available bounds
            let a = if self.pin.lower { self.pinned_lower } else { lo };
            let b = if self.pin.upper {
                self.pinned_upper
            } else if self.hi.is_finite() {
                self.hi
            } else {
                geometric[2].max(a * 100.0)
            };
            let (la, lb) = (a.max(f64::MIN_POSITIVE).ln(), b.ln());
            let frac = |k: f64| (la + (lb - la) * k).exp();
            pts = [
                if self.pin.lower { a } else { frac(0.1) },
                frac(0.5),
                if self.pin.upper { b } else { frac(0.9) },
            ];
            if !self.pin.lower && !inside(pts[0]) {
                pts[0] = frac(0.1);
            }
        }
        self.free_indices().iter().map(|&i| pts[i].ln()).collect()
    }

    fn validate(&self, y: &[f64]) -> Option<ChebyshevSolution> {
        let pts = self.assemble(y);
        if !self.feasible(&pts) {
            return None;
        }
        let alpha = interpolating_coefficients(self.model, &pts).ok()?;
        let sol = ChebyshevSolution {
            points: pts,
            coefficients: [alpha[0], alpha[1], alpha[2]],
            level: 1.0,
        };
        for (i, &u) in pts.iter().enumerate() {
            let interior = u > self.space.lower() && u < self.space.upper();
            if interior && (u * sol.phi_du(self.model, u)).abs() > STATIONARY_TOL {
                return None;
            }
            let target = if i == 1 { -1.0 } else { 1.0 };
            if (sol.phi(self.model, u) - target).abs() > BOUND_TOL {
                return None;
            }
        }
        let p = self.model.peak_location();
        let rho = scaling_factor_d1(self.model.gamma()).rho;
        let grid = evaluation_grid(self.space, p, rho, GRID_POINTS, &pts);
        if grid.iter().any(|&u| sol.phi(self.model, u).abs() > 1.0 + BOUND_TOL) {
            return None;
        }
        Some(sol)
    }
}

/// Chebyshev points and equioscillating coefficients on `space`.
///
/// Newton iteration on the stationarity conditions of the free points, the
/// coefficients being re-solved from `φ(sᵢ) = (−1)^{2−i}` at every step.
/// Endpoints of a bounded space are pinned when their stationarity condition
/// is inactive. Every admissible pinning pattern is tried from the geometric
/// seed `{p/ρ, p, ρp}` and from 20 perturbed restarts; the distinct valid
/// solutions must agree.
pub fn chebyshev_points(model: &ModelSpec, space: &DesignSpace) -> Result<ChebyshevSolution> {
    let p = model.peak_location();
    let rho = scaling_factor_d1(model.gamma()).rho;
    let geometric = [p / rho, p, p * rho];

    let prefer_lower = space.lower() > 0.0 && space.lower() >= geometric[0];
    let prefer_upper = space.is_bounded() && space.upper() <= geometric[2];
    let mut patterns = vec![Pinning {
        lower: prefer_lower,
        upper: prefer_upper,
    }];
    for lower in [false, true] {
        for upper in [false, true] {
            if lower && space.lower() <= 0.0 || upper && !space.is_bounded() {
                continue;
            }
            if lower != prefer_lower || upper != prefer_upper {
                patterns.push(Pinning { lower, upper });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c4eb);
    let mut found: Vec<ChebyshevSolution> = Vec::new();
    for pin in patterns {
        let solver = Solver {
            model,
            space,
            pin,
            pinned_lower: space.lower(),
            pinned_upper: space.upper(),
            lo: space.lower(),
            hi: space.upper(),
        };
        let seed = solver.seed(geometric);
        let mut attempt = 0;
        let sol = loop {
            let start: Vec<f64> = if attempt == 0 {
                seed.clone()
            } else {
                seed.iter().map(|y| y + rng.random_range(-0.5..0.5)).collect()
            };
            if let Some(y) = solver.newton(start) {
                if let Some(s) = solver.validate(&y) {
                    break Some(s);
                }
            }
            attempt += 1;
            if attempt > RESTARTS {
                break None;
            }
        };
        if let Some(sol) = sol {
            let duplicate = found.iter().any(|f| {
                f.points
                    .iter()
                    .zip(sol.points.iter())
                    .all(|(a, b)| (a - b).abs() <= DISTINCT_TOL * a.abs().max(1.0))
            });
            if !duplicate {
                found.push(sol);
            }
            // the preferred pattern succeeding is the common case
            if found.len() == 1 && pin.lower == prefer_lower && pin.upper == prefer_upper {
                break;
            }
        }
    }
    match found.len() {
        0 => Err(Error::NoConvergence(format!(
            "no equioscillating solution on {space} after {RESTARTS} restarts per pinning pattern"
        ))),
        1 => Ok(found[0]),
        _ => Err(Error::NoConvergence(format!(
            "distinct Chebyshev point sets found: {:?}",
            found.iter().map(|s| s.points).collect::<Vec<_>>()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn landete() -> ModelSpec {
        ModelSpec::p1(0.0002865, 0.0002117, 0.0000301).unwrap()
    }

    #[test]
    fn determinant_nonzero_and_rejects_duplicates() {
        let m = ModelSpec::p1(1.0, 0.0, 1.0).unwrap();
        assert!(system_determinant(&m, [1.0, 2.0, 3.0]).unwrap() != 0.0);
        assert!(system_determinant(&m, [1.0, 1.0, 3.0]).is_err());
        assert!(system_determinant(&m, [0.0, 1.0, 3.0]).is_err());
    }

    #[test]
    fn determinant_sign_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [landete(), ModelSpec::p2(2.0, 1.0, 3.0).unwrap()] {
            let p = m.peak_location();
            let mut sign = 0.0;
            for _ in 0..1000 {
                let mut u: [f64; 3] = std::array::from_fn(|_| p * 10f64.powf(rng.random_range(-2.0..2.0)));
                u.sort_by(f64::total_cmp);
                let d = system_determinant(&m, u).unwrap();
                assert!(d != 0.0);
                if sign == 0.0 {
                    sign = d.signum();
                }
                assert_eq!(d.signum(), sign);
            }
        }
    }

    #[test]
    fn weights_survive_bad_parameter_scaling() {
        // u → k·u with θ = (θ₀, θ₁/k, θ₂/k²) only rescales the gradient components
        let c = Vector3::new(0.0, 0.0, 1.0);
        let a = ModelSpec::p1(1.0, 0.5, 2.0).unwrap();
        let pts = [0.2, 0.7, 2.9];
        let wa = optimal_weights_for_c(&pts, &c, &a).unwrap();
        for k in [1e-4, 1e4] {
            let b = ModelSpec::p1(1.0, 0.5 / k, 2.0 / (k * k)).unwrap();
            let wb = optimal_weights_for_c(&pts.map(|u| u * k), &c, &b).unwrap();
            for (x, y) in wa.iter().zip(wb) {
                assert!((x - y).abs() < 1e-12, "k = {k}: {wa:?} vs {wb:?}");
            }
        }
    }

    #[test]
    fn a_star_examples() {
        let m = landete();
        let space = DesignSpace::new(1.0, 14.0).unwrap();
        assert!(in_a_star(&Vector3::new(0.0, 0.0, 1.0), &m, &space));
        assert!(in_a_star(&m.gradient(21.0), &m, &space));
        assert!(in_a_star(&m.gradient(0.5), &m, &space));
        assert!(!in_a_star(&m.gradient(5.0), &m, &space));
        let unb = DesignSpace::unbounded(0.0).unwrap();
        assert!(in_a_star(
            &Vector3::new(0.0, 0.0, 1.0),
            &ModelSpec::p2(1.0, 1.0, 1.0).unwrap(),
            &unb
        ));
    }

    #[test]
    fn unbounded_points_are_geometric() {
        let m = ModelSpec::p1(1.0, 0.0, 1.0).unwrap();
        let sol = chebyshev_points(&m, &DesignSpace::unbounded(0.0).unwrap()).unwrap();
        let rho = 4.611_581_789_308_715;
        let expect = [1.0 / rho, 1.0, rho];
        for (a, b) in sol.points.iter().zip(expect) {
            assert!((a - b).abs() <= 1e-9 * b, "{:?}", sol.points);
        }
        let m = ModelSpec::p2(1.0, 1.0, 1.0).unwrap();
        let sol = chebyshev_points(&m, &DesignSpace::unbounded(0.0).unwrap()).unwrap();
        assert!((sol.points[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn landete_points_on_bounded_space() {
        let m = landete();
        let sol = chebyshev_points(&m, &DesignSpace::new(1.0, 14.0).unwrap()).unwrap();
        assert_eq!(sol.points[0], 1.0);
        assert_eq!(sol.points[2], 14.0);
        assert!((sol.points[1] - 3.3561).abs() < 5e-5, "{:?}", sol.points);
        assert!((sol.phi(&m, 14.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn one_sided_pinning() {
        let m = ModelSpec::p1(1.0, 0.5, 1.0).unwrap();
        let rho = scaling_factor_d1(m.gamma()).rho;
        // lower bound above p/ρ, upper unbounded
        let sol = chebyshev_points(&m, &DesignSpace::unbounded(0.5).unwrap()).unwrap();
        assert!(0.5 > 1.0 / rho);
        assert_eq!(sol.points[0], 0.5);
        // upper bound below ρp
        let sol = chebyshev_points(&m, &DesignSpace::new(0.0, 3.0).unwrap()).unwrap();
        assert_eq!(sol.points[2], 3.0);
        assert!(sol.points[0] > 0.0);
    }

    #[test]
    fn table_weights() {
        let m = landete();
        let sol = chebyshev_points(&m, &DesignSpace::new(1.0, 14.0).unwrap()).unwrap();
        let cases = [
            (Vector3::new(0.0, 0.0, 1.0), [0.1239, 0.2884, 0.5877]),
            (m.gradient(21.0), [0.0582, 0.1535, 0.7883]),
            (sol.coefficient_vector(), [0.3972, 0.3914, 0.2114]),
        ];
        for (c, expect) in cases {
            let w = optimal_weights_for_c(&sol.points, &c, &m).unwrap();
            for (a, b) in w.iter().zip(expect) {
                assert!((a - b).abs() < 1e-4, "{w:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn weights_reject_singular_support() {
        let m = landete();
        assert_eq!(
            optimal_weights_for_c(&[0.0, 2.0, 3.0], &Vector3::new(0.0, 0.0, 1.0), &m),
            Err(Error::SingularSystem)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_invariant_to_scaling_c(k in prop_oneof![-1e6f64..-1e-6, 1e-6f64..1e6], c0 in -1.0f64..1.0, c1 in -1.0f64..1.0) {
            let m = landete();
            let pts = [1.0, 3.3, 14.0];
            let c = Vector3::new(c0, c1, 1.0);
            let a = optimal_weights_for_c(&pts, &c, &m).unwrap();
            let b = optimal_weights_for_c(&pts, &(c * k), &m).unwrap();
            for i in 0..3 { prop_assert!((a[i] - b[i]).abs() <= 1e-12); }
        }
    }
}
