//! Approximate designs, information matrices and optimality criteria.

use std::fmt;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Relative eigenvalue threshold below which an eigenvalue counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Tolerance on the total weight of a design built in code.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Design interval `[s, t]`, with `t = +∞` for the unbounded space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpace {
    s: f64,
    t: f64,
}

impl DesignSpace {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::Validation(format!("lower bound {s} must be finite and ≥ 0")));
        }
        if t.is_nan() || t <= s {
            return Err(Error::UnsupportedSpace(format!("need s < t, got [{s}, {t}]")));
        }
        Ok(DesignSpace { s, t })
    }

    /// `[s, ∞)`.
    pub fn unbounded(s: f64) -> Result<Self> {
        Self::new(s, f64::INFINITY)
    }

    pub fn lower(&self) -> f64 {
        self.s
    }

    pub fn upper(&self) -> f64 {
        self.t
    }

    pub fn is_bounded(&self) -> bool {
        self.t.is_finite()
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.s && u <= self.t
    }

    /// Minimum separation between distinct support points.
    pub fn duplicate_tolerance(&self, points: &[f64]) -> f64 {
        let span = if self.is_bounded() {
            self.t - self.s
        } else {
            points.iter().cloned().fold(self.s, f64::max).max(1.0)
        };
        1e-9 * span
    }
}

impl fmt::Display for DesignSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_bounded() {
            write!(f, "[{}, {}]", self.s, self.t)
        } else {
            write!(f, "[{}, inf)", self.s)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Bound {
    Num(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    s: f64,
    t: Bound,
}

impl Serialize for DesignSpace {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let t = if self.is_bounded() {
            Bound::Num(self.t)
        } else {
            Bound::Text("inf".into())
        };
        RawSpace { s: self.s, t }.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for DesignSpace {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSpace::deserialize(de)?;
        let t = match raw.t {
            Bound::Num(v) => v,
            Bound::Text(s) if s.eq_ignore_ascii_case("inf") => f64::INFINITY,
            Bound::Text(s) => return Err(serde::de::Error::custom(format!("invalid upper bound {s:?}"))),
        };
        DesignSpace::new(raw.s, t).map_err(serde::de::Error::custom)
    }
}

/// A finitely supported probability measure on the design space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Design {
    /// Validates strictly increasing points and positive weights summing to one.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(points, weights, WEIGHT_SUM_TOL)
    }

    /// Like [`Design::new`] with a looser weight-sum tolerance; weights are
    /// renormalised afterwards.
    pub fn with_tolerance(points: Vec<f64>, mut weights: Vec<f64>, sum_tol: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("design has no support points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Validation(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(Error::Validation("support points must be finite and ≥ 0".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("support points must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Validation("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > sum_tol {
            return Err(Error::Validation(format!("weights sum to {total}, not 1")));
        }
        if total != 1.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Design { points, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Self::with_tolerance(points, weights, 1e-9)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every support point lies in `space` and no two are
    /// closer than the space's duplicate tolerance.
    pub fn check_in(&self, space: &DesignSpace) -> Result<()> {
        if let Some(u) = self.points.iter().find(|u| !space.contains(**u)) {
            return Err(Error::Validation(format!("support point {u} outside {space}")));
        }
        let tol = space.duplicate_tolerance(&self.points);
        if self.points.windows(2).any(|w| w[1] - w[0] < tol) {
            return Err(Error::Validation(
                "support points closer than duplicate tolerance".into(),
            ));
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Design {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            points: Vec<f64>,
            weights: Vec<f64>,
        }
        let raw = Raw::deserialize(de)?;
        Design::with_tolerance(raw.points, raw.weights, 1e-9).map_err(serde::de::Error::custom)
    }
}

/// Symmetric positive semidefinite 3×3 Fisher information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationMatrix(Matrix3<f64>);

impl InformationMatrix {
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        InformationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Eigen-decomposition with eigenvalues sorted ascending.
    pub fn eigen(&self) -> (Vector3<f64>, Matrix3<f64>) {
        let eig = SymmetricEigen::new(self.0);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = Vector3::new(
            eig.eigenvalues[idx[0]],
            eig.eigenvalues[idx[1]],
            eig.eigenvalues[idx[2]],
        );
        let vectors = Matrix3::from_columns(&[
            eig.eigenvectors.column(idx[0]).into_owned(),
            eig.eigenvectors.column(idx[1]).into_owned(),
            eig.eigenvectors.column(idx[2]).into_owned(),
        ]);
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    /// `diag(Mᵢᵢ^(-1/2))` and the eigen-decomposition of `D·M·D`. Rank decisions
    /// are made on this equilibrated matrix so they do not depend on the
    /// scale of the individual parameters.
    fn equilibrated(&self) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>, f64) {
        let d = Vector3::from_fn(|i, _| {
            let m = self.0[(i, i)];
            if m > 0.0 {
                1.0 / m.sqrt()
            } else {
                1.0
            }
        });
        let scaled = InformationMatrix(Matrix3::from_diagonal(&d) * self.0 * Matrix3::from_diagonal(&d));
        let (values, vectors) = scaled.eigen();
        let tol = if values[2] > 0.0 {
            RANK_TOL * values[2]
        } else {
            f64::INFINITY
        };
        (d, values, vectors, tol)
    }

    pub fn rank(&self) -> usize {
        let (_, values, _, tol) = self.equilibrated();
        values.iter().filter(|v| **v > tol).count()
    }

    pub fn is_nonsingular(&self) -> bool {
        self.rank() == 3
    }

    /// Generalized inverse `D·(D·M·D)⁺·D`; the ordinary inverse when `M` is
    /// nonsingular.
    pub fn generalized_inverse(&self) -> Matrix3<f64> {
        let (d, values, vectors, tol) = self.equilibrated();
        let mut inner = Matrix3::zeros();
        for i in 0..3 {
            if values[i] > tol {
                let v = vectors.column(i);
                inner += v * v.transpose() / values[i];
            }
        }
        let d = Matrix3::from_diagonal(&d);
        d * inner * d
    }

    /// Orthonormal basis of the null space.
    pub fn null_space(&self) -> Vec<Vector3<f64>> {
        let (d, values, vectors, tol) = self.equilibrated();
        let mut basis: Vec<Vector3<f64>> = Vec::new();
        for i in (0..3).filter(|&i| values[i] <= tol) {
            let mut z = vectors.column(i).component_mul(&d);
            for b in &basis {
                z -= b * b.dot(&z);
            }
            basis.push(z.normalize());
        }
        basis
    }

    /// Whether `c` lies in the column space.
    pub fn in_range(&self, c: &Vector3<f64>) -> bool {
        let (d, values, vectors, tol) = self.equilibrated();
        let y = c.component_mul(&d);
        let norm = y.norm();
        if norm == 0.0 {
            return true;
        }
        let mut proj = Vector3::zeros();
        for i in (0..3).filter(|&i| values[i] > tol) {
            let v = vectors.column(i);
            proj += v * v.dot(&y);
        }
        (y - proj).norm() <= 1e-8 * norm
    }
}

/// Optimality criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    /// Maximise `det M`.
    D,
    /// Maximise `λ_min(M)`.
    E,
    /// Minimise the variance of the estimate of `θ₂`.
    D1,
    /// Minimise `cᵀM⁻c`.
    C([f64; 3]),
    /// Minimise the variance of the predicted response at `x_e`.
    Extrapolation(f64),
}

impl Criterion {
    /// True when larger criterion values are better.
    pub fn is_maximized(&self) -> bool {
        matches!(self, Criterion::D | Criterion::E | Criterion::D1)
    }

    /// The `c` vector of c-type criteria (D1, C, Extrapolation).
    pub fn c_vector(&self, model: &ModelSpec) -> Option<Vector3<f64>> {
        match *self {
            Criterion::D1 => Some(Vector3::new(0.0, 0.0, 1.0)),
            Criterion::C(c) => Some(Vector3::from(c)),
            Criterion::Extrapolation(xe) => Some(model.gradient(xe)),
            Criterion::D | Criterion::E => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::D => "D",
            Criterion::E => "E",
            Criterion::D1 => "D1",
            Criterion::C(_) => "c",
            Criterion::Extrapolation(_) => "ce",
        }
    }

    /// Checks criterion-specific preconditions against a design space.
    pub fn check_against(&self, space: &DesignSpace) -> Result<()> {
        match *self {
            Criterion::Extrapolation(xe) => {
                if !xe.is_finite() || xe <= 0.0 {
                    return Err(Error::Validation(format!("x_e = {xe} must be positive")));
                }
                // on [s, ∞) the admissible x_e depend on the model; see `unbounded_design`
                if space.is_bounded() && space.contains(xe) {
                    return Err(Error::Validation(format!(
                        "x_e = {xe} lies inside {space}; extrapolation needs x_e outside the design space"
                    )));
                }
                Ok(())
            }
            Criterion::C(c) => {
                if c.iter().all(|v| *v == 0.0) || c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("c must be a finite nonzero vector".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::C(c) => write!(f, "c({}, {}, {})", c[0], c[1], c[2]),
            Criterion::Extrapolation(xe) => write!(f, "ce(x_e = {xe})"),
            other => f.write_str(other.name()),
        }
    }
}

/// `M(ξ, θ) = Σ wᵢ f(uᵢ) f(uᵢ)ᵀ`.
pub fn information_matrix(design: &Design, model: &ModelSpec) -> InformationMatrix {
    let m = design
        .points()
        .iter()
        .zip(design.weights())
        .fold(Matrix3::zeros(), |acc, (&u, &w)| {
            let f = model.gradient(u);
            acc + f * f.transpose() * w
        });
    InformationMatrix(m)
}

/// Whether `c` lies in the column space of `m`.
pub fn estimable(c: &Vector3<f64>, m: &InformationMatrix) -> bool {
    m.in_range(c)
}

/// `cᵀM⁻c`, independent of the choice of generalized inverse for estimable `c`.
pub fn generalized_c_form(c: &Vector3<f64>, m: &InformationMatrix) -> Result<f64> {
    if !estimable(c, m) {
        return Err(Error::NotEstimable);
    }
    Ok(c.dot(&(m.generalized_inverse() * c)))
}

/// Criterion value of a design. See [`Criterion::is_maximized`] for direction.
pub fn criterion_value(design: &Design, criterion: &Criterion, model: &ModelSpec) -> Result<f64> {
    let m = information_matrix(design, model);
    criterion_value_of(&m, criterion, model)
}

pub(crate) fn criterion_value_of(m: &InformationMatrix, criterion: &Criterion, model: &ModelSpec) -> Result<f64> {
    match criterion {
        Criterion::D => {
            if m.rank() < 3 {
                Ok(0.0)
            } else {
                Ok(m.determinant())
            }
        }
        Criterion::E => Ok(m.min_eigenvalue().max(0.0)),
        Criterion::D1 => {
            let c = Vector3::new(0.0, 0.0, 1.0);
            if !estimable(&c, m) {
                return Err(Error::NotEstimable);
            }
            let mm = m.matrix();
            let reduced = Matrix2::new(mm[(0, 0)], mm[(0, 1)], mm[(1, 0)], mm[(1, 1)]);
            let reduced_det = reduced.determinant();
            let scale = mm[(0, 0)].abs() * mm[(1, 1)].abs();
            if reduced_det.abs() <= RANK_TOL * scale || scale == 0.0 {
                return Err(Error::SingularMatrix("leading 2×2 block".into()));
            }
            if m.rank() < 3 {
                // |M| vanishes but θ₂ is still estimable
                return Ok(1.0 / generalized_c_form(&c, m)?);
            }
            Ok(m.determinant() / reduced_det)
        }
        Criterion::C(_) | Criterion::Extrapolation(_) => {
            let c = criterion.c_vector(model).expect("c-type criterion");
            generalized_c_form(&c, m)
        }
    }
}

/// How the D-criterion is turned into an efficiency ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DEfficiency {
    /// `det M(ξ) / det M(ξ*)`.
    Ratio,
    /// `(det M(ξ) / det M(ξ*))^{1/3}`, the per-parameter convention.
    CubeRoot,
    /// `(det M(ξ) / det M(ξ*))^{1/2}`. Reproduces the landete efficiency table.
    #[default]
    SquareRoot,
}

impl std::str::FromStr for DEfficiency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(DEfficiency::Ratio),
            "cube-root" => Ok(DEfficiency::CubeRoot),
            "square-root" => Ok(DEfficiency::SquareRoot),
            other => Err(Error::Validation(format!(
                "unknown D-efficiency convention {other:?} (ratio, cube-root, square-root)"
            ))),
        }
    }
}

/// Efficiency of `design` relative to `reference` in percent, using the
/// default D convention.
pub fn efficiency(design: &Design, criterion: &Criterion, reference: &Design, model: &ModelSpec) -> Result<f64> {
    efficiency_with(design, criterion, reference, model, DEfficiency::default())
}

pub fn efficiency_with(
    design: &Design,
    criterion: &Criterion,
    reference: &Design,
    model: &ModelSpec,
    convention: DEfficiency,
) -> Result<f64> {
    let value = criterion_value(design, criterion, model)?;
    let best = criterion_value(reference, criterion, model)?;
    let ratio = if criterion.is_maximized() {
        value / best
    } else {
        best / value
    };
    let ratio = match (criterion, convention) {
        (Criterion::D, DEfficiency::Ratio) => ratio,
        (Criterion::D, DEfficiency::CubeRoot) => ratio.max(0.0).cbrt(),
        (Criterion::D, DEfficiency::SquareRoot) => ratio.max(0.0).sqrt(),
        _ => ratio,
    };
    Ok(100.0 * ratio)
}

/// Rounds design weights to integer run counts summing to `n`.
///
/// Efficient rounding: start from `⌈(n − r/2)·wᵢ⌉`, then add runs where
/// `nᵢ/wᵢ` is smallest or remove them where `(nᵢ−1)/wᵢ` is largest until the
/// total is `n`. A final pass moves single runs between entries so that every
/// count stays within one of `n·wᵢ` whenever that is compatible with `nᵢ ≥ 1`.
pub fn apportion(design: &Design, n: usize) -> Result<Vec<usize>> {
    let r = design.len();
    if n < r {
        return Err(Error::InfeasibleApportionment { n, support: r });
    }
    let w = design.weights();
    let nf = n as f64;
    let mut counts: Vec<usize> = w
        .iter()
        .map(|wi| ((nf - r as f64 / 2.0) * wi).ceil().max(1.0) as usize)
        .collect();
    let mut total: usize = counts.iter().sum();
    while total < n {
        let j = argmin_by(r, |i| counts[i] as f64 / w[i]);
        counts[j] += 1;
        total += 1;
    }
    while total > n {
        let k = argmax_by(r, |i| {
            if counts[i] > 1 {
                (counts[i] - 1) as f64 / w[i]
            } else {
                f64::NEG_INFINITY
            }
        });
        counts[k] -= 1;
        total -= 1;
    }

    let lower: Vec<usize> = w.iter().map(|wi| ((nf * wi).floor() as usize).max(1)).collect();
    let upper: Vec<usize> = w.iter().map(|wi| (nf * wi).ceil() as usize).collect();
    let feasible = lower.iter().sum::<usize>() <= n && lower.iter().zip(&upper).all(|(lo, hi)| lo <= hi);
    if feasible {
        for _ in 0..(2 * n) {
            if let Some(i) = (0..r).find(|&i| counts[i] > upper[i]) {
                let j = argmin_by(r, |j| {
                    if counts[j] < upper[j] {
                        counts[j] as f64 / w[j]
                    } else {
                        f64::INFINITY
                    }
                });
                counts[i] -= 1;
                counts[j] += 1;
            } else if let Some(i) = (0..r).find(|&i| counts[i] < lower[i]) {
                let j = argmax_by(r, |j| {
                    if counts[j] > lower[j] {
                        (counts[j] - 1) as f64 / w[j]
                    } else {
                        f64::NEG_INFINITY
                    }
                });
                counts[i] += 1;
                counts[j] -= 1;
            } else {
                break;
            }
        }
    }
    Ok(counts)
}

fn argmin_by(n: usize, key: impl Fn(usize) -> f64) -> usize {
    (0..n).min_by(|&a, &b| key(a).total_cmp(&key(b))).expect("non-empty")
}

fn argmax_by(n: usize, key: impl Fn(usize) -> f64) -> usize {
    // first index among ties
    (0..n)
        .rev()
        .max_by(|&a, &b| key(a).total_cmp(&key(b)))
        .expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn landete() -> ModelSpec {
        ModelSpec::p1(0.0002865, 0.0002117, 0.0000301).unwrap()
    }

    #[test]
    fn design_validation() {
        assert!(Design::new(vec![1.0, 2.0], vec![0.5, 0.5]).is_ok());
        assert!(Design::new(vec![2.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(Design::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(Design::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_err());
        assert!(Design::new(vec![1.0], vec![1.0, 0.0]).is_err());
        let space = DesignSpace::new(1.0, 14.0).unwrap();
        assert!(Design::new(vec![0.5, 2.0], vec![0.5, 0.5])
            .unwrap()
            .check_in(&space)
            .is_err());
        assert!(Design::new(vec![2.0, 2.0 + 1e-12], vec![0.5, 0.5])
            .unwrap()
            .check_in(&space)
            .is_err());
        assert!(DesignSpace::new(2.0, 1.0).is_err());
        assert!(DesignSpace::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn space_serde() {
        let s: DesignSpace = serde_json::from_str(r#"{"s":0,"t":"inf"}"#).unwrap();
        assert!(!s.is_bounded());
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"s":0.0,"t":"inf"}"#);
        let s: DesignSpace = serde_json::from_str(r#"{"s":1,"t":14}"#).unwrap();
        assert_eq!(s.upper(), 14.0);
        assert!(serde_json::from_str::<DesignSpace>(r#"{"s":3,"t":1}"#).is_err());
    }

    #[test]
    fn information_matrix_examples() {
        let m = ModelSpec::p1(1.0, 0.0, 1.0).unwrap();
        let one = Design::new(vec![1.0], vec![1.0]).unwrap();
        let im = information_matrix(&one, &m);
        assert!(im.matrix().iter().all(|v| (v - 0.0625).abs() < 1e-15));
        let zero = Design::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(*information_matrix(&zero, &m).matrix(), Matrix3::zeros());
    }

    #[test]
    fn two_point_design_has_zero_determinant() {
        let m = landete();
        let d = Design::new(vec![2.0, 9.0], vec![0.3, 0.7]).unwrap();
        assert_eq!(criterion_value(&d, &Criterion::D, &m).unwrap(), 0.0);
        let d = Design::new(vec![0.0, 2.0, 9.0], vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(criterion_value(&d, &Criterion::D, &m).unwrap(), 0.0);
    }

    #[test]
    fn d1_matches_inverse_c_form() {
        for model in [landete(), ModelSpec::p2(2.0, 1.5, 0.9).unwrap()] {
            let p = model.peak_location();
            let d = Design::new(vec![0.3 * p, 1.2 * p, 5.0 * p], vec![0.2, 0.35, 0.45]).unwrap();
            let d1 = criterion_value(&d, &Criterion::D1, &model).unwrap();
            let im = information_matrix(&d, &model);
            let c = Vector3::new(0.0, 0.0, 1.0);
            let inv = 1.0 / generalized_c_form(&c, &im).unwrap();
            assert!((d1 - inv).abs() <= 1e-10 * inv.abs(), "{d1} vs {inv}");
        }
    }

    #[test]
    fn estimability_examples() {
        let c = Vector3::new(0.0, 0.0, 1.0);
        assert!(!estimable(&c, &InformationMatrix::from_matrix(Matrix3::zeros())));
        let model = landete();
        let one = Design::new(vec![4.0], vec![1.0]).unwrap();
        let im = information_matrix(&one, &model);
        assert!(estimable(&model.gradient(4.0), &im));
        assert!(!estimable(&c, &im));
        let three = Design::uniform(vec![1.0, 4.0, 12.0]).unwrap();
        assert!(estimable(&c, &information_matrix(&three, &model)));
    }

    #[test]
    fn generalized_c_form_examples() {
        let id = InformationMatrix::from_matrix(Matrix3::identity());
        assert_eq!(generalized_c_form(&Vector3::new(0.0, 0.0, 1.0), &id).unwrap(), 1.0);
        let diag = InformationMatrix::from_matrix(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)));
        assert!((generalized_c_form(&Vector3::new(1.0, 0.0, 0.0), &diag).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            generalized_c_form(&Vector3::new(0.0, 0.0, 1.0), &diag),
            Err(Error::NotEstimable)
        );
    }

    #[test]
    fn generalized_c_form_is_ridge_limit() {
        // rank-2 matrix: two-point design, c a combination of the two gradients
        let model = ModelSpec::p1(1.0, 0.5, 2.0).unwrap();
        let d = Design::new(vec![0.4, 2.5], vec![0.4, 0.6]).unwrap();
        let im = information_matrix(&d, &model);
        assert_eq!(im.rank(), 2);
        let c = model.gradient(0.4) * 0.7 - model.gradient(2.5) * 1.3;
        let exact = generalized_c_form(&c, &im).unwrap();
        let lmax = im.eigen().0[2];
        for eps in [1e-8, 1e-10] {
            let ridge = im.matrix() + Matrix3::identity() * (eps * lmax);
            let v = c.dot(&(ridge.try_inverse().unwrap() * c));
            assert!((v - exact).abs() <= 1e-6 * exact, "eps {eps}: {v} vs {exact}");
        }
    }

    #[test]
    fn rank_ignores_parameter_scale() {
        // raw eigenvalues span about 13 decades for this three-point design
        let model = ModelSpec::p2(0.0120715, 0.3019613, 271.2030575).unwrap();
        let d = Design::uniform(vec![0.0106331, 0.0333679, 0.1047119]).unwrap();
        let im = information_matrix(&d, &model);
        let (values, _) = im.eigen();
        assert!(values[0] < 1e-10 * values[2]);
        assert_eq!(im.rank(), 3);
        let g = im.generalized_inverse();
        let resid = (im.matrix() * g - Matrix3::identity()).amax();
        assert!(resid < 1e-5, "{resid}");
    }

    proptest! {
        #[test]
        fn rank_invariant_under_diagonal_scaling(
            k in prop::array::uniform3(-6.0f64..6.0),
            two_points in any::<bool>(),
        ) {
            let model = ModelSpec::p1(1.0, 0.5, 2.0).unwrap();
            let pts = if two_points { vec![0.5, 3.0] } else { vec![0.3, 0.7, 3.0] };
            let im = information_matrix(&Design::uniform(pts).unwrap(), &model);
            let s = Matrix3::from_diagonal(&Vector3::new(10f64.powf(k[0]), 10f64.powf(k[1]), 10f64.powf(k[2])));
            let scaled = InformationMatrix::from_matrix(s * im.matrix() * s);
            prop_assert_eq!(scaled.rank(), im.rank());
            prop_assert_eq!(im.rank(), if two_points { 2 } else { 3 });
        }
    }

    #[test]
    fn efficiency_of_reference_is_100() {
        let model = landete();
        let d = Design::uniform(vec![1.0, 3.4, 14.0]).unwrap();
        for crit in [
            Criterion::D,
            Criterion::E,
            Criterion::D1,
            Criterion::Extrapolation(21.0),
        ] {
            let e = efficiency(&d, &crit, &d, &model).unwrap();
            assert!((e - 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn d_efficiency_conventions() {
        let model = landete();
        let opt = Design::uniform(vec![1.0, 3.4089, 14.0]).unwrap();
        let u = Design::uniform(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 10.0, 14.0]).unwrap();
        let ratio = efficiency_with(&u, &Criterion::D, &opt, &model, DEfficiency::Ratio).unwrap();
        let cube = efficiency_with(&u, &Criterion::D, &opt, &model, DEfficiency::CubeRoot).unwrap();
        let sq = efficiency(&u, &Criterion::D, &opt, &model).unwrap();
        assert!((cube / 100.0 - (ratio / 100.0).cbrt()).abs() < 1e-12);
        assert!((sq / 100.0 - (ratio / 100.0).sqrt()).abs() < 1e-12);
        assert!((sq - 69.92).abs() < 0.05, "{sq}");
    }

    #[test]
    fn apportion_examples() {
        let third = Design::uniform(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(apportion(&third, 9).unwrap(), vec![3, 3, 3]);
        let ten = apportion(&third, 10).unwrap();
        assert_eq!(ten.iter().sum::<usize>(), 10);
        assert!(ten.iter().all(|c| *c == 3 || *c == 4));
        assert_eq!(
            apportion(&third, 2),
            Err(Error::InfeasibleApportionment { n: 2, support: 3 })
        );
        let d1 = Design::new(vec![1.0, 3.3561, 14.0], vec![0.1239, 0.2884, 0.5877]).unwrap();
        let counts = apportion(&d1, 100).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 100);
        for (c, w) in counts.iter().zip(d1.weights()) {
            assert!((*c as f64 - 100.0 * w).abs() <= 1.0);
        }
    }

    fn arb_weights() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, 1..8).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn apportion_sums_and_respects_quota(w in arb_weights(), extra in 0usize..400) {
            let r = w.len();
            let points: Vec<f64> = (1..=r).map(|i| i as f64).collect();
            let d = Design::with_tolerance(points, w.clone(), 1e-9).unwrap();
            let n = r + extra;
            let counts = apportion(&d, n).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            prop_assert!(counts.iter().all(|c| *c >= 1));
            let nf = n as f64;
            let lower: usize = d.weights().iter().map(|wi| ((nf * wi).floor() as usize).max(1)).sum();
            if lower <= n {
                for (c, wi) in counts.iter().zip(d.weights()) {
                    prop_assert!((*c as f64 - nf * wi).abs() <= 1.0 + 1e-9, "{:?} {:?}", counts, d.weights());
                }
            }
        }

        #[test]
        fn information_matrix_is_linear_in_weights(a in 0.0f64..1.0, w1 in 0.05f64..0.9, w2 in 0.05f64..0.9) {
            let model = landete();
            let d1 = Design::new(vec![1.0, 4.0, 9.0], vec![w1 * 0.5, 1.0 - w1 * 0.5 - 0.05, 0.05]).unwrap();
            let d2 = Design::new(vec![2.0, 5.0], vec![w2, 1.0 - w2]).unwrap();
            // mixture: union of supports
            let mix = Design::with_tolerance(
                vec![1.0, 2.0, 4.0, 5.0, 9.0],
                vec![a * d1.weights()[0], (1.0 - a) * w2, a * d1.weights()[1], (1.0 - a) * (1.0 - w2), a * 0.05],
                1e-9,
            );
            prop_assume!(mix.is_ok());
            let mix = mix.unwrap();
            let lhs = information_matrix(&mix, &model).matrix().clone_owned();
            let rhs = information_matrix(&d1, &model).matrix() * a
                + information_matrix(&d2, &model).matrix() * (1.0 - a);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm());
        }

        #[test]
        fn generalized_c_form_inverse_invariance(u0 in 0.2f64..1.0, u1 in 1.5f64..4.0, u2 in 5.0f64..20.0, w0 in 0.1f64..0.45, w1 in 0.1f64..0.45) {
            let model = ModelSpec::p1(1.0, 0.3, 0.5).unwrap();
            let d = Design::new(vec![u0, u1, u2], vec![w0, w1, 1.0 - w0 - w1]).unwrap();
            let im = information_matrix(&d, &model);
            let c = Vector3::new(0.3, -1.0, 2.0);
            let pinv = generalized_c_form(&c, &im).unwrap();
            let direct = c.dot(&(im.matrix().try_inverse().unwrap() * c));
            prop_assert!((pinv - direct).abs() <= 1e-9 * direct.abs());
        }
    }
}
