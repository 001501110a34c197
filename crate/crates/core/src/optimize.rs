//! Numerical optimal designs for intervals where the geometric closed form
//! does not fit, and for general c-vectors.
//!
//! Support size is fixed at three. Pinned endpoints stay fixed, the free
//! points are optimised in log-coordinates by Nelder–Mead and then polished
//! coordinate-wise by golden-section search. Weights are never free
//! variables: they follow from the support (equal for D, the optimal-weight
//! formula otherwise), so every candidate is scored with its best weights.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use log::debug;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{interpolating_coefficients, optimal_weights_for_c};
use crate::closed_form::{classify_interval, criterion_scaling, geometric_support, unbounded_design, IntervalForm};
use crate::design::{criterion_value_of, Criterion, Design, DesignSpace, InformationMatrix};
use crate::error::{Error, Result};
use crate::grid::golden_max;
use crate::model::ModelSpec;
use crate::verify::{check_design, OptimalityReport, VerifyConfig};

const RESTARTS: usize = 10;
const RESTART_SEED: u64 = 0x0b71_5eed;
/// Perturbation of restart seeds, as a fraction of the interval length.
const RESTART_SPREAD: f64 = 0.05;
const POLISH_SWEEPS: usize = 60;
const POLISH_HALF_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Resolution of the coarse scan that seeds each free point.
    pub grid_size: usize,
    pub point_tolerance: f64,
    pub weight_tolerance: f64,
    pub max_iterations: u64,
    pub equivalence_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_size: 2001,
            point_tolerance: 1e-9,
            weight_tolerance: 1e-11,
            max_iterations: 10_000,
            equivalence_tolerance: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 101 {
            return Err(Error::Validation(format!("grid_size {} < 101", self.grid_size)));
        }
        let positive = [self.point_tolerance, self.weight_tolerance, self.equivalence_tolerance];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iterations == 0 {
            return Err(Error::Validation(
                "solver tolerances and iteration limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalDesign {
    pub design: Design,
    pub report: OptimalityReport,
    /// Endpoints actually present in the support.
    pub form: IntervalForm,
    /// Criterion value, see [`Criterion::is_maximized`].
    pub value: f64,
}

/// Weights the solver attaches to a three-point support.
///
/// D: equal weights. c-type criteria: the optimal-weight formula for their
/// `c`. E: the optimal-weight formula for the coefficient vector of the
/// combination that alternates ±1 over the support.
pub fn support_weights(points: &[f64; 3], criterion: &Criterion, model: &ModelSpec) -> Result<[f64; 3]> {
    match criterion {
        Criterion::D => Ok([1.0 / 3.0; 3]),
        Criterion::E => {
            let c = interpolating_coefficients(model, points)?;
            optimal_weights_for_c(points, &c, model)
        }
        _ => {
            let c = criterion.c_vector(model).expect("c-type criterion");
            optimal_weights_for_c(points, &c, model)
        }
    }
}

fn matrix_of(points: &[f64; 3], weights: &[f64; 3], model: &ModelSpec) -> InformationMatrix {
    let m = points.iter().zip(weights).fold(Matrix3::zeros(), |acc, (&u, &w)| {
        let f = model.gradient(u);
        acc + f * f.transpose() * w
    });
    InformationMatrix::from_matrix(m)
}

/// Log-scale objective, larger is better; `-∞` for inadmissible supports.
fn score(points: &[f64; 3], criterion: &Criterion, model: &ModelSpec) -> f64 {
    let Ok(w) = support_weights(points, criterion, model) else {
        return f64::NEG_INFINITY;
    };
    let m = matrix_of(points, &w, model);
    let v = match criterion_value_of(&m, criterion, model) {
        Ok(v) if v > 0.0 && v.is_finite() => v,
        _ => return f64::NEG_INFINITY,
    };
    if criterion.is_maximized() {
        v.ln()
    } else {
        -v.ln()
    }
}

#[derive(Debug, Clone, Copy)]
struct Pattern {
    lower: bool,
    upper: bool,
}

impl Pattern {
    fn of(form: IntervalForm) -> Self {
        Pattern {
            lower: form.lower_pinned(),
            upper: form.upper_pinned(),
        }
    }

    fn admissible(self, space: &DesignSpace) -> bool {
        (!self.lower || space.lower() > 0.0) && (!self.upper || space.is_bounded())
    }
}

struct Problem<'a> {
    model: &'a ModelSpec,
    criterion: &'a Criterion,
    space: &'a DesignSpace,
    pattern: Pattern,
}

impl Problem<'_> {
    /// Support from log-coordinates of the free points, or `None` when the
    /// points collide after clamping into the space.
    fn assemble(&self, y: &[f64]) -> Option<[f64; 3]> {
        let (s, t) = (self.space.lower(), self.space.upper());
        let mut free = y.iter().map(|v| v.exp().clamp(s, t));
        let mut pts = [0.0; 3];
        pts[0] = if self.pattern.lower { s } else { free.next()? };
        pts[1] = free.next()?;
        pts[2] = if self.pattern.upper { t } else { free.next()? };
        let tol = self.space.duplicate_tolerance(&pts);
        (pts[0] + tol < pts[1] && pts[1] + tol < pts[2] && pts[0] > 0.0).then_some(pts)
    }

    fn score(&self, y: &[f64]) -> f64 {
        self.assemble(y)
            .map_or(f64::NEG_INFINITY, |p| score(&p, self.criterion, self.model))
    }

    fn free_of(&self, pts: &[f64; 3]) -> Vec<f64> {
        let mut y = Vec::with_capacity(3);
        if !self.pattern.lower {
            y.push(pts[0].ln());
        }
        y.push(pts[1].ln());
        if !self.pattern.upper {
            y.push(pts[2].ln());
        }
        y
    }

    /// Geometric support moved into the space, pinned endpoints set.
    fn seed(&self) -> [f64; 3] {
        let rho = criterion_scaling(self.model, self.criterion).rho;
        let g = geometric_support(self.model, rho);
        let (s, t) = (self.space.lower(), self.space.upper());
        let lo = if self.pattern.lower { s } else { g[0].max(s) };
        let mut hi = if self.pattern.upper { t } else { g[2].min(t) };
        if hi <= lo {
            hi = if self.space.is_bounded() { t } else { lo * rho };
        }
        let mid = if g[1] > lo && g[1] < hi { g[1] } else { (lo * hi).sqrt() };
        [lo, mid, hi]
    }

    /// Coordinate-wise scan over `n` log-spaced candidates between neighbours.
    fn scan(&self, mut y: Vec<f64>, n: usize) -> Vec<f64> {
        for i in 0..y.len() {
            let (lo, hi) = self.bracket(&y, i, 0.5);
            let best = (0..n)
                .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
                .map(|v| {
                    let mut c = y.clone();
                    c[i] = v;
                    (v, self.score(&c))
                })
                .fold((y[i], self.score(&y)), |a, b| if b.1 > a.1 { b } else { a });
            y[i] = best.0;
        }
        y
    }

    /// Log-interval available to free coordinate `i`, at most `width` either side.
    fn bracket(&self, y: &[f64], i: usize, width: f64) -> (f64, f64) {
        let floor = if self.space.lower() > 0.0 {
            self.space.lower().ln()
        } else {
            y[i] - 10.0
        };
        let ceil = if self.space.is_bounded() {
            self.space.upper().ln()
        } else {
            y[i] + 10.0
        };
        let lo = if i > 0 { y[i - 1] } else { floor };
        let hi = if i + 1 < y.len() { y[i + 1] } else { ceil };
        ((y[i] - width).max(lo), (y[i] + width).min(hi))
    }

    fn nelder_mead(&self, y0: Vec<f64>, max_iter: u64) -> Vec<f64> {
        let mut simplex = vec![y0.clone()];
        for i in 0..y0.len() {
            let mut v = y0.clone();
            v[i] += if self
                .score(&{
                    let mut w = y0.clone();
                    w[i] += 0.05;
                    w
                })
                .is_finite()
            {
                0.05
            } else {
                -0.05
            };
            simplex.push(v);
        }
        let solver = match NelderMead::new(simplex).with_sd_tolerance(1e-15) {
            Ok(s) => s,
            Err(_) => return y0,
        };
        match Executor::new(Cost(self), solver)
            .configure(|st| st.max_iters(max_iter))
            .run()
        {
            Ok(res) => res.state().get_best_param().cloned().unwrap_or(y0),
            Err(e) => {
                debug!("simplex search stopped: {e}");
                y0
            }
        }
    }

    fn polish(&self, mut y: Vec<f64>, tol: f64) -> Vec<f64> {
        for _ in 0..POLISH_SWEEPS {
            let mut moved: f64 = 0.0;
            for i in 0..y.len() {
                let (lo, hi) = self.bracket(&y, i, POLISH_HALF_WIDTH);
                let current = self.score(&y);
                let (v, s) = golden_max(
                    |v| {
                        let mut c = y.clone();
                        c[i] = v;
                        self.score(&c)
                    },
                    lo,
                    hi,
                    tol,
                );
                if s > current {
                    moved = moved.max((v - y[i]).abs());
                    y[i] = v;
                }
            }
            if moved < tol {
                break;
            }
        }
        y
    }
}

struct Cost<'a, 'b>(&'a Problem<'b>);

impl CostFunction for Cost<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, y: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let s = self.0.score(y);
        Ok(if s.is_finite() { -s } else { f64::INFINITY })
    }
}

fn form_of(points: &[f64], space: &DesignSpace) -> IntervalForm {
    let lower = points.first() == Some(&space.lower()) && space.lower() > 0.0;
    let upper = points.last() == Some(&space.upper());
    match (lower, upper) {
        (false, false) => IntervalForm::Unconstrained,
        (true, false) => IntervalForm::LowerPinned,
        (false, true) => IntervalForm::UpperPinned,
        (true, true) => IntervalForm::BothPinned,
    }
}

fn finish(
    points: [f64; 3],
    criterion: &Criterion,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &SolverConfig,
) -> Result<OptimalDesign> {
    let w = support_weights(&points, criterion, model)?;
    let design = Design::with_tolerance(points.to_vec(), w.to_vec(), config.weight_tolerance.max(1e-12))?;
    certify(design, criterion, model, space, config)
}

fn certify(
    design: Design,
    criterion: &Criterion,
    model: &ModelSpec,
    space: &DesignSpace,
    config: &SolverConfig,
) -> Result<OptimalDesign> {
    let vcfg = VerifyConfig {
        tolerance: config.equivalence_tolerance,
        ..VerifyConfig::default()
    };
    let report = check_design(&design, criterion, model, space, &vcfg)?;
    let value = crate::design::criterion_value(&design, criterion, model)?;
    Ok(OptimalDesign {
        form: form_of(design.points(), space),
        design,
        report,
        value,
    })
}

/// Locally optimal three-point design for `criterion` on `space`.
///
/// Uses the geometric closed form when the interval admits it, otherwise
/// the numerical search described in the module docs. The result always
/// carries its equivalence-check report; a design that fails the check after
/// all restarts and pinning patterns is reported as [`Error::NoConvergence`].
pub fn optimal_design(
    model: &ModelSpec,
    criterion: &Criterion,
    space: &DesignSpace,
    config: &SolverConfig,
) -> Result<OptimalDesign> {
    config.validate()?;
    criterion.check_against(space)?;
    let form = classify_interval(model, criterion, space);
    if form == IntervalForm::Unconstrained && !matches!(criterion, Criterion::C(_)) {
        let closed = unbounded_design(model, criterion)?;
        if closed.check_in(space).is_ok() {
            let sol = certify(closed, criterion, model, space, config)?;
            if sol.report.passed {
                return Ok(sol);
            }
            debug!("closed form failed certification: {:?}", sol.report);
        }
    }

    let preferred = Pattern::of(form);
    let mut patterns = vec![preferred];
    for (lower, upper) in [(false, false), (true, false), (false, true), (true, true)] {
        let p = Pattern { lower, upper };
        if (p.lower, p.upper) != (preferred.lower, preferred.upper) && p.admissible(space) {
            patterns.push(p);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    let mut best: Option<OptimalDesign> = None;
    for pattern in patterns {
        let problem = Problem {
            model,
            criterion,
            space,
            pattern,
        };
        let base = problem.seed();
        for attempt in 0..=RESTARTS {
            let start = if attempt == 0 {
                base
            } else {
                perturb(&base, space, &mut rng)
            };
            let mut y = problem.free_of(&start);
            if attempt == 0 {
                y = problem.scan(y, config.grid_size);
            }
            let y = problem.nelder_mead(y, config.max_iterations);
            let y = problem.polish(y, config.point_tolerance);
            let Some(points) = problem.assemble(&y) else { continue };
            match finish(points, criterion, model, space, config) {
                Ok(sol) if sol.report.passed => return Ok(sol),
                Ok(sol) => {
                    debug!(
                        "pattern {pattern:?} attempt {attempt}: violation {:e}",
                        sol.report.violation
                    );
                    if best.as_ref().is_none_or(|b| sol.report.violation < b.report.violation) {
                        best = Some(sol);
                    }
                }
                Err(e) => debug!("pattern {pattern:?} attempt {attempt}: {e}"),
            }
        }
    }
    Err(Error::NoConvergence(match best {
        Some(b) => format!(
            "best candidate {:?} violates the equivalence check by {:.3e} at u = {}",
            b.design.points(),
            b.report.violation,
            b.report.argmax_u
        ),
        None => "no admissible three-point support found".into(),
    }))
}

fn perturb(base: &[f64; 3], space: &DesignSpace, rng: &mut ChaCha8Rng) -> [f64; 3] {
    base.map(|u| {
        let delta = if space.is_bounded() {
            RESTART_SPREAD * (space.upper() - space.lower())
        } else {
            RESTART_SPREAD * u
        };
        (u + rng.random_range(-delta..=delta)).max(f64::MIN_POSITIVE)
    })
}

/// Exhaustive search over all three-point supports of a uniform grid.
///
/// Ties in the criterion are broken towards the lexicographically smallest
/// support, so the result does not depend on evaluation order.
pub fn grid_oracle(model: &ModelSpec, criterion: &Criterion, space: &DesignSpace, grid_size: usize) -> Result<Design> {
    if !space.is_bounded() {
        return Err(Error::UnsupportedSpace(format!(
            "grid oracle needs a bounded space, got {space}"
        )));
    }
    if grid_size < 3 {
        return Err(Error::Validation("grid_size must be at least 3".into()));
    }
    criterion.check_against(space)?;
    let (s, t) = (space.lower(), space.upper());
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| s + (t - s) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let pick = |a: (f64, [usize; 3]), b: (f64, [usize; 3])| {
        if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let none = (f64::NEG_INFINITY, [usize::MAX; 3]);
    let best = (0..grid_size)
        .into_par_iter()
        .map(|i| {
            let mut local = none;
            for j in (i + 1)..grid_size {
                for k in (j + 1)..grid_size {
                    let sc = score(&[grid[i], grid[j], grid[k]], criterion, model);
                    local = pick(local, (sc, [i, j, k]));
                }
            }
            local
        })
        .reduce(|| none, pick);
    if best.0 == f64::NEG_INFINITY {
        return Err(Error::NoConvergence("no admissible support on the grid".into()));
    }
    let pts = best.1.map(|i| grid[i]);
    let w = support_weights(&pts, criterion, model)?;
    Design::with_tolerance(pts.to_vec(), w.to_vec(), 1e-10)
}
