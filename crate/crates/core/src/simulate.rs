//! Monte Carlo check of the asymptotic covariance `(σ²/N)·M⁻¹`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{apportion, information_matrix, Design};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};

/// Largest share of failed fits tolerated before the run is rejected.
const MAX_FAILED_SHARE: f64 = 0.05;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sigma: f64,
    pub n_runs: usize,
    pub replicates: usize,
    pub seed: u64,
    pub max_fit_iterations: usize,
}

impl SimConfig {
    pub fn new(sigma: f64, n_runs: usize, replicates: usize, seed: u64) -> Self {
        SimConfig {
            sigma,
            n_runs,
            replicates,
            seed,
            max_fit_iterations: 100,
        }
    }

    fn validate(&self, support: usize) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Validation(format!("sigma = {} must be ≥ 0", self.sigma)));
        }
        if self.replicates == 0 {
            return Err(Error::Validation("need at least one replicate".into()));
        }
        if self.n_runs < support {
            return Err(Error::InfeasibleApportionment {
                n: self.n_runs,
                support,
            });
        }
        if self.max_fit_iterations == 0 {
            return Err(Error::Validation("max_fit_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub empirical_covariance: Matrix3<f64>,
    pub predicted_covariance: Matrix3<f64>,
    /// `|emp_ii − pred_ii| / pred_ii`; the absolute difference when `pred_ii = 0`.
    pub relative_diagonal_error: Vector3<f64>,
    pub failed_fits: usize,
    pub replicates: usize,
    /// Runs allotted to each support point.
    pub counts: Vec<usize>,
    pub mean_estimate: Vector3<f64>,
    /// Per-replicate estimates, `None` for failed fits.
    #[serde(skip)]
    pub estimates: Vec<Option<[f64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub theta: [f64; 3],
    pub iterations: usize,
}

/// Least-squares (Gaussian maximum-likelihood) fit by Gauss–Newton with step
/// halving, started at `seed_theta`.
///
/// Converges when `‖Jᵀr‖ ≤ 1e-10·‖J‖·‖y‖` or the relative step falls to
/// `1e-12`.
pub fn fit_mle(
    observations: &[(f64, f64)],
    kind: ModelKind,
    seed_theta: [f64; 3],
    max_iterations: usize,
) -> Result<Fit> {
    // replicated design points only enter through their means
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64, f64)> = Vec::new(); // (u, count, sum y)
    for (u, y) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == u => {
                g.1 += 1.0;
                g.2 += y;
            }
            _ => groups.push((u, 1.0, y)),
        }
    }
    let distinct = groups.iter().filter(|g| g.0 > 0.0).count();
    if distinct < 3 {
        return Err(Error::InsufficientDesign { distinct });
    }
    let y_scale = observations.iter().map(|o| o.1 * o.1).sum::<f64>().sqrt();

    let sse = |theta: &[f64; 3]| -> f64 {
        let m = ModelSpec::unchecked(kind, *theta);
        let mut total = 0.0;
        for &(u, n, sum) in &groups {
            let e = sum / n - m.eta(u);
            total += n * e * e;
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    };

    let mut theta = seed_theta;
    let mut current = sse(&theta);
    for it in 0..max_iterations {
        let m = ModelSpec::unchecked(kind, theta);
        let rows = groups.len();
        let mut j = DMatrix::<f64>::zeros(rows, 3);
        let mut r = DVector::<f64>::zeros(rows);
        for (i, &(u, n, sum)) in groups.iter().enumerate() {
            let w = n.sqrt();
            let f = m.gradient(u);
            for k in 0..3 {
                j[(i, k)] = w * f[k];
            }
            r[i] = w * (sum / n - m.eta(u));
        }
        let grad = j.transpose() * &r;
        if grad.norm() <= 1e-10 * j.norm() * y_scale.max(f64::MIN_POSITIVE) {
            return Ok(Fit { theta, iterations: it });
        }
        let step = j
            .svd(true, true)
            .solve(&r, 1e-14)
            .map_err(|e| Error::SingularMatrix(format!("Gauss–Newton system: {e}")))?;
        let theta_norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = [
                theta[0] + lambda * step[0],
                theta[1] + lambda * step[1],
                theta[2] + lambda * step[2],
            ];
            let value = sse(&cand);
            if value <= current {
                accepted = Some((cand, value));
                break;
            }
            lambda *= 0.5;
        }
        let Some((cand, value)) = accepted else {
            // no descent left at machine precision
            return Ok(Fit { theta, iterations: it });
        };
        let moved = lambda * step.norm();
        theta = cand;
        current = value;
        if moved <= 1e-12 * theta_norm {
            return Ok(Fit {
                theta,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iterations,
    })
}

/// Simulates `replicates` experiments under `design` apportioned to `n_runs`
/// observations and compares the spread of the fitted parameters with the
/// asymptotic prediction.
///
/// Replicate `r` draws its noise from ChaCha8 stream `r` keyed by the seed,
/// so results do not depend on the number of worker threads.
pub fn run_simulation(design: &Design, model: &ModelSpec, config: &SimConfig) -> Result<SimReport> {
    config.validate(design.len())?;
    let m = information_matrix(design, model);
    if !m.is_nonsingular() {
        return Err(Error::SingularMatrix(format!(
            "information matrix has rank {}",
            m.rank()
        )));
    }
    let inv = m
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("information matrix".into()))?;
    let n = config.n_runs as f64;
    let predicted = inv * (config.sigma * config.sigma / n);

    let counts = apportion(design, config.n_runs)?;
    let means: Vec<(f64, f64)> = design.points().iter().map(|&u| (u, model.eta(u))).collect();
    let truth = model.theta();

    let estimates: Vec<Option<[f64; 3]>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(rep as u64);
            let mut obs = Vec::with_capacity(config.n_runs);
            for (&(u, eta), &count) in means.iter().zip(&counts) {
                for _ in 0..count {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    obs.push((u, eta + config.sigma * z));
                }
            }
            fit_mle(&obs, model.kind(), truth, config.max_fit_iterations)
                .ok()
                .map(|f| f.theta)
        })
        .collect();

    let failed = estimates.iter().filter(|e| e.is_none()).count();
    if failed as f64 > MAX_FAILED_SHARE * config.replicates as f64 {
        return Err(Error::TooManyFailedFits {
            failed,
            replicates: config.replicates,
        });
    }
    let good: Vec<Vector3<f64>> = estimates.iter().flatten().map(|t| Vector3::from(*t)).collect();
    let k = good.len() as f64;
    let mean = good.iter().fold(Vector3::zeros(), |a, t| a + t) / k.max(1.0);
    let empirical = if good.len() > 1 {
        good.iter().fold(Matrix3::zeros(), |a, t| {
            let d = t - mean;
            a + d * d.transpose()
        }) / (k - 1.0)
    } else {
        Matrix3::zeros()
    };
    let relative = Vector3::from_fn(|i, _| {
        let (e, p) = (empirical[(i, i)], predicted[(i, i)]);
        if p > 0.0 {
            (e - p).abs() / p
        } else {
            e.abs()
        }
    });
    Ok(SimReport {
        empirical_covariance: empirical,
        predicted_covariance: predicted,
        relative_diagonal_error: relative,
        failed_fits: failed,
        replicates: config.replicates,
        counts,
        mean_estimate: mean,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landete() -> ModelSpec {
        ModelSpec::p1(0.0002865, 0.0002117, 0.0000301).unwrap()
    }

    fn d_design() -> Design {
        Design::uniform(vec![1.0, 3.40901, 14.0]).unwrap()
    }

    fn noiseless(model: &ModelSpec, us: &[f64]) -> Vec<(f64, f64)> {
        us.iter().map(|&u| (u, model.eta(u))).collect()
    }

    #[test]
    fn noiseless_fit_from_truth() {
        let m = landete();
        let obs = noiseless(&m, &[1.0, 2.0, 3.0, 5.0, 14.0]);
        let fit = fit_mle(&obs, m.kind(), m.theta(), 100).unwrap();
        for (a, b) in fit.theta.iter().zip(m.theta()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn noiseless_fit_from_perturbed_seed() {
        for m in [landete(), ModelSpec::p2(2.0, 1.5, 0.7).unwrap()] {
            let obs = noiseless(&m, &[1.0, 2.0, 3.4, 7.0, 14.0]);
            let t = m.theta();
            let seed = [t[0] * 1.1, t[1] * 0.9, t[2] * 1.1];
            let fit = fit_mle(&obs, m.kind(), seed, 100).unwrap();
            for (a, b) in fit.theta.iter().zip(t) {
                assert!((a - b).abs() <= 1e-8 * b.abs(), "{fit:?}");
            }
        }
    }

    #[test]
    fn two_points_are_insufficient() {
        let m = landete();
        let obs = noiseless(&m, &[1.0, 1.0, 14.0, 14.0]);
        assert!(matches!(
            fit_mle(&obs, m.kind(), m.theta(), 100),
            Err(Error::InsufficientDesign { distinct: 2 })
        ));
    }

    #[test]
    fn zero_noise_recovers_theta() {
        let m = landete();
        let r = run_simulation(&d_design(), &m, &SimConfig::new(0.0, 30, 50, 1)).unwrap();
        assert_eq!(r.failed_fits, 0);
        assert!(r.empirical_covariance.iter().all(|v| v.abs() <= 1e-16));
        assert!(r.estimates.iter().flatten().all(|t| *t == m.theta()));
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let m = landete();
        let cfg = SimConfig::new(0.05 * m.peak_value(), 60, 200, 99);
        let a = run_simulation(&d_design(), &m, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_simulation(&d_design(), &m, &cfg)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn covariance_close_to_prediction() {
        let m = landete();
        let cfg = SimConfig::new(0.05 * m.peak_value(), 300, 2000, 7);
        let r = run_simulation(&d_design(), &m, &cfg).unwrap();
        assert!(r.relative_diagonal_error.iter().all(|e| *e < 0.15), "{r:?}");
        let u = Design::uniform(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 10.0, 14.0]).unwrap();
        let ru = run_simulation(&u, &m, &cfg).unwrap();
        assert!(r.empirical_covariance.determinant() < ru.empirical_covariance.determinant());
    }

    #[test]
    fn rejects_bad_config() {
        let m = landete();
        assert!(run_simulation(&d_design(), &m, &SimConfig::new(-1.0, 30, 5, 1)).is_err());
        assert!(run_simulation(&d_design(), &m, &SimConfig::new(1.0, 2, 5, 1)).is_err());
        let two = Design::uniform(vec![1.0, 14.0]).unwrap();
        assert!(matches!(
            run_simulation(&two, &m, &SimConfig::new(1.0, 30, 5, 1)),
            Err(Error::SingularMatrix(_))
        ));
    }
}
