//! Evaluation grids over a design space.

use crate::design::DesignSpace;

/// `n` points covering `space`.
///
/// Bounded spaces get a uniform grid. Unbounded spaces get a log-spaced grid
/// from `s` (or `peak / (1000·rho)` when `s = 0`) up to
/// `max(10·rho·peak, 2·max(extra))`, with `u = 0` prepended when `s = 0`.
pub(crate) fn evaluation_grid(space: &DesignSpace, peak: f64, rho: f64, n: usize, extra: &[f64]) -> Vec<f64> {
    let n = n.max(2);
    let s = space.lower();
    if space.is_bounded() {
        let t = space.upper();
        return (0..n).map(|i| s + (t - s) * i as f64 / (n - 1) as f64).collect();
    }
    let lo = if s > 0.0 { s } else { peak / (1000.0 * rho) };
    let far = extra.iter().cloned().fold(0.0, f64::max) * 2.0;
    let hi = (10.0 * rho * peak).max(far).max(lo * 10.0);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut out = Vec::with_capacity(n + 1);
    if s == 0.0 {
        out.push(0.0);
    }
    out.extend((0..n).map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()));
    out[if s == 0.0 { 1 } else { 0 }] = lo;
    out
}

/// Golden-section maximisation of `f` on `[a, b]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    [(c, fc), (d, fd), (a, fa), (b, fb)]
        .into_iter()
        .fold(
            (c, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_grid_hits_endpoints() {
        let g = evaluation_grid(&DesignSpace::new(1.0, 14.0).unwrap(), 3.0, 5.0, 101, &[]);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 1.0);
        assert_eq!(*g.last().unwrap(), 14.0);
    }

    #[test]
    fn unbounded_grid_includes_zero_and_tail() {
        let g = evaluation_grid(&DesignSpace::unbounded(0.0).unwrap(), 1.0, 4.0, 100, &[100.0]);
        assert_eq!(g[0], 0.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(*g.last().unwrap() >= 200.0 - 1e-9);
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3).powi(2), -1.0, 2.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-7);
        assert!(fx <= 0.0);
    }
}
