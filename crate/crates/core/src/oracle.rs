//! Independent reference computations used to certify the solvers and the
//! analytic gradients. Nothing here calls into the code paths it checks:
//! the 1-D SVR objective, the finite differences and the matrix inverse are
//! all evaluated from scratch.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            lo: -10.0,
            hi: 10.0,
            step: 1e-4,
        }
    }
}

/// The rank-pooling objective for scalar frames, written out directly.
fn svr_1d_objective(v: &[f64], c: f64, eps: f64, u: f64) -> f64 {
    let mut loss = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let t = (i + 1) as f64;
        let slack = ((t - u * x).abs() - eps).max(0.0);
        loss += slack * slack;
    }
    0.5 * u * u + 0.5 * c * loss
}

/// Exhaustive grid search for the 1-D rank-pooling minimizer, followed by
/// one finer pass around the best grid point.
pub fn oracle_svr_1d(v: &[f64], c: f64, eps: f64, grid: Grid) -> f64 {
    // Grid points are integer multiples of the step around a centre so that
    // exact values such as 0 are reachable.
    let scan = |centre: f64, lo: i64, hi: i64, step: f64| {
        let mut best = (f64::INFINITY, centre);
        for k in lo..=hi {
            let u = centre + k as f64 * step;
            let f = svr_1d_objective(v, c, eps, u);
            if f < best.0 {
                best = (f, u);
            }
        }
        best.1
    };
    let lo = (grid.lo / grid.step).ceil() as i64;
    let hi = (grid.hi / grid.step).floor() as i64;
    let coarse = scan(0.0, lo, hi, grid.step);
    scan(coarse, -100, 100, grid.step / 100.0)
}

/// Central difference of a scalar function of a scalar, with one Richardson
/// refinement: `(4 D(h/2) - D(h)) / 3`.
pub fn fd_derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    let mut central = |h: f64| {
        // use the step actually representable at x
        let h = (x + h) - x;
        (f(x + h) - f(x - h)) / (2.0 * h)
    };
    let coarse = central(h);
    let fine = central(h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

/// Gradient of `f` at `point` by per-coordinate Richardson-refined central
/// differences.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let x0 = point[i];
            let d = fd_derivative(
                |xi| {
                    x[i] = xi;
                    f(&x)
                },
                x0,
                h,
            );
            x[i] = x0;
            d
        })
        .collect()
}

/// Derivative of a vector-valued function of one scalar.
pub fn fd_derivative_vec<F: FnMut(f64) -> Vec<f64>>(mut f: F, x: f64, h: f64) -> Vec<f64> {
    let p1 = f(x + h);
    let m1 = f(x - h);
    let p2 = f(x + h / 2.0);
    let m2 = f(x - h / 2.0);
    (0..p1.len())
        .map(|k| {
            let coarse = (p1[k] - m1[k]) / (2.0 * h);
            let fine = (p2[k] - m2[k]) / h;
            (4.0 * fine - coarse) / 3.0
        })
        .collect()
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn direct_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: h.ncols(),
        });
    }
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let mut a = h.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[(r, col)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty column");
        if pivot.abs() <= 1e-14 * scale {
            return Err(Error::SingularMatrix { column: col });
        }
        a.swap_rows(col, pivot_row);
        inv.swap_rows(col, pivot_row);
        for j in 0..n {
            a[(col, j)] /= pivot;
            inv[(col, j)] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(r, j)] -= factor * a[(col, j)];
                inv[(r, j)] -= factor * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}
