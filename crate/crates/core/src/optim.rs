//! Quasi-Newton minimisation and bracketed one-dimensional root finding.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

pub struct BfgsResult {
    pub x: Array1<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with backtracking Armijo line search. `grad` must fill the gradient
/// for a given point.
pub fn bfgs<F, G>(
    x0: &Array1<f64>,
    mut f: F,
    mut grad: G,
    grad_tol: f64,
    maxit: usize,
) -> BfgsResult
where
    F: FnMut(&Array1<f64>) -> f64,
    G: FnMut(&Array1<f64>) -> Array1<f64>,
{
    let p = x0.len();
    let mut x = x0.clone();
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut h = Array2::<f64>::eye(p); // inverse Hessian approximation

    let mut converged = linalg::inf_norm(&g) < grad_tol;
    let mut iters = 0usize;

    while !converged && iters < maxit {
        iters += 1;
        let dir = -h.dot(&g);
        let slope = dir.dot(&g);
        let dir = if slope < 0.0 {
            dir
        } else {
            h = Array2::<f64>::eye(p);
            -g.clone()
        };
        let slope = dir.dot(&g);

        // backtracking
        let mut t = 1.0;
        let mut x_new;
        let mut f_new;
        let mut ok = false;
        loop {
            x_new = &x + &(t * &dir);
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * t * slope {
                ok = true;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        if !ok {
            break;
        }
        let g_new = grad(&x_new);
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-14 {
            // BFGS inverse update
            let rho = 1.0 / sy;
            let hy = h.dot(&yv);
            let yhy = yv.dot(&hy);
            let coef = (1.0 + rho * yhy) * rho;
            for i in 0..p {
                for j in 0..p {
                    h[[i, j]] += coef * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        converged = linalg::inf_norm(&g) < grad_tol;
    }
    BfgsResult {
        grad_norm: linalg::inf_norm(&g),
        x,
        f: fx,
        iterations: iters,
        converged,
    }
}

/// Root of a monotone-increasing function on [lo, hi] by bisection-guarded
/// Newton. `f_df` returns (f(x), f'(x)). Errors when the root is not
/// bracketed.
pub fn newton_bracketed<F: FnMut(f64) -> (f64, f64)>(
    mut f_df: F,
    lo0: f64,
    hi0: f64,
    ftol: f64,
    maxit: usize,
) -> Result<f64> {
    let (mut lo, mut hi) = (lo0, hi0);
    let (flo, _) = f_df(lo);
    let (fhi, _) = f_df(hi);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "root not bracketed on [{lo0}, {hi0}]: f(lo)={flo:.3e}, f(hi)={fhi:.3e}"
        )));
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..maxit {
        let (fx, dfx) = f_df(x);
        if fx.abs() < ftol {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut x_new = if dfx > 0.0 { x - fx / dfx } else { f64::NAN };
        if !x_new.is_finite() || x_new <= lo || x_new >= hi {
            x_new = 0.5 * (lo + hi);
        }
        if (x_new - x).abs() < 1e-15 * (1.0 + x.abs()) {
            return Ok(x_new);
        }
        x = x_new;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bfgs_on_rosenbrock() {
        let f = |x: &Array1<f64>| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let grad = |x: &Array1<f64>| {
            array![
                -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] * x[0])
            ]
        };
        let res = bfgs(&array![-1.2, 1.0], f, grad, 1e-8, 500);
        assert!(res.converged, "grad_norm={}", res.grad_norm);
        assert!((res.x[0] - 1.0).abs() < 1e-6);
        assert!((res.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn newton_bracketed_finds_logit_root() {
        // solve expit(x) = 0.1  ->  x = ln(1/9)
        let root = newton_bracketed(
            |x| {
                let p = crate::stats::expit(x);
                (p - 0.1, p * (1.0 - p))
            },
            -20.0,
            20.0,
            1e-12,
            200,
        )
        .unwrap();
        assert!((root - (1.0f64 / 9.0).ln()).abs() < 1e-8);
    }

    #[test]
    fn newton_bracketed_rejects_unbracketed() {
        assert!(newton_bracketed(|x| (x * x + 1.0, 2.0 * x), -1.0, 1.0, 1e-10, 50).is_err());
    }
}
