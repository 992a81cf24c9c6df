//! Small dense linear-algebra routines used by the model fitters: Cholesky
//! factorization, SPD solves with a trace-scaled ridge fallback, and
//! weighted least squares.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::Linalg("cholesky requires a square matrix".into()));
    }
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Linalg(format!(
                        "matrix not positive definite (pivot {i} = {s:.3e})"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Cholesky factor of a positive semi-definite matrix; zero pivots (relative
/// to the largest diagonal entry) produce zero rows instead of an error.
pub fn cholesky_psd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::Linalg("cholesky requires a square matrix".into()));
    }
    let scale = (0..p).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s < -tol || !s.is_finite() {
                    return Err(Error::Linalg(format!(
                        "matrix not positive semi-definite (pivot {i} = {s:.3e})"
                    )));
                }
                l[[i, j]] = if s > tol { s.sqrt() } else { 0.0 };
            } else {
                l[[i, j]] = if l[[j, j]] > 0.0 { s / l[[j, j]] } else { 0.0 };
            }
        }
    }
    Ok(l)
}

/// Solve L y = b for lower-triangular L.
pub fn forward_substitute(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Solve L' x = y for lower-triangular L.
pub fn back_substitute(l: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut x = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve A x = b for symmetric positive-definite A, retrying once with a
/// trace-scaled ridge (1e-8 * mean diagonal) when the factorization fails.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    match cholesky(a) {
        Ok(l) => Ok(back_substitute(&l, &forward_substitute(&l, b))),
        Err(_) => {
            let ridged = add_ridge(a);
            let l = cholesky(&ridged).map_err(|e| {
                Error::Linalg(format!("solve failed even with ridge fallback: {e}"))
            })?;
            Ok(back_substitute(&l, &forward_substitute(&l, b)))
        }
    }
}

fn add_ridge(a: &Array2<f64>) -> Array2<f64> {
    let p = a.nrows();
    let trace: f64 = (0..p).map(|i| a[[i, i]]).sum();
    let ridge = 1e-8 * (trace / p as f64).max(1e-300);
    let mut out = a.clone();
    for i in 0..p {
        out[[i, i]] += ridge;
    }
    out
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, with the
/// same ridge fallback as [`solve_spd`].
pub fn inv_spd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    let l = match cholesky(a) {
        Ok(l) => l,
        Err(_) => cholesky(&add_ridge(a))
            .map_err(|e| Error::Linalg(format!("inverse failed even with ridge fallback: {e}")))?,
    };
    let mut inv = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut e = Array1::<f64>::zeros(p);
        e[j] = 1.0;
        let col = back_substitute(&l, &forward_substitute(&l, &e));
        inv.column_mut(j).assign(&col);
    }
    // enforce exact symmetry against rounding drift
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = s;
            inv[[j, i]] = s;
        }
    }
    Ok(inv)
}

/// Weighted least squares: minimizes sum_i w_i (y_i - x_i' beta)^2.
pub fn wls(x: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>) -> Result<Array1<f64>> {
    let (n, p) = x.dim();
    let mut xtwx = Array2::<f64>::zeros((p, p));
    let mut xtwy = Array1::<f64>::zeros(p);
    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        for j in 0..p {
            let wxj = wi * row[j];
            xtwy[j] += wxj * y[i];
            for k in 0..=j {
                xtwx[[j, k]] += wxj * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            xtwx[[k, j]] = xtwx[[j, k]];
        }
    }
    solve_spd(&xtwx, &xtwy)
}

/// Maximum absolute entry of a vector.
pub fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
