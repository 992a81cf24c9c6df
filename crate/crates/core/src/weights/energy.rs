//! Distance-covariance-optimal weights: minimise
//! D(w) = dcov-quadratic-form + energy(A_w, A) + energy(C_w, C)
//! over { w >= 0, sum w = n } by accelerated projected gradient. D(w) is a
//! quadratic in w (the dcov term uses unweighted double-centering), so the
//! gradient is one matrix-vector product per iteration; momentum steps use
//! the 1/L step length from a power-iteration estimate of the curvature,
//! with a monotone safeguard so no accepted step ever raises the objective.
//! Plain projected gradient stalls in this QP's flat valley long before the
//! optimum, which is why the momentum form is used.

use crate::data_model::{Dataset, MethodId};
use crate::error::{Error, Result};

use super::standardize::standardize_columns;
use super::WeightVector;

#[derive(Debug, Clone)]
pub struct EnergyConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        // the objective's valley is flat enough that a 1e-8 per-iteration
        // change fires thousands of iterations before the optimum; 1e-10
        // reaches the converged weights
        EnergyConfig {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// D(w) = w'Qw + b'w + c0 with
/// Q = (Ahat o Chat - D_A - D_C)/n^2, b = 2 (D_A + D_C) 1 / n^2,
/// c0 = -1'(D_A + D_C)1/n^2 (Ahat/Chat are the unweighted double-centered
/// distance matrices). A stays on its raw count scale; covariates are
/// per-column standardised before distances are taken.
struct QuadraticObjective {
    q: Vec<f64>, // n x n row-major
    b: Vec<f64>,
    c0: f64,
    n: usize,
}

impl QuadraticObjective {
    fn build(ds: &Dataset) -> Result<Self> {
        let n = ds.n;
        let c = standardize_columns(ds)?;
        let a: Vec<f64> = ds.a.iter().map(|&v| v as f64).collect();

        let mut da = vec![0.0f64; n * n];
        let mut dc = vec![0.0f64; n * n];
        for i in 0..n {
            let (ci0, ci1, ci2) = (c[[i, 0]], c[[i, 1]], c[[i, 2]]);
            for j in (i + 1)..n {
                let dist_a = (a[i] - a[j]).abs();
                let d0 = ci0 - c[[j, 0]];
                let d1 = ci1 - c[[j, 1]];
                let d2 = ci2 - c[[j, 2]];
                let dist_c = (d0 * d0 + d1 * d1 + d2 * d2).sqrt();
                da[i * n + j] = dist_a;
                da[j * n + i] = dist_a;
                dc[i * n + j] = dist_c;
                dc[j * n + i] = dist_c;
            }
        }
        let nf = n as f64;
        let row_means = |m: &[f64]| -> (Vec<f64>, f64) {
            let mut rows = vec![0.0f64; n];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += m[i * n + j];
                }
                rows[i] = s / nf;
            }
            let grand = rows.iter().sum::<f64>() / nf;
            (rows, grand)
        };
        let (rows_a, grand_a) = row_means(&da);
        let (rows_c, grand_c) = row_means(&dc);

        let inv_n2 = 1.0 / (nf * nf);
        let mut b = vec![0.0f64; n];
        let mut c0 = 0.0;
        for i in 0..n {
            b[i] = 2.0 * (rows_a[i] + rows_c[i]) * nf * inv_n2; // 2 (rowsum_A + rowsum_C)/n^2
            c0 -= (rows_a[i] + rows_c[i]) * nf * inv_n2;
        }
        // overwrite da in place with Q
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let ahat = da[idx] - rows_a[i] - rows_a[j] + grand_a;
                let chat = dc[idx] - rows_c[i] - rows_c[j] + grand_c;
                da[idx] = (ahat * chat - da[idx] - dc[idx]) * inv_n2;
            }
        }
        drop(dc);
        Ok(QuadraticObjective { q: da, b, c0, n })
    }

    fn matvec(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut qw = vec![0.0f64; n];
        for i in 0..n {
            let row = &self.q[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * w[j];
            }
            qw[i] = s;
        }
        qw
    }

    fn value_from(&self, w: &[f64], qw: &[f64]) -> f64 {
        let mut value = self.c0;
        for i in 0..self.n {
            value += w[i] * (qw[i] + self.b[i]);
        }
        value
    }

    fn value(&self, w: &[f64]) -> f64 {
        let qw = self.matvec(w);
        self.value_from(w, &qw)
    }

    /// Largest eigenvalue magnitude of Q by power iteration (for 1/L steps).
    fn lambda_max(&self) -> f64 {
        let mut v = vec![1.0f64; self.n];
        for (i, x) in v.iter_mut().enumerate() {
            *x += (i % 7) as f64 * 0.01; // avoid starting orthogonal to the top eigenvector
        }
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= norm0;
        }
        let mut lambda = 0.0;
        for _ in 0..40 {
            let qv = self.matvec(&v);
            let norm = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = qv.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}

/// Exact Euclidean projection onto { w >= 0, sum w = n }.
fn project_scaled_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let n = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = (sorted.iter().sum::<f64>() - total) / n as f64;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - total) / (k + 1) as f64;
        if k + 1 == n || sorted[k + 1] <= t {
            tau = t;
            if s > t {
                break;
            }
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

pub fn energy_weights(ds: &Dataset, config: &EnergyConfig) -> Result<WeightVector> {
    energy_weights_impl(ds, config).map(|(wv, _)| wv)
}

/// Also exposes the final objective value for tests and diagnostics.
pub(crate) fn energy_weights_impl(
    ds: &Dataset,
    config: &EnergyConfig,
) -> Result<(WeightVector, f64)> {
    if !ds.is_complete() {
        return Err(Error::InvalidParameter(
            "energy_weights requires complete data".into(),
        ));
    }
    let obj = QuadraticObjective::build(ds)?;
    let n = obj.n;
    let nf = n as f64;

    let lambda = obj.lambda_max();
    if lambda == 0.0 {
        // objective is affine on the feasible set; uniform weights already optimal
        let wv = WeightVector {
            w: vec![1.0; n],
            numerator: None,
            denominator: None,
            method: MethodId::Energy,
            winsorised_at: None,
        };
        return Ok((wv, obj.value(&vec![1.0; n])));
    }
    let step = 1.0 / (2.2 * lambda); // gradient of w'Qw is 2Qw

    let mut w = vec![1.0f64; n];
    let mut qw = obj.matvec(&w);
    let mut value = obj.value_from(&w, &qw);
    let uniform_value = value;

    let mut w_prev = w.clone();
    let mut qw_prev = qw.clone();
    let mut t_momentum = 1.0f64;
    // a momentum restart yields one artificially tiny objective change, so
    // the stopping rule requires the relative change to stay below tol for
    // several consecutive iterations
    let mut quiet_iters = 0usize;

    for _ in 0..config.max_iter {
        // momentum point z = w + beta (w - w_prev); Q z follows by linearity
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_momentum * t_momentum).sqrt());
        let beta = (t_momentum - 1.0) / t_next;
        let mut cand = vec![0.0f64; n];
        for i in 0..n {
            let z = w[i] + beta * (w[i] - w_prev[i]);
            let qz = qw[i] + beta * (qw[i] - qw_prev[i]);
            let grad_z = 2.0 * qz + obj.b[i];
            cand[i] = z - step * grad_z;
        }
        let cand = project_scaled_simplex(&cand, nf);
        let qcand = obj.matvec(&cand);
        let cand_value = obj.value_from(&cand, &qcand);

        let (new_w, new_qw, new_value, restarted) = if cand_value <= value {
            (cand, qcand, cand_value, false)
        } else {
            // monotone safeguard: plain projected step from w, momentum reset
            let mut plain = vec![0.0f64; n];
            for i in 0..n {
                let grad_w = 2.0 * qw[i] + obj.b[i];
                plain[i] = w[i] - step * grad_w;
            }
            let plain = project_scaled_simplex(&plain, nf);
            let qplain = obj.matvec(&plain);
            let plain_value = obj.value_from(&plain, &qplain);
            if plain_value > value + 1e-15 {
                return Err(Error::Internal(format!(
                    "energy projected step raised the objective: {plain_value} > {value}"
                )));
            }
            (plain, qplain, plain_value, true)
        };

        let rel_change = (value - new_value).abs() / value.abs().max(1.0);
        w_prev = std::mem::replace(&mut w, new_w);
        qw_prev = std::mem::replace(&mut qw, new_qw);
        value = new_value;
        t_momentum = if restarted { 1.0 } else { t_next };

        if rel_change < config.tol {
            quiet_iters += 1;
            if quiet_iters >= 10 {
                break;
            }
        } else {
            quiet_iters = 0;
        }
    }

    if value > uniform_value + 1e-12 {
        return Err(Error::Internal(format!(
            "energy objective rose above the uniform-weight value: {value} > {uniform_value}"
        )));
    }
    let wv = WeightVector {
        w,
        numerator: None,
        denominator: None,
        method: MethodId::Energy,
        winsorised_at: None,
    };
    wv.validate()?;
    Ok((wv, value))
}
