//! Parametric covariate balancing weights for a numeric exposure. The
//! standardised exposure gets a normal working model A* | C* ~ N(C*'b, s2)
//! and a normal marginal with free mean and variance; the parameter vector
//! is pinned by stacking the exact balance conditions (weighted A*-moment
//! and A*-by-C* cross moments) with the residual-variance and marginal score
//! conditions, solved as a two-step GMM whose objective is driven to zero by
//! quasi-Newton iterations, so the balance constraints hold to solver
//! precision at the solution.

use ndarray::{Array1, Array2};

use crate::data_model::{Dataset, MethodId};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::bfgs;
use crate::stats::normal_log_pdf;

use super::standardize::standardized_design;
use super::WeightVector;

const N_PARAMS: usize = 7; // b0, b1, b2, b3, ln s, mu_m, ln s_m
const N_MOMENTS: usize = 7;
const GRAD_TOL: f64 = 1e-8;
const MAX_BFGS_ITER: usize = 400;

struct CbpsProblem {
    x: Array2<f64>, // n x 4 design (1, c*)
    a: Array1<f64>, // standardised exposure
}

impl CbpsProblem {
    fn weights(&self, theta: &Array1<f64>) -> Vec<f64> {
        let n = self.x.nrows();
        let sigma2 = (2.0 * theta[4]).exp();
        let mu_m = theta[5];
        let s2_m = (2.0 * theta[6]).exp();
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let mut eta = 0.0;
            for j in 0..4 {
                eta += self.x[[i, j]] * theta[j];
            }
            let ln_num = normal_log_pdf(self.a[i], mu_m, s2_m);
            let ln_den = normal_log_pdf(self.a[i], eta, sigma2);
            w.push((ln_num - ln_den).clamp(-300.0, 300.0).exp());
        }
        w
    }

    /// Mean moment vector g-bar(theta): four balance conditions
    /// (w a*, w a* c*_j), the residual variance condition, and the two
    /// marginal-moment conditions.
    fn moments(&self, theta: &Array1<f64>) -> Array1<f64> {
        let n = self.x.nrows();
        let nf = n as f64;
        let sigma2 = (2.0 * theta[4]).exp();
        let mu_m = theta[5];
        let s2_m = (2.0 * theta[6]).exp();
        let w = self.weights(theta);
        let mut g = Array1::<f64>::zeros(N_MOMENTS);
        for i in 0..n {
            let ai = self.a[i];
            let mut eta = 0.0;
            for j in 0..4 {
                eta += self.x[[i, j]] * theta[j];
            }
            let e = ai - eta;
            let wa = w[i] * ai;
            g[0] += wa;
            g[1] += wa * self.x[[i, 1]];
            g[2] += wa * self.x[[i, 2]];
            g[3] += wa * self.x[[i, 3]];
            g[4] += e * e - sigma2;
            g[5] += ai - mu_m;
            g[6] += (ai - mu_m) * (ai - mu_m) - s2_m;
        }
        g.mapv_into(|v| v / nf)
    }

    fn objective(&self, theta: &Array1<f64>, w_mat: &Array2<f64>) -> f64 {
        let g = self.moments(theta);
        g.dot(&w_mat.dot(&g))
    }

    fn gradient(&self, theta: &Array1<f64>, w_mat: &Array2<f64>) -> Array1<f64> {
        // 2 J' W g with a central finite-difference Jacobian of g-bar
        let g = self.moments(theta);
        let wg = w_mat.dot(&g);
        let mut grad = Array1::<f64>::zeros(N_PARAMS);
        let mut jac = Array2::<f64>::zeros((N_MOMENTS, N_PARAMS));
        for j in 0..N_PARAMS {
            let h = 1e-6 * (1.0 + theta[j].abs());
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let gu = self.moments(&up);
            let gd = self.moments(&dn);
            for m in 0..N_MOMENTS {
                jac[[m, j]] = (gu[m] - gd[m]) / (2.0 * h);
            }
        }
        for j in 0..N_PARAMS {
            let mut s = 0.0;
            for m in 0..N_MOMENTS {
                s += jac[[m, j]] * wg[m];
            }
            grad[j] = 2.0 * s;
        }
        grad
    }

    /// Empirical covariance of the per-row moment contributions at theta.
    fn moment_cov(&self, theta: &Array1<f64>) -> Array2<f64> {
        let n = self.x.nrows();
        let nf = n as f64;
        let sigma2 = (2.0 * theta[4]).exp();
        let mu_m = theta[5];
        let s2_m = (2.0 * theta[6]).exp();
        let w = self.weights(theta);
        let mut s = Array2::<f64>::zeros((N_MOMENTS, N_MOMENTS));
        let mut gi = [0.0f64; N_MOMENTS];
        for i in 0..n {
            let ai = self.a[i];
            let mut eta = 0.0;
            for j in 0..4 {
                eta += self.x[[i, j]] * theta[j];
            }
            let e = ai - eta;
            let wa = w[i] * ai;
            gi[0] = wa;
            gi[1] = wa * self.x[[i, 1]];
            gi[2] = wa * self.x[[i, 2]];
            gi[3] = wa * self.x[[i, 3]];
            gi[4] = e * e - sigma2;
            gi[5] = ai - mu_m;
            gi[6] = (ai - mu_m) * (ai - mu_m) - s2_m;
            for a_idx in 0..N_MOMENTS {
                for b_idx in 0..=a_idx {
                    s[[a_idx, b_idx]] += gi[a_idx] * gi[b_idx];
                }
            }
        }
        for a_idx in 0..N_MOMENTS {
            for b_idx in 0..a_idx {
                s[[b_idx, a_idx]] = s[[a_idx, b_idx]];
            }
        }
        s.mapv_into(|v| v / nf)
    }
}

pub fn cbps_weights(ds: &Dataset) -> Result<WeightVector> {
    let design = standardized_design(ds)?;
    let n = ds.n;
    let mut x = Array2::<f64>::zeros((n, 4));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 0..3 {
            x[[i, j + 1]] = design.c_star[[i, j]];
        }
    }
    let problem = CbpsProblem {
        x,
        a: design.a_star.clone(),
    };

    // start from the least-squares fit of a* on (1, c*)
    let ones = Array1::from_elem(n, 1.0);
    let beta0 = linalg::wls(&problem.x, &problem.a, &ones)?;
    let mut resid2 = 0.0;
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..4 {
            eta += problem.x[[i, j]] * beta0[j];
        }
        resid2 += (problem.a[i] - eta).powi(2);
    }
    let sigma2_0 = (resid2 / n as f64).max(1e-6);
    let mut theta = Array1::<f64>::zeros(N_PARAMS);
    for j in 0..4 {
        theta[j] = beta0[j];
    }
    theta[4] = 0.5 * sigma2_0.ln();
    theta[5] = 0.0; // a* is centered
    theta[6] = 0.0; // ln sd of a* ~ 0

    // step 1: identity weighting
    let eye = Array2::<f64>::eye(N_MOMENTS);
    let step1 = bfgs(
        &theta,
        |t| problem.objective(t, &eye),
        |t| problem.gradient(t, &eye),
        GRAD_TOL,
        MAX_BFGS_ITER,
    );

    // step 2: efficient weighting from the step-1 moment covariance
    let s = problem.moment_cov(&step1.x);
    let w_mat = linalg::inv_spd(&s)?;
    let step2 = bfgs(
        &step1.x,
        |t| problem.objective(t, &w_mat),
        |t| problem.gradient(t, &w_mat),
        GRAD_TOL,
        MAX_BFGS_ITER,
    );

    let theta_hat = if step2.f.is_finite() { step2.x } else { step1.x };
    let g_final = problem.moments(&theta_hat);
    let residual = linalg::inf_norm(&g_final);
    if residual > 1e-6 {
        return Err(Error::non_convergence(
            "CBPS GMM",
            format!(
                "moment residual {residual:.3e} (objective {:.3e})",
                problem.objective(&theta_hat, &w_mat)
            ),
        ));
    }

    let w = problem.weights(&theta_hat);
    let sigma2 = (2.0 * theta_hat[4]).exp();
    let mu_m = theta_hat[5];
    let s2_m = (2.0 * theta_hat[6]).exp();
    let mut numerator = Vec::with_capacity(n);
    let mut denominator = Vec::with_capacity(n);
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..4 {
            eta += problem.x[[i, j]] * theta_hat[j];
        }
        numerator.push(normal_log_pdf(problem.a[i], mu_m, s2_m).exp());
        denominator.push(normal_log_pdf(problem.a[i], eta, sigma2).exp());
    }
    let wv = WeightVector {
        w,
        numerator: Some(numerator),
        denominator: Some(denominator),
        method: MethodId::Cbps,
        winsorised_at: None,
    };
    wv.validate()?;
    Ok(wv)
}
