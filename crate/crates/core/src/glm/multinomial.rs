//! Baseline-category multinomial logistic regression by damped Newton.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

const MAX_ITER: usize = 200;
const SCORE_TOL: f64 = 1e-8;
const HESSIAN_RIDGE: f64 = 1e-8;

/// Fitted multinomial model with category 1 as the reference.
#[derive(Debug, Clone)]
pub struct MultinomialFit {
    /// Row k-2 holds the coefficient vector of category k (k = 2..K).
    pub coefficients: Array2<f64>,
    pub n_categories: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Fit the multinomial logit of `categories` (labels 1..=K, every label
/// present) on the design matrix `x`. Newton-Raphson on the full
/// log-likelihood with step halving; a ridge of 1e-8 is added when the
/// Hessian is singular.
pub fn fit_multinomial(x: &Array2<f64>, categories: &[usize], k: usize) -> Result<MultinomialFit> {
    let (n, p) = x.dim();
    if categories.len() != n {
        return Err(Error::InvalidParameter(
            "fit_multinomial: length mismatch".into(),
        ));
    }
    if k < 2 {
        return Err(Error::InvalidParameter(
            "fit_multinomial: need at least 2 categories".into(),
        ));
    }
    let mut counts = vec![0usize; k + 1];
    for &c in categories {
        if c < 1 || c > k {
            return Err(Error::InvalidParameter(format!(
                "fit_multinomial: label {c} outside 1..={k}"
            )));
        }
        counts[c] += 1;
    }
    if let Some(absent) = (1..=k).find(|&c| counts[c] == 0) {
        return Err(Error::InvalidParameter(format!(
            "fit_multinomial: category {absent} absent; collapse levels first"
        )));
    }

    let dim = (k - 1) * p;
    let mut theta = Array1::<f64>::zeros(dim);
    let mut probs = Array2::<f64>::zeros((n, k));
    let mut loglik = update_probs_loglik(x, categories, k, &theta, &mut probs);

    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=MAX_ITER {
        iterations = iter;
        // score and (negated) Hessian of the log-likelihood
        let mut score = Array1::<f64>::zeros(dim);
        let mut neg_hess = Array2::<f64>::zeros((dim, dim));
        for i in 0..n {
            let row = x.row(i);
            for cat in 2..=k {
                let pk = probs[[i, cat - 1]];
                let resid = (categories[i] == cat) as u8 as f64 - pk;
                let off_k = (cat - 2) * p;
                for j in 0..p {
                    score[off_k + j] += resid * row[j];
                }
                for cat2 in 2..=cat {
                    let pl = probs[[i, cat2 - 1]];
                    let wkl = if cat == cat2 { pk * (1.0 - pk) } else { -pk * pl };
                    let off_l = (cat2 - 2) * p;
                    for j in 0..p {
                        let v = wkl * row[j];
                        for m in 0..p {
                            neg_hess[[off_k + j, off_l + m]] += v * row[m];
                        }
                    }
                }
            }
        }
        // mirror the lower block triangle
        for b1 in 0..(k - 1) {
            for b2 in 0..b1 {
                for j in 0..p {
                    for m in 0..p {
                        neg_hess[[b2 * p + m, b1 * p + j]] = neg_hess[[b1 * p + j, b2 * p + m]];
                    }
                }
            }
        }

        if linalg::inf_norm(&score) < SCORE_TOL {
            converged = true;
            break;
        }

        let step = match linalg::solve_spd(&neg_hess, &score) {
            Ok(s) => s,
            Err(_) => {
                let mut ridged = neg_hess.clone();
                for j in 0..dim {
                    ridged[[j, j]] += HESSIAN_RIDGE;
                }
                linalg::solve_spd(&ridged, &score)?
            }
        };

        // step halving on log-likelihood decrease
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &theta + &(t * &step);
            let ll = update_probs_loglik(x, categories, k, &cand, &mut probs);
            if ll >= loglik - 1e-12 {
                theta = cand;
                loglik = ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // restore probabilities for the unmoved theta and stop
            update_probs_loglik(x, categories, k, &theta, &mut probs);
            break;
        }
    }

    let mut coefficients = Array2::<f64>::zeros((k - 1, p));
    for cat in 0..(k - 1) {
        for j in 0..p {
            coefficients[[cat, j]] = theta[cat * p + j];
        }
    }
    Ok(MultinomialFit {
        coefficients,
        n_categories: k,
        converged,
        iterations,
    })
}

fn update_probs_loglik(
    x: &Array2<f64>,
    categories: &[usize],
    k: usize,
    theta: &Array1<f64>,
    probs: &mut Array2<f64>,
) -> f64 {
    let (n, p) = x.dim();
    let mut ll = 0.0;
    let mut eta = vec![0.0; k];
    for i in 0..n {
        let row = x.row(i);
        eta[0] = 0.0;
        for cat in 2..=k {
            let off = (cat - 2) * p;
            let mut e = 0.0;
            for j in 0..p {
                e += theta[off + j] * row[j];
            }
            eta[cat - 1] = e;
        }
        let max_eta = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for cat in 0..k {
            denom += (eta[cat] - max_eta).exp();
        }
        let log_denom = max_eta + denom.ln();
        for cat in 0..k {
            probs[[i, cat]] = (eta[cat] - log_denom).exp();
        }
        ll += eta[categories[i] - 1] - log_denom;
    }
    ll
}

/// Per-row category probabilities under a fitted model (softmax with a zero
/// linear predictor for the reference category).
pub fn predict_probs(fit: &MultinomialFit, x: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, p) = x.dim();
    if fit.coefficients.ncols() != p {
        return Err(Error::InvalidParameter(format!(
            "predict_probs: design has {p} columns, fit expects {}",
            fit.coefficients.ncols()
        )));
    }
    let k = fit.n_categories;
    let mut probs = Array2::<f64>::zeros((n, k));
    let mut eta = vec![0.0; k];
    for i in 0..n {
        let row = x.row(i);
        eta[0] = 0.0;
        for cat in 2..=k {
            let mut e = 0.0;
            for j in 0..p {
                e += fit.coefficients[[cat - 2, j]] * row[j];
            }
            eta[cat - 1] = e;
        }
        let max_eta = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = eta.iter().map(|e| (e - max_eta).exp()).sum();
        let log_denom = max_eta + denom.ln();
        for cat in 0..k {
            probs[[i, cat]] = (eta[cat] - log_denom).exp();
        }
    }
    Ok(probs)
}
