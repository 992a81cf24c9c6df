//! Non-parametric covariate balancing weights by empirical likelihood.
//! Maximises sum_i log w_i subject to zero weighted means of the stacked
//! moments (A* C*, C*, A*), total weight n, and w > 0. Solved in the dual:
//! w_i = 1 / (1 + lambda' g_i), with lambda found by damped Newton on the
//! convex dual, backtracking so every 1 + lambda' g_i stays above 1/n.

use ndarray::{Array1, Array2};

use crate::data_model::{Dataset, MethodId};
use crate::error::{Error, Result};
use crate::linalg;

use super::standardize::standardized_design;
use super::WeightVector;

const N_MOMENTS: usize = 7;
const RESIDUAL_TOL: f64 = 1e-8;
const MAX_NEWTON_ITER: usize = 200;

pub fn npcbps_weights(ds: &Dataset) -> Result<WeightVector> {
    let design = standardized_design(ds)?;
    let n = ds.n;
    let nf = n as f64;

    // stacked moment rows g_i = (a* c*_1..3, c*_1..3, a*)
    let mut g = Array2::<f64>::zeros((n, N_MOMENTS));
    for i in 0..n {
        let a = design.a_star[i];
        for j in 0..3 {
            let c = design.c_star[[i, j]];
            g[[i, j]] = a * c;
            g[[i, 3 + j]] = c;
        }
        g[[i, 6]] = a;
    }

    let mut lambda = Array1::<f64>::zeros(N_MOMENTS);
    let mut denom = vec![1.0f64; n]; // 1 + lambda' g_i
    let floor = 1.0 / nf;

    let residual = |denom: &[f64], g: &Array2<f64>| -> Array1<f64> {
        // (1/n) sum_i g_i / (1 + lambda' g_i) = (1/n) sum_i w_i g_i
        let mut r = Array1::<f64>::zeros(N_MOMENTS);
        for i in 0..denom.len() {
            let w = 1.0 / denom[i];
            for m in 0..N_MOMENTS {
                r[m] += w * g[[i, m]];
            }
        }
        r.mapv_into(|v| v / nf)
    };
    // at a stationary point of the dual, sum_i w_i = n holds identically;
    // a vanishing residual with drifting total weight signals an infeasible
    // constraint set (the dual is unbounded and all weights are collapsing)
    let mean_w = |denom: &[f64]| denom.iter().map(|d| 1.0 / d).sum::<f64>() / nf;

    let mut converged = false;
    for _ in 0..MAX_NEWTON_ITER {
        let r = residual(&denom, &g);
        if linalg::inf_norm(&r) < RESIDUAL_TOL && (mean_w(&denom) - 1.0).abs() < 1e-8 {
            converged = true;
            break;
        }
        if mean_w(&denom) < 0.1 {
            return Err(Error::non_convergence(
                "npCBPS dual Newton",
                "total weight collapsed toward zero; the balance constraints admit \
                 no positive-weight solution",
            ));
        }
        // Hessian of the dual: (1/n) sum_i g_i g_i' / denom_i^2
        let mut h = Array2::<f64>::zeros((N_MOMENTS, N_MOMENTS));
        for i in 0..n {
            let s = 1.0 / (denom[i] * denom[i]);
            for a_idx in 0..N_MOMENTS {
                let v = s * g[[i, a_idx]];
                for b_idx in 0..=a_idx {
                    h[[a_idx, b_idx]] += v * g[[i, b_idx]];
                }
            }
        }
        for a_idx in 0..N_MOMENTS {
            for b_idx in 0..a_idx {
                h[[b_idx, a_idx]] = h[[a_idx, b_idx]];
            }
        }
        h.mapv_inplace(|v| v / nf);

        // Newton direction: minimize dual -(1/n) sum log denom, whose
        // gradient is -r, so the step solves H d = r
        let dir = linalg::solve_spd(&h, &r)
            .map_err(|e| Error::non_convergence("npCBPS dual Newton", e.to_string()))?;

        // backtracking: keep all denominators above 1/n and require the
        // dual to not increase
        let dual = |denom: &[f64]| -> f64 {
            -denom.iter().map(|d| d.ln()).sum::<f64>() / nf
        };
        let f0 = dual(&denom);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &lambda + &(t * &dir);
            let mut cand_denom = Vec::with_capacity(n);
            let mut feasible = true;
            for i in 0..n {
                let mut d = 1.0;
                for m in 0..N_MOMENTS {
                    d += cand[m] * g[[i, m]];
                }
                if d <= floor {
                    feasible = false;
                    break;
                }
                cand_denom.push(d);
            }
            if feasible && dual(&cand_denom) <= f0 + 1e-12 {
                lambda = cand;
                denom = cand_denom;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::non_convergence(
                "npCBPS dual Newton",
                format!(
                    "no feasible descent step; constraint residual {:.3e} \
                     (zero may lie outside the convex hull of the moments)",
                    linalg::inf_norm(&residual(&denom, &g))
                ),
            ));
        }
    }
    if !converged {
        let r = residual(&denom, &g);
        if linalg::inf_norm(&r) >= RESIDUAL_TOL || (mean_w(&denom) - 1.0).abs() >= 1e-8 {
            return Err(Error::non_convergence(
                "npCBPS dual Newton",
                format!(
                    "constraint residual {:.3e}, mean weight {:.6} after {MAX_NEWTON_ITER} iterations",
                    linalg::inf_norm(&r),
                    mean_w(&denom)
                ),
            ));
        }
    }

    let w: Vec<f64> = denom.iter().map(|d| 1.0 / d).collect();
    let wv = WeightVector {
        w,
        numerator: None,
        denominator: None,
        method: MethodId::NpCbps,
        winsorised_at: None,
    };
    wv.validate()?;
    Ok(wv)
}
