//! Calibrated amputation. MCAR masks each of (c2, c3, a, y) independently
//! with probabilities p_i = p0 + (i-1)d; MAR draws missingness from logistic
//! models on the always-observed parents with unit coefficients. In both
//! cases (p0, d) is chosen by constrained minimisation so the overall
//! incomplete-row share matches a target phi*; MAR additionally solves for
//! the logistic intercepts that pin each marginal rate on a large fixed
//! reference sample.

use rayon::prelude::*;

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::optim::newton_bracketed;
use crate::rng::RngStream;
use crate::stats::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Mcar,
    Mar,
    MarNoExposure,
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mechanism::Mcar => write!(f, "mcar"),
            Mechanism::Mar => write!(f, "mar"),
            Mechanism::MarNoExposure => write!(f, "mar_no_exposure"),
        }
    }
}

/// Calibrated amputation plan. `p[i]` is the marginal missingness
/// probability of the i-th amputed variable in order (c2, c3, a, y), or
/// (c2, c3, y) when the exposure is kept observed.
#[derive(Debug, Clone)]
pub struct MissingnessPlan {
    pub mechanism: Mechanism,
    pub phi_target: f64,
    pub p0: f64,
    pub d: f64,
    pub p: Vec<f64>,
    /// Logistic intercepts, MAR only.
    pub intercepts: Option<Vec<f64>>,
    /// Overall incomplete-row probability achieved at calibration.
    pub phi_realised_calibration: f64,
}

impl MissingnessPlan {
    pub fn n_amputed_vars(&self) -> usize {
        self.p.len()
    }

    /// Plan file representation (one `key = value` per line), auditable
    /// against the calibrated-parameter table.
    pub fn to_plan_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("mechanism = {}\n", self.mechanism));
        out.push_str(&format!("phi_target = {}\n", self.phi_target));
        out.push_str(&format!("phi_realised_calibration = {}\n", self.phi_realised_calibration));
        out.push_str(&format!("p0 = {}\n", self.p0));
        out.push_str(&format!("d = {}\n", self.d));
        let var_names: &[&str] = if self.p.len() == 4 {
            &["c2", "c3", "a", "y"]
        } else {
            &["c2", "c3", "y"]
        };
        for (name, p) in var_names.iter().zip(&self.p) {
            out.push_str(&format!("p_{name} = {p}\n"));
        }
        if let Some(g) = &self.intercepts {
            for (name, g0) in var_names.iter().zip(g) {
                out.push_str(&format!("intercept_{name} = {g0}\n"));
            }
        }
        out
    }
}

/// Closed-form overall missingness under MCAR: 1 - prod_i (1 - p_i).
pub fn phi_mcar(p: &[f64]) -> f64 {
    1.0 - p.iter().map(|&x| 1.0 - x).product::<f64>()
}

fn progression(p0: f64, d: f64, vars: usize) -> Vec<f64> {
    (0..vars).map(|i| p0 + i as f64 * d).collect()
}

fn initial_point(phi_target: f64) -> f64 {
    (phi_target / 10.0).max(1e-4)
}

/// The minimisers of (phi(p0,d) - phi*)^2 form a curve; the calibrated
/// point is the barrier-limit of an adaptive-log-barrier search started at
/// p0 = d = max(phi*/10, 1e-4): along the curve it maximises
///   t0 ln p0 + t0 ln d + (1 - v t0) ln(1 - p0 - (v-1) d) + (v-2) d
/// (anchor slacks t0, t0, 1 - v t0 over the constraints p0 >= 0, d >= 0,
/// p0 + (v-1) d < 1). Found by golden-section over p0 with d solved from
/// phi(p0, d) = phi* at each probe. `phi_of(p0, d)` must be increasing in d
/// and return None when infeasible.
fn calibrate_progression(
    phi_target: f64,
    vars: usize,
    phi_of: &mut dyn FnMut(f64, f64) -> Option<f64>,
    phi_tol: f64,
) -> Result<(f64, f64)> {
    let t0 = initial_point(phi_target);
    let top = (vars - 1) as f64;

    // feasible upper bound for p0: the largest p0 with phi(p0, 0) <= phi*
    let (mut lo_b, mut hi_b) = (1e-8, phi_target.min(0.9));
    for _ in 0..50 {
        let mid = 0.5 * (lo_b + hi_b);
        let ok = phi_of(mid, 0.0).map_or(false, |v| v <= phi_target);
        if ok {
            lo_b = mid;
        } else {
            hi_b = mid;
        }
    }
    let p0_max = lo_b;

    let d_tol = phi_tol * 0.1;
    let bar = |phi_of: &mut dyn FnMut(f64, f64) -> Option<f64>, p0: f64| -> f64 {
        match solve_d_on_curve(phi_of, p0, phi_target, top, d_tol) {
            Some(d) if d > 0.0 && p0 > 0.0 => {
                let slack = 1.0 - p0 - top * d;
                t0 * p0.ln() + t0 * d.ln() + (1.0 - vars as f64 * t0) * slack.ln()
                    + (vars as f64 - 2.0) * d
            }
            _ => f64::NEG_INFINITY,
        }
    };

    // golden-section maximisation over p0
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (1e-8, p0_max * 0.9999);
    let mut c = hi - golden * (hi - lo);
    let mut d_pt = lo + golden * (hi - lo);
    let mut fc = bar(phi_of, c);
    let mut fd = bar(phi_of, d_pt);
    for _ in 0..44 {
        if fc > fd {
            hi = d_pt;
            d_pt = c;
            fd = fc;
            c = hi - golden * (hi - lo);
            fc = bar(phi_of, c);
        } else {
            lo = c;
            c = d_pt;
            fc = fd;
            d_pt = lo + golden * (hi - lo);
            fd = bar(phi_of, d_pt);
        }
    }
    let p0 = 0.5 * (lo + hi);
    let d = solve_d_on_curve(phi_of, p0, phi_target, top, d_tol).ok_or_else(|| {
        Error::non_convergence("missingness calibration", "no feasible (p0, d) found")
    })?;
    Ok((p0, d))
}

/// Solve phi(p0, d) = phi_target for d by a bracketed secant; None when the
/// curve does not pass through this p0.
fn solve_d_on_curve(
    phi_of: &mut dyn FnMut(f64, f64) -> Option<f64>,
    p0: f64,
    phi_target: f64,
    top: f64,
    tol: f64,
) -> Option<f64> {
    let d_hi_bound = (1.0 - p0) / top - 1e-9;
    if d_hi_bound <= 0.0 {
        return None;
    }
    let phi_lo = phi_of(p0, 0.0)?;
    if phi_lo > phi_target {
        return None;
    }
    let phi_hi = match phi_of(p0, d_hi_bound) {
        Some(v) => v,
        // the top of the range can push marginal rates to the intercept
        // solver's limits; treat it as saturated
        None => 1.0,
    };
    if phi_hi < phi_target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, d_hi_bound);
    let (mut f_lo, mut f_hi) = (phi_lo - phi_target, phi_hi - phi_target);
    for _ in 0..100 {
        let mut mid = if (f_hi - f_lo).abs() > 1e-300 {
            lo - f_lo * (hi - lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let f_mid = phi_of(p0, mid)? - phi_target;
        if f_mid.abs() < tol {
            return Some(mid);
        }
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Choose (p0, d) so the MCAR incomplete-row probability over four variables
/// hits `phi_target` within 1e-4.
pub fn calibrate_mcar(phi_target: f64) -> Result<MissingnessPlan> {
    if !(phi_target > 0.0 && phi_target <= 0.95) {
        return Err(Error::InvalidParameter(format!(
            "phi_target {phi_target} outside (0, 0.95]"
        )));
    }
    let vars = 4usize;
    let mut phi_of = |p0: f64, d: f64| -> Option<f64> {
        let p = progression(p0, d, vars);
        if p.iter().any(|&x| !(0.0..1.0).contains(&x)) {
            return None;
        }
        Some(phi_mcar(&p))
    };
    let (p0, d) = calibrate_progression(phi_target, vars, &mut phi_of, 1e-6)?;
    let p = progression(p0, d, vars);
    let phi = phi_mcar(&p);
    if (phi - phi_target).abs() >= 1e-4 {
        return Err(Error::non_convergence(
            "MCAR calibration",
            format!("best residual |phi - phi*| = {:.3e}", (phi - phi_target).abs()),
        ));
    }
    Ok(MissingnessPlan {
        mechanism: Mechanism::Mcar,
        phi_target,
        p0,
        d,
        p,
        intercepts: None,
        phi_realised_calibration: phi,
    })
}

/// Solve for the intercept g0 with mean_j expit(g0 + eta_j) = target_p
/// (within 1e-8), searching [-20, 20].
pub fn solve_intercept(eta: &[f64], target_p: f64) -> Result<f64> {
    if !(target_p > 0.0 && target_p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target probability {target_p} outside (0,1)"
        )));
    }
    if eta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "solve_intercept: non-finite linear predictor".into(),
        ));
    }
    let n = eta.len() as f64;
    newton_bracketed(
        |g0| {
            let (mut f, mut df) = (0.0, 0.0);
            for &e in eta {
                let p = expit(g0 + e);
                f += p;
                df += p * (1.0 - p);
            }
            (f / n - target_p, df / n)
        },
        -20.0,
        20.0,
        1e-8,
        200,
    )
}

/// Parallel-sum variant used inside MAR calibration on large references.
fn solve_intercept_par(eta: &[f64], target_p: f64) -> Result<f64> {
    let n = eta.len() as f64;
    newton_bracketed(
        |g0| {
            let (f, df) = eta
                .par_chunks(65_536)
                .map(|chunk| {
                    let mut acc = (0.0, 0.0);
                    for &e in chunk {
                        let p = expit(g0 + e);
                        acc.0 += p;
                        acc.1 += p * (1.0 - p);
                    }
                    acc
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            (f / n - target_p, df / n)
        },
        -20.0,
        20.0,
        1e-8,
        200,
    )
}

/// Linear predictors of the missingness models, parents with unit
/// coefficients: c2 <- c1; c3 <- c1,c2; a <- c1,c2,c3; y <- c1,c2,c3,a.
/// With `ampute_exposure = false` the amputed set is (c2, c3, y); the
/// y-model still conditions on the fully observed exposure.
fn mar_linear_predictors(ds: &Dataset, ampute_exposure: bool) -> Vec<Vec<f64>> {
    let n = ds.n;
    let mut eta_c2 = Vec::with_capacity(n);
    let mut eta_c3 = Vec::with_capacity(n);
    let mut eta_a = Vec::with_capacity(n);
    let mut eta_y = Vec::with_capacity(n);
    for i in 0..n {
        let c1 = ds.c1[i] as f64;
        let c2 = ds.c2[i];
        let c3 = ds.c3[i];
        let a = ds.a[i] as f64;
        eta_c2.push(c1);
        eta_c3.push(c1 + c2);
        eta_a.push(c1 + c2 + c3);
        eta_y.push(c1 + c2 + c3 + a);
    }
    if ampute_exposure {
        vec![eta_c2, eta_c3, eta_a, eta_y]
    } else {
        vec![eta_c2, eta_c3, eta_y]
    }
}

fn phi_mar_hat(etas: &[Vec<f64>], intercepts: &[f64]) -> f64 {
    let n = etas[0].len();
    let k = etas.len();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut keep = 1.0;
            for i in 0..k {
                keep *= 1.0 - expit(intercepts[i] + etas[i][j]);
            }
            1.0 - keep
        })
        .sum::<f64>()
        / n as f64
}

/// Calibrate a MAR plan on a complete reference dataset: the outer search
/// over (p0, d) solves the per-variable intercepts and matches the Monte
/// Carlo estimate of the incomplete-row share to `phi_target` within 1e-3.
pub fn calibrate_mar(
    phi_target: f64,
    reference: &Dataset,
    ampute_exposure: bool,
) -> Result<MissingnessPlan> {
    if !(phi_target > 0.0 && phi_target <= 0.95) {
        return Err(Error::InvalidParameter(format!(
            "phi_target {phi_target} outside (0, 0.95]"
        )));
    }
    if !reference.is_complete() {
        return Err(Error::InvalidParameter(
            "MAR calibration requires a complete reference dataset".into(),
        ));
    }
    let etas = mar_linear_predictors(reference, ampute_exposure);
    let vars = etas.len();

    let solve_all = |p: &[f64]| -> Result<Vec<f64>> {
        p.iter()
            .enumerate()
            .map(|(i, &pi)| solve_intercept_par(&etas[i], pi))
            .collect()
    };

    let mut phi_of = |p0: f64, d: f64| -> Option<f64> {
        let p = progression(p0, d, vars);
        if p.iter().any(|&pi| !(0.0 < pi && pi < 1.0)) {
            return None;
        }
        let g = solve_all(&p).ok()?;
        Some(phi_mar_hat(&etas, &g))
    };
    let (p0, d) = calibrate_progression(phi_target, vars, &mut phi_of, 1e-5)?;
    let p = progression(p0, d, vars);
    let intercepts = solve_all(&p)?;
    let phi = phi_mar_hat(&etas, &intercepts);
    if (phi - phi_target).abs() >= 1e-3 {
        return Err(Error::non_convergence(
            "MAR calibration",
            format!("best residual |phi - phi*| = {:.3e}", (phi - phi_target).abs()),
        ));
    }
    Ok(MissingnessPlan {
        mechanism: if ampute_exposure {
            Mechanism::Mar
        } else {
            Mechanism::MarNoExposure
        },
        phi_target,
        p0,
        d,
        p,
        intercepts: Some(intercepts),
        phi_realised_calibration: phi,
    })
}

/// Apply a calibrated plan to a complete dataset, masking values in the
/// variable order (c2, c3, a, y). c1 is never amputed.
pub fn ampute(ds: &Dataset, plan: &MissingnessPlan, rng: &mut RngStream) -> Result<Dataset> {
    if !ds.is_complete() {
        return Err(Error::InvalidParameter(
            "ampute requires a complete dataset".into(),
        ));
    }
    let expected_vars = match plan.mechanism {
        Mechanism::Mcar | Mechanism::Mar => 4,
        Mechanism::MarNoExposure => 3,
    };
    if plan.p.len() != expected_vars {
        return Err(Error::InvalidParameter(format!(
            "plan/mechanism mismatch: {} expects {expected_vars} amputed variables, plan has {}",
            plan.mechanism,
            plan.p.len()
        )));
    }
    if matches!(plan.mechanism, Mechanism::Mar | Mechanism::MarNoExposure)
        && plan.intercepts.is_none()
    {
        return Err(Error::InvalidParameter(
            "plan/mechanism mismatch: MAR plan lacks intercepts".into(),
        ));
    }

    let mut out = ds.clone();
    let n = ds.n;
    match plan.mechanism {
        Mechanism::Mcar => {
            for i in 0..n {
                out.miss_c2[i] = rng.bernoulli(plan.p[0])?;
            }
            for i in 0..n {
                out.miss_c3[i] = rng.bernoulli(plan.p[1])?;
            }
            for i in 0..n {
                out.miss_a[i] = rng.bernoulli(plan.p[2])?;
            }
            for i in 0..n {
                out.miss_y[i] = rng.bernoulli(plan.p[3])?;
            }
        }
        Mechanism::Mar | Mechanism::MarNoExposure => {
            let g = plan.intercepts.as_ref().unwrap();
            let etas = mar_linear_predictors(ds, plan.mechanism == Mechanism::Mar);
            let masks: Vec<&mut Vec<bool>> = if plan.mechanism == Mechanism::Mar {
                vec![
                    &mut out.miss_c2,
                    &mut out.miss_c3,
                    &mut out.miss_a,
                    &mut out.miss_y,
                ]
            } else {
                vec![&mut out.miss_c2, &mut out.miss_c3, &mut out.miss_y]
            };
            for (v, mask) in masks.into_iter().enumerate() {
                for i in 0..n {
                    mask[i] = rng.bernoulli(expit(g[v] + etas[v][i]))?;
                }
            }
        }
    }
    // zero out masked cells so stale values cannot leak
    for i in 0..n {
        if out.miss_c2[i] {
            out.c2[i] = 0.0;
        }
        if out.miss_c3[i] {
            out.c3[i] = 0.0;
        }
        if out.miss_a[i] {
            out.a[i] = 0;
        }
        if out.miss_y[i] {
            out.y[i] = 0;
        }
    }
    Ok(out)
}
