//! Multiple imputation by chained equations: predictive mean matching for
//! the continuous covariates and the count exposure, Bayesian logistic
//! imputation for the binary outcome. Each of the m imputations is an
//! independent chain seeded from its own substream.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::glm::{fit_glm, fit_glm_ridged, Family};
use crate::linalg;
use crate::rng::RngStream;
use crate::stats::expit;

const PMM_DONORS: usize = 5;

/// A set of m completed datasets from one incomplete input.
#[derive(Debug, Clone)]
pub struct ImputationSet {
    pub m: usize,
    pub completed: Vec<Dataset>,
    /// Share of incomplete rows in the input.
    pub phi_realised: f64,
    pub cycles: usize,
}

/// Number of imputations: 100 x the realised incomplete-row share, rounded,
/// floored at 2 and clamped to `m_cap`. Complete data are the caller's
/// business (no imputation at all).
pub fn choose_m(ds: &Dataset, m_cap: usize) -> usize {
    let phi = ds.phi_realised();
    let m = (100.0 * phi).round() as usize;
    m.max(2).min(m_cap)
}

/// Predictive mean matching for one variable. `x` must be complete (current
/// working values of the other variables plus an intercept); rows of
/// `target` with `missing[i]` are imputed from the k nearest observed rows
/// by predicted mean. The regression draw is Bayesian: sigma^2 from a
/// scaled inverse chi-square, beta from its normal posterior; observed-row
/// predictions use the posterior mode (type-1 matching).
pub fn pmm_impute_variable(
    target: &[f64],
    missing: &[bool],
    x: &Array2<f64>,
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let n = target.len();
    let p = x.ncols();
    if missing.len() != n || x.nrows() != n {
        return Err(Error::InvalidParameter("pmm: length mismatch".into()));
    }
    let obs_idx: Vec<usize> = (0..n).filter(|&i| !missing[i]).collect();
    let mis_idx: Vec<usize> = (0..n).filter(|&i| missing[i]).collect();
    if mis_idx.is_empty() {
        return Ok(target.to_vec());
    }
    if obs_idx.len() < p + 1 {
        return Err(Error::InvalidParameter(format!(
            "pmm: {} observed rows cannot support {p} predictors",
            obs_idx.len()
        )));
    }
    if obs_idx.len() < k {
        return Err(Error::InvalidParameter(format!(
            "pmm: fewer observed rows ({}) than donors ({k})",
            obs_idx.len()
        )));
    }

    // least squares on the observed rows
    let n_obs = obs_idx.len();
    let mut xtx = Array2::<f64>::zeros((p, p));
    let mut xty = Array1::<f64>::zeros(p);
    for &i in &obs_idx {
        let row = x.row(i);
        for a in 0..p {
            xty[a] += row[a] * target[i];
            for b in 0..=a {
                xtx[[a, b]] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[[b, a]] = xtx[[a, b]];
        }
    }
    let beta_hat = linalg::solve_spd(&xtx, &xty)?;
    let mut rss = 0.0;
    for &i in &obs_idx {
        let mut pred = 0.0;
        for a in 0..p {
            pred += x[[i, a]] * beta_hat[a];
        }
        rss += (target[i] - pred) * (target[i] - pred);
    }
    let df = (n_obs - p).max(1) as f64;

    // sigma2* ~ rss / chi2_df, via chi2 = Gamma(df/2, scale 2)
    let chi2 = rng.gamma(0.5 * df, 2.0)?.max(1e-12);
    let sigma2_star = (rss / chi2).max(1e-300);
    // beta* ~ N(beta_hat, sigma2* (X'X)^-1)
    let xtx_inv = linalg::inv_spd(&xtx)?;
    let l = linalg::cholesky_psd(&xtx_inv)?;
    let z: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
    let mut beta_star = beta_hat.clone();
    let sd = sigma2_star.sqrt();
    for a in 0..p {
        let mut s = 0.0;
        for (b, zb) in z.iter().enumerate().take(a + 1) {
            s += l[[a, b]] * zb;
        }
        beta_star[a] += sd * s;
    }

    // observed predictions under beta_hat, sorted for donor search
    let mut obs_pred: Vec<(f64, usize)> = obs_idx
        .iter()
        .map(|&i| {
            let mut pred = 0.0;
            for a in 0..p {
                pred += x[[i, a]] * beta_hat[a];
            }
            (pred, i)
        })
        .collect();
    obs_pred.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut out = target.to_vec();
    for &i in &mis_idx {
        let mut pred = 0.0;
        for a in 0..p {
            pred += x[[i, a]] * beta_star[a];
        }
        // k nearest observed predictions around the insertion point
        let pos = obs_pred.partition_point(|&(v, _)| v < pred);
        let mut lo = pos;
        let mut hi = pos; // candidates are obs_pred[lo..hi]
        for _ in 0..k {
            let take_left = if lo == 0 {
                false
            } else if hi >= obs_pred.len() {
                true
            } else {
                (pred - obs_pred[lo - 1].0) <= (obs_pred[hi].0 - pred)
            };
            if take_left {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let pick = lo + rng.pick(hi - lo);
        out[i] = target[obs_pred[pick].1];
    }
    Ok(out)
}

/// Bayesian logistic imputation of a binary variable: fit on the observed
/// rows, draw beta from N(beta_hat, cov_model), impute Bernoulli draws.
/// Separation falls back to a ridge-stabilised fit.
pub fn logistic_impute_variable(
    target: &[f64],
    missing: &[bool],
    x: &Array2<f64>,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let n = target.len();
    let p = x.ncols();
    let obs_idx: Vec<usize> = (0..n).filter(|&i| !missing[i]).collect();
    let mis_idx: Vec<usize> = (0..n).filter(|&i| missing[i]).collect();
    if mis_idx.is_empty() {
        return Ok(target.to_vec());
    }
    let n_obs = obs_idx.len();
    let ones: usize = obs_idx.iter().filter(|&&i| target[i] == 1.0).count();
    if ones == 0 || ones == n_obs {
        return Err(Error::InvalidParameter(
            "logistic imputation requires both classes among observed rows".into(),
        ));
    }

    let mut x_obs = Array2::<f64>::zeros((n_obs, p));
    let mut y_obs = Array1::<f64>::zeros(n_obs);
    for (r, &i) in obs_idx.iter().enumerate() {
        y_obs[r] = target[i];
        for c in 0..p {
            x_obs[[r, c]] = x[[i, c]];
        }
    }
    let w = Array1::from_elem(n_obs, 1.0);
    let fit = fit_glm(&x_obs, &y_obs, Family::BinomialLogit, &w, false)?;
    let fit = if fit.converged && linalg::inf_norm(&fit.coefficients) < 15.0 {
        fit
    } else {
        // separation: ridge-stabilised refit
        fit_glm_ridged(&x_obs, &y_obs, Family::BinomialLogit, &w, false, 1e-2 * n_obs as f64 / 100.0)?
    };

    let l = linalg::cholesky_psd(&fit.cov_model)?;
    let z: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
    let mut beta_star = fit.coefficients.clone();
    for a in 0..p {
        let mut s = 0.0;
        for (b, zb) in z.iter().enumerate().take(a + 1) {
            s += l[[a, b]] * zb;
        }
        beta_star[a] += s;
    }

    let mut out = target.to_vec();
    for &i in &mis_idx {
        let mut eta = 0.0;
        for a in 0..p {
            eta += x[[i, a]] * beta_star[a];
        }
        out[i] = if rng.bernoulli(expit(eta))? { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Run chained-equation imputation: m independent chains, each starting
/// from random draws of observed values and sweeping (c2, c3, a, y) for
/// `cycles` rounds, each variable regressed on all four others.
pub fn mice_impute(
    ds: &Dataset,
    m: usize,
    cycles: usize,
    stream: &RngStream,
) -> Result<ImputationSet> {
    if ds.missing_cells() == 0 {
        return Err(Error::InvalidParameter(
            "nothing to impute: dataset is complete".into(),
        ));
    }
    if m < 1 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    // y needs both classes observed for the logistic model
    let completed: Result<Vec<Dataset>> = (0..m)
        .into_par_iter()
        .map(|chain| run_chain(ds, cycles, &mut stream.child(1000 + chain as u64)))
        .collect();
    let completed = completed?;
    Ok(ImputationSet {
        m,
        completed,
        phi_realised: ds.phi_realised(),
        cycles,
    })
}

fn run_chain(ds: &Dataset, cycles: usize, rng: &mut RngStream) -> Result<Dataset> {
    let n = ds.n;
    let mut c2: Vec<f64> = ds.c2.clone();
    let mut c3: Vec<f64> = ds.c3.clone();
    let mut a: Vec<f64> = ds.a.iter().map(|&v| v as f64).collect();
    let mut y: Vec<f64> = ds.y.iter().map(|&v| v as f64).collect();

    // initial fill: random draws from each variable's observed values
    init_fill(&mut c2, &ds.miss_c2, rng)?;
    init_fill(&mut c3, &ds.miss_c3, rng)?;
    init_fill(&mut a, &ds.miss_a, rng)?;
    init_fill(&mut y, &ds.miss_y, rng)?;

    let c1: Vec<f64> = ds.c1.iter().map(|&v| v as f64).collect();
    let design = |v1: &[f64], v2: &[f64], v3: &[f64]| -> Array2<f64> {
        let mut x = Array2::<f64>::zeros((n, 5));
        for i in 0..n {
            x[[i, 0]] = 1.0;
            x[[i, 1]] = c1[i];
            x[[i, 2]] = v1[i];
            x[[i, 3]] = v2[i];
            x[[i, 4]] = v3[i];
        }
        x
    };

    for _ in 0..cycles {
        if ds.miss_c2.iter().any(|&miss| miss) {
            let x = design(&c3, &a, &y);
            c2 = pmm_impute_variable(&c2, &ds.miss_c2, &x, PMM_DONORS, rng)?;
        }
        if ds.miss_c3.iter().any(|&miss| miss) {
            let x = design(&c2, &a, &y);
            c3 = pmm_impute_variable(&c3, &ds.miss_c3, &x, PMM_DONORS, rng)?;
        }
        if ds.miss_a.iter().any(|&miss| miss) {
            let x = design(&c2, &c3, &y);
            a = pmm_impute_variable(&a, &ds.miss_a, &x, PMM_DONORS, rng)?;
        }
        if ds.miss_y.iter().any(|&miss| miss) {
            let x = design(&c2, &c3, &a);
            y = logistic_impute_variable(&y, &ds.miss_y, &x, rng)?;
        }
    }

    let mut out = Dataset::complete(
        ds.c1.clone(),
        c2,
        c3,
        a.iter().map(|&v| v.round() as u32).collect(),
        y.iter().map(|&v| v as u8).collect(),
    );
    out.true_lambda = ds.true_lambda.clone();
    out.true_pi = ds.true_pi.clone();
    Ok(out)
}

fn init_fill(values: &mut [f64], missing: &[bool], rng: &mut RngStream) -> Result<()> {
    let observed: Vec<f64> = values
        .iter()
        .zip(missing)
        .filter(|&(_, &miss)| !miss)
        .map(|(&v, _)| v)
        .collect();
    if observed.is_empty() && missing.iter().any(|&miss| miss) {
        return Err(Error::InvalidParameter(
            "cannot impute a variable with no observed values".into(),
        ));
    }
    for i in 0..values.len() {
        if missing[i] {
            values[i] = observed[rng.pick(observed.len())];
        }
    }
    Ok(())
}
