//! Data-generating mechanisms: correlated covariates, a truncated negative
//! binomial or Poisson count exposure with log-linear conditional mean, and
//! a log-binomial binary outcome.

use ndarray::Array2;

use crate::data_model::{Dataset, ExposureDgm};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;

const MAX_REDRAWS_PER_ROW: usize = 1_000_000;

/// All generative constants for one scenario.
#[derive(Debug, Clone)]
pub struct DgmParams {
    /// Exposure log-mean coefficients (intercept, c1, c2, c3).
    pub beta: [f64; 4],
    /// Outcome log-probability coefficients (intercept, a, c1, c2, c3).
    pub gamma: [f64; 5],
    /// Negative binomial dispersion; unused under the Poisson mechanism.
    pub k: f64,
    pub sigma: Array2<f64>,
    pub a_max: u32,
    pub exposure_dgm: ExposureDgm,
}

/// Default parameter set: beta = (ln 1.5, 0.4, 0.1, 0.1),
/// gamma = (ln 0.03, ln true_rr, ln 1.4, ln 1.1, ln 1.1), k = 1.3,
/// unit-variance covariates with pairwise correlation 0.3, a_max = 10.
pub fn default_params(exposure_dgm: ExposureDgm, true_rr: f64) -> Result<DgmParams> {
    if !(true_rr > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "true_rr must be positive, got {true_rr}"
        )));
    }
    let mut sigma = Array2::<f64>::from_elem((3, 3), 0.3);
    for i in 0..3 {
        sigma[[i, i]] = 1.0;
    }
    Ok(DgmParams {
        beta: [1.5f64.ln(), 0.4, 0.1, 0.1],
        gamma: [0.03f64.ln(), true_rr.ln(), 1.4f64.ln(), 1.1f64.ln(), 1.1f64.ln()],
        k: 1.3,
        sigma,
        a_max: 10,
        exposure_dgm,
    })
}

/// Draw n covariate triples: multivariate normal with covariance
/// `params.sigma`, then c1 dichotomised at zero.
pub fn generate_covariates(
    n: usize,
    params: &DgmParams,
    rng: &mut RngStream,
) -> Result<(Vec<u8>, Vec<f64>, Vec<f64>)> {
    let l = linalg::cholesky_psd(&params.sigma)?;
    let mean = [0.0; 3];
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    let mut c3 = Vec::with_capacity(n);
    for _ in 0..n {
        let v = rng.mvn_with_factor(&mean, &l);
        c1.push(if v[0] > 0.0 { 1 } else { 0 });
        c2.push(v[1]);
        c3.push(v[2]);
    }
    Ok((c1, c2, c3))
}

/// Exposure draw: counts, true conditional means, and how many rows needed
/// truncation redraws.
#[derive(Debug, Clone)]
pub struct ExposureDraw {
    pub a: Vec<u32>,
    pub true_lambda: Vec<f64>,
    /// Rows whose first draw exceeded a_max and were resampled.
    pub redrawn_rows: usize,
}

/// Sample the count exposure conditionally on the covariates, rejecting and
/// redrawing any value above `params.a_max` (only the offending row's
/// exposure is redrawn).
pub fn generate_exposure(
    c1: &[u8],
    c2: &[f64],
    c3: &[f64],
    params: &DgmParams,
    rng: &mut RngStream,
) -> Result<ExposureDraw> {
    let n = c1.len();
    let mut a = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut redrawn_rows = 0usize;
    for i in 0..n {
        let eta = params.beta[0]
            + params.beta[1] * c1[i] as f64
            + params.beta[2] * c2[i]
            + params.beta[3] * c3[i];
        let lam = eta.exp();
        let mut redraws = 0usize;
        let value = loop {
            let draw = match params.exposure_dgm {
                ExposureDgm::NegBin => rng.neg_binomial(lam, params.k)?,
                ExposureDgm::Poisson => rng.poisson(lam)?,
            };
            if draw <= params.a_max as u64 {
                break draw as u32;
            }
            redraws += 1;
            if redraws >= MAX_REDRAWS_PER_ROW {
                return Err(Error::InvalidParameter(format!(
                    "row {i}: exposure rejection sampling exceeded {MAX_REDRAWS_PER_ROW} redraws \
                     (lambda = {lam:.3}); parameters look pathological"
                )));
            }
        };
        if redraws > 0 {
            redrawn_rows += 1;
        }
        a.push(value);
        lambda.push(lam);
    }
    Ok(ExposureDraw {
        a,
        true_lambda: lambda,
        redrawn_rows,
    })
}

/// Bernoulli outcome from the log-binomial model. Errors if any row's
/// probability reaches 1 (coefficients are chosen so this cannot happen for
/// sane configurations).
pub fn generate_outcome(
    c1: &[u8],
    c2: &[f64],
    c3: &[f64],
    a: &[u32],
    params: &DgmParams,
    rng: &mut RngStream,
) -> Result<(Vec<u8>, Vec<f64>)> {
    let n = c1.len();
    let mut y = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    for i in 0..n {
        let ln_pi = params.gamma[0]
            + params.gamma[1] * a[i] as f64
            + params.gamma[2] * c1[i] as f64
            + params.gamma[3] * c2[i]
            + params.gamma[4] * c3[i];
        let p = ln_pi.exp();
        if p >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "row {i}: outcome probability {p:.4} >= 1; outcome coefficients are misconfigured"
            )));
        }
        pi.push(p);
        y.push(if rng.bernoulli(p)? { 1 } else { 0 });
    }
    Ok((y, pi))
}

/// Generate a complete dataset of `n` rows, storing the true intermediates.
pub fn generate_dataset(n: usize, params: &DgmParams, rng: &mut RngStream) -> Result<Dataset> {
    let (c1, c2, c3) = generate_covariates(n, params, rng)?;
    let exposure = generate_exposure(&c1, &c2, &c3, params, rng)?;
    let (y, pi) = generate_outcome(&c1, &c2, &c3, &exposure.a, params, rng)?;
    let mut ds = Dataset::complete(c1, c2, c3, exposure.a, y);
    ds.true_lambda = Some(exposure.true_lambda);
    ds.true_pi = Some(pi);
    ds.validate(Some(params.a_max))?;
    Ok(ds)
}
