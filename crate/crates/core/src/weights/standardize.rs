//! Exposure standardisation and covariate orthogonalisation for the
//! balance-based estimators.

use ndarray::{Array1, Array2};

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Standardised exposure A* (mean 0, SD 1) and whitened covariates C*
/// (centered, sample covariance = identity), with the transforms retained.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    pub a_star: Array1<f64>,
    pub c_star: Array2<f64>,
    pub a_mean: f64,
    pub a_sd: f64,
    pub c_means: Vec<f64>,
    /// Inverse-Cholesky whitening transform: c_star = (c - mean) * W'.
    pub whitening: Array2<f64>,
}

/// Build the standardised design from a complete dataset. Sample moments use
/// the n-1 denominator.
pub fn standardized_design(ds: &Dataset) -> Result<StandardizedDesign> {
    if !ds.is_complete() {
        return Err(Error::InvalidParameter(
            "standardisation requires complete data".into(),
        ));
    }
    let n = ds.n;
    if n < 3 {
        return Err(Error::InvalidParameter("need at least 3 rows".into()));
    }
    let nf = n as f64;

    let a: Vec<f64> = ds.a.iter().map(|&v| v as f64).collect();
    let a_mean = a.iter().sum::<f64>() / nf;
    let a_var = a.iter().map(|x| (x - a_mean) * (x - a_mean)).sum::<f64>() / (nf - 1.0);
    if a_var == 0.0 {
        return Err(Error::InvalidParameter("constant exposure".into()));
    }
    let a_sd = a_var.sqrt();
    let a_star = Array1::from_iter(a.iter().map(|x| (x - a_mean) / a_sd));

    let cols: [&[f64]; 3] = [
        &ds.c1.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        &ds.c2,
        &ds.c3,
    ];
    let c_means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let mut centered = Array2::<f64>::zeros((n, 3));
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            centered[[i, j]] = col[i] - c_means[j];
        }
    }
    let mut cov = Array2::<f64>::zeros((3, 3));
    for j in 0..3 {
        for k in 0..=j {
            let mut s = 0.0;
            for i in 0..n {
                s += centered[[i, j]] * centered[[i, k]];
            }
            cov[[j, k]] = s / (nf - 1.0);
            cov[[k, j]] = cov[[j, k]];
        }
    }
    let l = linalg::cholesky(&cov)
        .map_err(|e| Error::Linalg(format!("covariate covariance not PD: {e}")))?;
    // whitening W = L^-1 so that cov(c W') = I
    let mut w = Array2::<f64>::zeros((3, 3));
    for j in 0..3 {
        let mut e = Array1::<f64>::zeros(3);
        e[j] = 1.0;
        let col = linalg::forward_substitute(&l, &e);
        for i in 0..3 {
            w[[i, j]] = col[i];
        }
    }
    let c_star = centered.dot(&w.t());
    Ok(StandardizedDesign {
        a_star,
        c_star,
        a_mean,
        a_sd,
        c_means,
        whitening: w,
    })
}

/// Per-column standardisation (mean 0, SD 1 with the n-1 denominator) of the
/// covariate block, used where scale-free distances are needed without
/// orthogonalisation.
pub fn standardize_columns(ds: &Dataset) -> Result<Array2<f64>> {
    if !ds.is_complete() {
        return Err(Error::InvalidParameter(
            "standardisation requires complete data".into(),
        ));
    }
    let n = ds.n;
    let nf = n as f64;
    let cols: [Vec<f64>; 3] = [
        ds.c1.iter().map(|&v| v as f64).collect(),
        ds.c2.clone(),
        ds.c3.clone(),
    ];
    let mut out = Array2::<f64>::zeros((n, 3));
    for (j, col) in cols.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
        if var == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "covariate {j} is constant"
            )));
        }
        let sd = var.sqrt();
        for i in 0..n {
            out[[i, j]] = (col[i] - mean) / sd;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::ExposureDgm;
    use crate::dgm::{default_params, generate_dataset};
    use crate::rng::RngStream;

    #[test]
    fn design_is_standardised_and_white() {
        let params = default_params(ExposureDgm::NegBin, 1.1).unwrap();
        let mut rng = RngStream::substream(61, 0);
        let ds = generate_dataset(3000, &params, &mut rng).unwrap();
        let sd = standardized_design(&ds).unwrap();
        let n = ds.n as f64;
        let mean = sd.a_star.sum() / n;
        assert!(mean.abs() < 1e-10, "mean(a*) = {mean}");
        let var = sd.a_star.iter().map(|x| x * x).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 1e-10, "var(a*) = {var}");
        // sample covariance of c_star equals identity
        for j in 0..3 {
            for k in 0..=j {
                let mut s = 0.0;
                for i in 0..ds.n {
                    s += sd.c_star[[i, j]] * sd.c_star[[i, k]];
                }
                s /= n - 1.0;
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-8, "cov[{j},{k}] = {s}");
            }
        }
    }

    #[test]
    fn column_standardisation_unit_variance() {
        let params = default_params(ExposureDgm::Poisson, 1.0).unwrap();
        let mut rng = RngStream::substream(62, 0);
        let ds = generate_dataset(800, &params, &mut rng).unwrap();
        let c = standardize_columns(&ds).unwrap();
        let n = ds.n as f64;
        for j in 0..3 {
            let mean: f64 = c.column(j).sum() / n;
            let var: f64 = c.column(j).iter().map(|x| x * x).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }
}
