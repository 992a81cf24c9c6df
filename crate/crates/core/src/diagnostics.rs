//! Weight-quality metrics: effective sample size, weighted exposure-covariate
//! correlations, energy distances between weighted and unweighted marginals,
//! weighted distance covariance, and the composite dependence metric shared
//! with the energy-weight optimizer.
//!
//! All metrics normalise the weights to mean 1 first, so they are invariant
//! to rescaling the weight vector.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Summary of one weight vector against its dataset.
#[derive(Debug, Clone)]
pub struct WeightDiagnostics {
    /// Effective sample size (sum w)^2 / sum w^2.
    pub ess: f64,
    /// Absolute weighted exposure-covariate correlation per covariate.
    pub rho_w: Vec<f64>,
    /// Mean of `rho_w` across covariates.
    pub mean_abs_rho: f64,
    /// Composite dependence metric D(w); the energy optimizer's objective.
    pub d_w: f64,
    /// Energy distance between weighted and unweighted marginal of A.
    pub eps_a: f64,
    /// Energy distance for the covariates, averaged per covariate.
    pub eps_c: f64,
    /// Weighted distance covariance between covariates and exposure.
    pub dcov_w: f64,
}

impl WeightDiagnostics {
    /// Field-wise mean across imputations or replications.
    pub fn mean_of(items: &[WeightDiagnostics]) -> Option<WeightDiagnostics> {
        if items.is_empty() {
            return None;
        }
        let k = items.len() as f64;
        let n_cov = items[0].rho_w.len();
        let mut rho = vec![0.0; n_cov];
        for it in items {
            for (j, r) in it.rho_w.iter().enumerate() {
                rho[j] += r / k;
            }
        }
        Some(WeightDiagnostics {
            ess: items.iter().map(|i| i.ess).sum::<f64>() / k,
            rho_w: rho,
            mean_abs_rho: items.iter().map(|i| i.mean_abs_rho).sum::<f64>() / k,
            d_w: items.iter().map(|i| i.d_w).sum::<f64>() / k,
            eps_a: items.iter().map(|i| i.eps_a).sum::<f64>() / k,
            eps_c: items.iter().map(|i| i.eps_c).sum::<f64>() / k,
            dcov_w: items.iter().map(|i| i.dcov_w).sum::<f64>() / k,
        })
    }
}

/// One row of the balance report: distributional summaries of the
/// diagnostics for one (method, winsorised) group across datasets.
#[derive(Debug, Clone)]
pub struct BalanceRow {
    pub method: crate::data_model::MethodId,
    pub winsorised: bool,
    pub n_datasets: usize,
    pub ess_mean: f64,
    pub ess_sd: f64,
    pub ess_p5: f64,
    pub ess_p95: f64,
    pub d_w_mean: f64,
    pub d_w_sd: f64,
    pub eps_a_mean: f64,
    pub eps_c_mean: f64,
    pub rho_mean: f64,
    pub rho_sd: f64,
    pub rho_p95: f64,
    pub rho_max: f64,
}

pub const BALANCE_CSV_HEADER: &str = "method,winsorised,n_datasets,ess_mean,ess_sd,ess_p5,ess_p95,d_w_mean,d_w_sd,eps_a_mean,eps_c_mean,rho_mean,rho_sd,rho_p95,rho_max";

impl BalanceRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.winsorised as u8,
            self.n_datasets,
            self.ess_mean,
            self.ess_sd,
            self.ess_p5,
            self.ess_p95,
            self.d_w_mean,
            self.d_w_sd,
            self.eps_a_mean,
            self.eps_c_mean,
            self.rho_mean,
            self.rho_sd,
            self.rho_p95,
            self.rho_max,
        )
    }
}

/// Assemble the balance table from per-dataset diagnostics, grouped by
/// (method, winsorised). The per-dataset |rho| entering the summaries is
/// already the mean across covariates.
pub fn balance_report(
    entries: &[(crate::data_model::MethodId, bool, WeightDiagnostics)],
) -> Vec<BalanceRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(crate::data_model::MethodId, bool), Vec<&WeightDiagnostics>> =
        BTreeMap::new();
    for (method, winsorised, diag) in entries {
        groups.entry((*method, *winsorised)).or_default().push(diag);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = |xs: &[f64]| {
        if xs.len() < 2 {
            return 0.0;
        }
        let m = mean(xs);
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
    };
    groups
        .into_iter()
        .map(|((method, winsorised), diags)| {
            let ess: Vec<f64> = diags.iter().map(|d| d.ess).collect();
            let dw: Vec<f64> = diags.iter().map(|d| d.d_w).collect();
            let eps_a: Vec<f64> = diags.iter().map(|d| d.eps_a).collect();
            let eps_c: Vec<f64> = diags.iter().map(|d| d.eps_c).collect();
            let rho: Vec<f64> = diags.iter().map(|d| d.mean_abs_rho).collect();
            BalanceRow {
                method,
                winsorised,
                n_datasets: diags.len(),
                ess_mean: mean(&ess),
                ess_sd: sd(&ess),
                ess_p5: crate::stats::quantile_type7(&ess, 0.05),
                ess_p95: crate::stats::quantile_type7(&ess, 0.95),
                d_w_mean: mean(&dw),
                d_w_sd: sd(&dw),
                eps_a_mean: mean(&eps_a),
                eps_c_mean: mean(&eps_c),
                rho_mean: mean(&rho),
                rho_sd: sd(&rho),
                rho_p95: crate::stats::quantile_type7(&rho, 0.95),
                rho_max: rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Effective sample size (sum w)^2 / sum w^2.
pub fn ess(w: &[f64]) -> Result<f64> {
    let sum: f64 = w.iter().sum();
    let sum2: f64 = w.iter().map(|x| x * x).sum();
    if sum2 == 0.0 {
        return Err(Error::InvalidParameter("ess of all-zero weights".into()));
    }
    Ok(sum * sum / sum2)
}

fn normalise_mean_one(w: &[f64]) -> Result<Vec<f64>> {
    let n = w.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty weight vector".into()));
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidParameter(
            "weights must have positive mean".into(),
        ));
    }
    Ok(w.iter().map(|x| x / mean).collect())
}

/// Weighted covariance of (a, c) divided by the product of the UNWEIGHTED
/// standard deviations. Weights are normalised to mean 1; all moments use
/// 1/n denominators, so uniform weights give the classical Pearson
/// correlation. Can exceed 1 in magnitude when weights are extreme.
pub fn weighted_correlation(a: &[f64], c: &[f64], w: &[f64]) -> Result<f64> {
    let n = a.len();
    if c.len() != n || w.len() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "weighted_correlation: length mismatch".into(),
        ));
    }
    let w = normalise_mean_one(w)?;
    let nf = n as f64;
    let a_mean_w = a.iter().zip(&w).map(|(x, wi)| wi * x).sum::<f64>() / nf;
    let c_mean_w = c.iter().zip(&w).map(|(x, wi)| wi * x).sum::<f64>() / nf;
    let cov_w = (0..n)
        .map(|i| w[i] * (a[i] - a_mean_w) * (c[i] - c_mean_w))
        .sum::<f64>()
        / nf;
    let a_mean = a.iter().sum::<f64>() / nf;
    let c_mean = c.iter().sum::<f64>() / nf;
    let sd_a = (a.iter().map(|x| (x - a_mean) * (x - a_mean)).sum::<f64>() / nf).sqrt();
    let sd_c = (c.iter().map(|x| (x - c_mean) * (x - c_mean)).sum::<f64>() / nf).sqrt();
    if sd_a == 0.0 || sd_c == 0.0 {
        return Err(Error::InvalidParameter(
            "weighted_correlation: zero unweighted standard deviation".into(),
        ));
    }
    Ok(cov_w / (sd_a * sd_c))
}

/// Rows of a scalar or vector sample as a distance source.
#[derive(Clone, Copy)]
pub enum Rows<'a> {
    Scalar(&'a [f64]),
    Matrix(ArrayView2<'a, f64>),
}

impl<'a> Rows<'a> {
    fn len(&self) -> usize {
        match self {
            Rows::Scalar(v) => v.len(),
            Rows::Matrix(m) => m.nrows(),
        }
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        match self {
            Rows::Scalar(v) => (v[i] - v[j]).abs(),
            Rows::Matrix(m) => {
                let (ri, rj) = (m.row(i), m.row(j));
                ri.iter()
                    .zip(rj.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }
}

/// Energy distance between the w-weighted and unweighted empirical
/// distributions of `x`:
/// (2/n^2) sum_ij w_i d_ij - (1/n^2) sum_ij w_i w_j d_ij - (1/n^2) sum_ij d_ij.
pub fn energy_distance_weighted(x: Rows<'_>, w: &[f64]) -> Result<f64> {
    let n = x.len();
    if w.len() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "energy_distance_weighted: length mismatch".into(),
        ));
    }
    let w = normalise_mean_one(w)?;
    let mut cross = 0.0; // sum_ij w_i d_ij
    let mut both = 0.0; // sum_ij w_i w_j d_ij
    let mut plain = 0.0; // sum_ij d_ij
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x.dist(i, j);
            cross += (w[i] + w[j]) * d;
            both += 2.0 * w[i] * w[j] * d;
            plain += 2.0 * d;
        }
    }
    let n2 = (n * n) as f64;
    Ok((2.0 * cross - both - plain) / n2)
}

/// Weighted distance covariance between the covariates and the exposure.
/// Distance matrices are double-centered with weight-averaged row, column,
/// and grand means, so with uniform weights this equals the classical
/// squared distance covariance.
pub fn weighted_dcov(a: &[f64], c: ArrayView2<'_, f64>, w: &[f64]) -> Result<f64> {
    let n = a.len();
    if c.nrows() != n || w.len() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "weighted_dcov: length mismatch".into(),
        ));
    }
    let w = normalise_mean_one(w)?;
    let a_rows = Rows::Scalar(a);
    let c_rows = Rows::Matrix(c);
    let nf = n as f64;

    // weighted row means and grand means of the two distance matrices
    let mut row_a = vec![0.0; n];
    let mut row_c = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a_rows.dist(i, j);
            let dc = c_rows.dist(i, j);
            row_a[i] += w[j] * da;
            row_a[j] += w[i] * da;
            row_c[i] += w[j] * dc;
            row_c[j] += w[i] * dc;
        }
    }
    for i in 0..n {
        row_a[i] /= nf;
        row_c[i] /= nf;
    }
    let grand_a = row_a.iter().zip(&w).map(|(r, wi)| wi * r).sum::<f64>() / nf;
    let grand_c = row_c.iter().zip(&w).map(|(r, wi)| wi * r).sum::<f64>() / nf;

    let mut acc = 0.0;
    for i in 0..n {
        // diagonal terms: distance zero, centered value = -row_i - row_i + grand
        let ca = -2.0 * row_a[i] + grand_a;
        let cc = -2.0 * row_c[i] + grand_c;
        acc += w[i] * w[i] * ca * cc;
        for j in (i + 1)..n {
            let ca = a_rows.dist(i, j) - row_a[i] - row_a[j] + grand_a;
            let cc = c_rows.dist(i, j) - row_c[i] - row_c[j] + grand_c;
            acc += 2.0 * w[i] * w[j] * ca * cc;
        }
    }
    Ok(acc / (nf * nf))
}

/// Composite dependence metric D(w): the quadratic-in-w distance-covariance
/// term (distance matrices double-centered with unweighted means, as in the
/// energy-weight objective) plus the two marginal energy distances. This is
/// exactly the objective minimised by the energy-weight solver.
pub fn dependence_metric(a: &[f64], c: ArrayView2<'_, f64>, w: &[f64]) -> Result<f64> {
    let n = a.len();
    if c.nrows() != n || w.len() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "dependence_metric: length mismatch".into(),
        ));
    }
    let w = normalise_mean_one(w)?;
    let a_rows = Rows::Scalar(a);
    let c_rows = Rows::Matrix(c);
    let nf = n as f64;

    let mut row_a = vec![0.0; n];
    let mut row_c = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a_rows.dist(i, j);
            let dc = c_rows.dist(i, j);
            row_a[i] += da;
            row_a[j] += da;
            row_c[i] += dc;
            row_c[j] += dc;
        }
    }
    for i in 0..n {
        row_a[i] /= nf;
        row_c[i] /= nf;
    }
    let grand_a = row_a.iter().sum::<f64>() / nf;
    let grand_c = row_c.iter().sum::<f64>() / nf;

    // dcov quadratic form + both energy distances in one pass
    let mut quad = 0.0;
    let mut cross_a = 0.0;
    let mut both_a = 0.0;
    let mut plain_a = 0.0;
    let mut cross_c = 0.0;
    let mut both_c = 0.0;
    let mut plain_c = 0.0;
    for i in 0..n {
        let ca = -2.0 * row_a[i] + grand_a;
        let cc = -2.0 * row_c[i] + grand_c;
        quad += w[i] * w[i] * ca * cc;
        for j in (i + 1)..n {
            let da = a_rows.dist(i, j);
            let dc = c_rows.dist(i, j);
            let ca = da - row_a[i] - row_a[j] + grand_a;
            let cc = dc - row_c[i] - row_c[j] + grand_c;
            quad += 2.0 * w[i] * w[j] * ca * cc;
            cross_a += (w[i] + w[j]) * da;
            both_a += 2.0 * w[i] * w[j] * da;
            plain_a += 2.0 * da;
            cross_c += (w[i] + w[j]) * dc;
            both_c += 2.0 * w[i] * w[j] * dc;
            plain_c += 2.0 * dc;
        }
    }
    let n2 = nf * nf;
    let eps_a = (2.0 * cross_a - both_a - plain_a) / n2;
    let eps_c = (2.0 * cross_c - both_c - plain_c) / n2;
    Ok(quad / n2 + eps_a + eps_c)
}

/// Scalar energy distance between weighted and unweighted marginals via
/// sorted prefix sums (O(n log n)); equals the pairwise-sum definition.
pub fn energy_distance_weighted_scalar(x: &[f64], w: &[f64]) -> Result<f64> {
    let n = x.len();
    if w.len() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "energy_distance_weighted_scalar: length mismatch".into(),
        ));
    }
    let w = normalise_mean_one(w)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap());
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ws: Vec<f64> = order.iter().map(|&i| w[i]).collect();

    // B(u) per sorted position k: sum_j u_j |x_k - x_j| from prefix sums
    let bilinear = |u: &[f64]| -> Vec<f64> {
        let mut pu = vec![0.0; n + 1]; // prefix sums of u
        let mut pux = vec![0.0; n + 1]; // prefix sums of u*x
        for k in 0..n {
            pu[k + 1] = pu[k] + u[k];
            pux[k + 1] = pux[k] + u[k] * xs[k];
        }
        (0..n)
            .map(|k| {
                let below = xs[k] * pu[k + 1] - pux[k + 1];
                let above = (pux[n] - pux[k + 1]) - xs[k] * (pu[n] - pu[k + 1]);
                below + above
            })
            .collect()
    };
    let ones = vec![1.0; n];
    let d_vs_all = bilinear(&ones); // sum_j |x_k - x_j|
    let d_vs_w = bilinear(&ws); // sum_j w_j |x_k - x_j|
    let mut cross = 0.0; // sum_ij w_i d_ij
    let mut both = 0.0; // sum_ij w_i w_j d_ij
    let mut plain = 0.0; // sum_ij d_ij
    for k in 0..n {
        cross += ws[k] * d_vs_all[k];
        both += ws[k] * d_vs_w[k];
        plain += d_vs_all[k];
    }
    let n2 = (n * n) as f64;
    Ok((2.0 * cross - both - plain) / n2)
}

/// Assemble the full diagnostics bundle for one weight vector in two
/// pairwise passes. `c_std` holds per-column standardised covariates (the
/// scale used for all distance-based metrics); `eps_c` is reported as the
/// per-covariate average while the composite D uses the joint covariate
/// energy distance. Agrees with the standalone metric functions.
pub fn weight_diagnostics(
    a: &[f64],
    c_std: &Array2<f64>,
    w: &[f64],
) -> Result<WeightDiagnostics> {
    let n = a.len();
    if c_std.nrows() != n || w.len() != n || n == 0 {
        return Err(Error::InvalidParameter(
            "weight_diagnostics: length mismatch".into(),
        ));
    }
    let ess_val = ess(w)?;
    let n_cov = c_std.ncols();
    let mut rho = Vec::with_capacity(n_cov);
    for j in 0..n_cov {
        let col: Vec<f64> = c_std.column(j).to_vec();
        rho.push(weighted_correlation(a, &col, w)?.abs());
    }
    let mean_abs_rho = rho.iter().sum::<f64>() / n_cov as f64;

    let eps_a = energy_distance_weighted_scalar(a, w)?;
    let mut eps_c_sum = 0.0;
    for j in 0..n_cov {
        let col: Vec<f64> = c_std.column(j).to_vec();
        eps_c_sum += energy_distance_weighted_scalar(&col, w)?;
    }
    let eps_c = eps_c_sum / n_cov as f64;

    let w = normalise_mean_one(w)?;
    let nf = n as f64;
    let a_rows = Rows::Scalar(a);
    let c_rows = Rows::Matrix(c_std.view());

    // pass 1: unweighted and weighted row sums of both distance matrices
    let mut row_a = vec![0.0; n];
    let mut row_c = vec![0.0; n];
    let mut wrow_a = vec![0.0; n];
    let mut wrow_c = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a_rows.dist(i, j);
            let dc = c_rows.dist(i, j);
            row_a[i] += da;
            row_a[j] += da;
            row_c[i] += dc;
            row_c[j] += dc;
            wrow_a[i] += w[j] * da;
            wrow_a[j] += w[i] * da;
            wrow_c[i] += w[j] * dc;
            wrow_c[j] += w[i] * dc;
        }
    }
    let mut cross_c_joint = 0.0;
    let mut both_c_joint = 0.0;
    let mut plain_c_joint = 0.0;
    for i in 0..n {
        cross_c_joint += w[i] * row_c[i];
        both_c_joint += w[i] * wrow_c[i];
        plain_c_joint += row_c[i];
        row_a[i] /= nf;
        row_c[i] /= nf;
        wrow_a[i] /= nf;
        wrow_c[i] /= nf;
    }
    let grand_a = row_a.iter().sum::<f64>() / nf;
    let grand_c = row_c.iter().sum::<f64>() / nf;
    let wgrand_a = wrow_a.iter().zip(&w).map(|(r, wi)| wi * r).sum::<f64>() / nf;
    let wgrand_c = wrow_c.iter().zip(&w).map(|(r, wi)| wi * r).sum::<f64>() / nf;

    let n2 = nf * nf;
    let eps_a_joint = {
        let mut cross = 0.0;
        let mut both = 0.0;
        let mut plain = 0.0;
        for i in 0..n {
            cross += w[i] * row_a[i];
            both += w[i] * wrow_a[i];
            plain += row_a[i];
        }
        // row sums were already divided by n
        (2.0 * cross - both - plain) / nf
    };
    let eps_c_joint = (2.0 * cross_c_joint - both_c_joint - plain_c_joint) / n2;

    // pass 2: quadratic-form dcov (unweighted centering) and weighted dcov
    let mut quad = 0.0;
    let mut wdcov = 0.0;
    for i in 0..n {
        let ca = -2.0 * row_a[i] + grand_a;
        let cc = -2.0 * row_c[i] + grand_c;
        quad += w[i] * w[i] * ca * cc;
        let cwa = -2.0 * wrow_a[i] + wgrand_a;
        let cwc = -2.0 * wrow_c[i] + wgrand_c;
        wdcov += w[i] * w[i] * cwa * cwc;
        for j in (i + 1)..n {
            let da = a_rows.dist(i, j);
            let dc = c_rows.dist(i, j);
            let ww = 2.0 * w[i] * w[j];
            quad += ww * (da - row_a[i] - row_a[j] + grand_a) * (dc - row_c[i] - row_c[j] + grand_c);
            wdcov +=
                ww * (da - wrow_a[i] - wrow_a[j] + wgrand_a) * (dc - wrow_c[i] - wrow_c[j] + wgrand_c);
        }
    }
    let d_w = quad / n2 + eps_a_joint + eps_c_joint;

    Ok(WeightDiagnostics {
        ess: ess_val,
        rho_w: rho,
        mean_abs_rho,
        d_w,
        eps_a,
        eps_c,
        dcov_w: wdcov / n2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_hand_values() {
        assert!((ess(&vec![1.0; 5000]).unwrap() - 5000.0).abs() < 1e-9);
        assert!((ess(&[1.0, 1.0, 2.0]).unwrap() - 16.0 / 6.0).abs() < 1e-12);
        assert!((ess(&[1.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(ess(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn ess_scale_invariant() {
        let w = [0.3, 1.7, 2.0, 0.5];
        let scaled: Vec<f64> = w.iter().map(|x| 7.3 * x).collect();
        assert!((ess(&w).unwrap() - ess(&scaled).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn weighted_correlation_reduces_to_pearson() {
        let a = [1.0, 2.0, 3.0, 4.0, 7.0];
        let c = [2.0, 1.0, 4.0, 6.0, 5.0];
        let w = [1.0; 5];
        let got = weighted_correlation(&a, &c, &w).unwrap();
        // classical Pearson
        let n = 5.0;
        let ma = a.iter().sum::<f64>() / n;
        let mc = c.iter().sum::<f64>() / n;
        let cov = a
            .iter()
            .zip(&c)
            .map(|(x, y)| (x - ma) * (y - mc))
            .sum::<f64>()
            / n;
        let sa = (a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n).sqrt();
        let sc = (c.iter().map(|x| (x - mc) * (x - mc)).sum::<f64>() / n).sqrt();
        assert!((got - cov / (sa * sc)).abs() < 1e-12);
    }

    #[test]
    fn weighted_correlation_hand_case() {
        // four rows, w = (2,0,1,1): weighted moments computed by hand
        let a = [1.0, 2.0, 3.0, 4.0];
        let c = [1.0, 0.0, 1.0, 2.0];
        let w = [2.0, 0.0, 1.0, 1.0];
        // normalised weights mean 1 -> wn = (2,0,1,1)
        // a_mean_w = (2*1 + 0 + 3 + 4)/4 = 2.25 ; c_mean_w = (2 + 0 + 1 + 2)/4 = 1.25
        // cov_w = [2*(1-2.25)*(1-1.25) + 0 + (3-2.25)*(1-1.25) + (4-2.25)*(2-1.25)]/4
        //       = [0.625 - 0.1875 + 1.3125]/4 = 0.4375
        // unweighted: a_mean=2.5, sd_a = sqrt(1.25); c_mean=1, sd_c = sqrt(0.5)
        let want = 0.4375 / (1.25f64.sqrt() * 0.5f64.sqrt());
        let got = weighted_correlation(&a, &c, &w).unwrap();
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
    }

    #[test]
    fn weighted_correlation_rejects_constant() {
        let a = [1.0, 1.0, 1.0];
        let c = [2.0, 1.0, 0.0];
        assert!(weighted_correlation(&a, &c, &[1.0; 3]).is_err());
    }

    #[test]
    fn energy_distance_zero_at_uniform() {
        let x = [0.0, 1.0, 1.0, 3.0, 9.0];
        let e = energy_distance_weighted(Rows::Scalar(&x), &[1.0; 5]).unwrap();
        assert!(e.abs() < 1e-12, "e={e}");
    }

    #[test]
    fn energy_distance_nonnegative_property() {
        // direct V-statistic oracle: energy distance between weighted and
        // unweighted empirical distributions must be >= 0
        let mut rng = crate::rng::RngStream::substream(11, 0);
        for _ in 0..25 {
            let n = 30;
            let x: Vec<f64> = (0..n).map(|_| rng.normal() * 2.0).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.uniform() * 3.0 + 0.01).collect();
            let e = energy_distance_weighted(Rows::Scalar(&x), &w).unwrap();
            assert!(e >= -1e-12, "negative energy distance {e}");
            // oracle: 2 E|X_w - X| - E|X_w - X_w'| - E|X - X'| with masses w/n
            let wn: Vec<f64> = {
                let m = w.iter().sum::<f64>() / n as f64;
                w.iter().map(|v| v / m).collect()
            };
            let nf = n as f64;
            let mut t_cross = 0.0;
            let mut t_ww = 0.0;
            let mut t_uu = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = (x[i] - x[j]).abs();
                    t_cross += wn[i] * d;
                    t_ww += wn[i] * wn[j] * d;
                    t_uu += d;
                }
            }
            let oracle = 2.0 * t_cross / (nf * nf) - t_ww / (nf * nf) - t_uu / (nf * nf);
            assert!((oracle - e).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_dcov_uniform_matches_bruteforce_classical() {
        let mut rng = crate::rng::RngStream::substream(13, 2);
        let n = 60;
        let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 5.0).floor()).collect();
        let mut c = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            c[[i, 0]] = rng.normal();
            c[[i, 1]] = rng.normal() + 0.5 * a[i];
        }
        let w = vec![1.0; n];
        let got = weighted_dcov(&a, c.view(), &w).unwrap();

        // brute-force classical squared distance covariance
        let nf = n as f64;
        let mut da = Array2::<f64>::zeros((n, n));
        let mut dc = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                da[[i, j]] = (a[i] - a[j]).abs();
                let dx = c[[i, 0]] - c[[j, 0]];
                let dy = c[[i, 1]] - c[[j, 1]];
                dc[[i, j]] = (dx * dx + dy * dy).sqrt();
            }
        }
        let center = |m: &Array2<f64>| {
            let rows: Vec<f64> = (0..n).map(|i| m.row(i).sum() / nf).collect();
            let grand = rows.iter().sum::<f64>() / nf;
            let mut out = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] = m[[i, j]] - rows[i] - rows[j] + grand;
                }
            }
            out
        };
        let ca = center(&da);
        let cc = center(&dc);
        let mut want = 0.0;
        for i in 0..n {
            for j in 0..n {
                want += ca[[i, j]] * cc[[i, j]];
            }
        }
        want /= nf * nf;
        assert!((got - want).abs() < 1e-10, "got {got} want {want}");
    }

    #[test]
    fn weighted_dcov_zero_for_constant_a() {
        let a = [2.0; 20];
        let mut c = Array2::<f64>::zeros((20, 1));
        for i in 0..20 {
            c[[i, 0]] = i as f64;
        }
        let d = weighted_dcov(&a, c.view(), &vec![1.0; 20]).unwrap();
        assert!(d.abs() < 1e-14);
    }

    #[test]
    fn weighted_dcov_positive_for_identical() {
        let a: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let mut c = Array2::<f64>::zeros((30, 1));
        for i in 0..30 {
            c[[i, 0]] = a[i];
        }
        let d = weighted_dcov(&a, c.view(), &vec![1.0; 30]).unwrap();
        assert!(d > 1e-6, "d={d}");
    }

    #[test]
    fn weighted_dcov_nonnegative_under_weights() {
        let mut rng = crate::rng::RngStream::substream(4, 4);
        for _ in 0..20 {
            let n = 40;
            let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 4.0).floor()).collect();
            let mut c = Array2::<f64>::zeros((n, 2));
            for i in 0..n {
                c[[i, 0]] = rng.normal();
                c[[i, 1]] = rng.normal();
            }
            let w: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 + 0.05).collect();
            let d = weighted_dcov(&a, c.view(), &w).unwrap();
            assert!(d >= -1e-10, "d = {d}");
        }
    }

    #[test]
    fn balance_report_uniform_weights_single_method() {
        let mut rng = crate::rng::RngStream::substream(33, 0);
        let n = 80;
        let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 4.0).floor()).collect();
        let mut c = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                c[[i, j]] = rng.normal();
            }
        }
        let w = vec![1.0; n];
        let diag = weight_diagnostics(&a, &c, &w).unwrap();
        // uniform weights: ESS = n and rho equals the unweighted correlation
        assert!((diag.ess - n as f64).abs() < 1e-9);
        for j in 0..3 {
            let col: Vec<f64> = c.column(j).to_vec();
            let unweighted = weighted_correlation(&a, &col, &w).unwrap().abs();
            assert!((diag.rho_w[j] - unweighted).abs() < 1e-12);
        }
        let rows = balance_report(&[(crate::data_model::MethodId::Cbps, false, diag.clone())]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_datasets, 1);
        assert!((rows[0].ess_mean - n as f64).abs() < 1e-9);
        assert_eq!(rows[0].ess_sd, 0.0);
        assert!((rows[0].rho_max - diag.mean_abs_rho).abs() < 1e-15);
    }

    #[test]
    fn bundled_diagnostics_match_standalone_metrics() {
        // the two-pass bundle must reproduce the reference implementations
        let mut rng = crate::rng::RngStream::substream(57, 0);
        let n = 120;
        let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor()).collect();
        let mut c = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                c[[i, j]] = rng.normal();
            }
        }
        let w: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 + 0.05).collect();
        let d = weight_diagnostics(&a, &c, &w).unwrap();
        let eps_a_ref = energy_distance_weighted(Rows::Scalar(&a), &w).unwrap();
        assert!((d.eps_a - eps_a_ref).abs() < 1e-11, "{} vs {eps_a_ref}", d.eps_a);
        let dcov_ref = weighted_dcov(&a, c.view(), &w).unwrap();
        assert!((d.dcov_w - dcov_ref).abs() < 1e-11, "{} vs {dcov_ref}", d.dcov_w);
        let d_ref = dependence_metric(&a, c.view(), &w).unwrap();
        assert!((d.d_w - d_ref).abs() < 1e-11, "{} vs {d_ref}", d.d_w);
        let mut eps_c_sum = 0.0;
        for j in 0..3 {
            let col: Vec<f64> = c.column(j).to_vec();
            eps_c_sum += energy_distance_weighted(Rows::Scalar(&col), &w).unwrap();
        }
        assert!((d.eps_c - eps_c_sum / 3.0).abs() < 1e-11);
    }

    #[test]
    fn scalar_energy_fast_path_matches_pairwise() {
        let mut rng = crate::rng::RngStream::substream(58, 0);
        for _ in 0..10 {
            let n = 70;
            let x: Vec<f64> = (0..n).map(|_| (rng.uniform() * 4.0).floor()).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
            let fast = energy_distance_weighted_scalar(&x, &w).unwrap();
            let slow = energy_distance_weighted(Rows::Scalar(&x), &w).unwrap();
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn dependence_metric_agrees_at_uniform() {
        // with uniform weights the quadratic dcov term equals weighted_dcov
        let mut rng = crate::rng::RngStream::substream(21, 9);
        let n = 50;
        let a: Vec<f64> = (0..n).map(|_| (rng.uniform() * 5.0).floor()).collect();
        let mut c = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                c[[i, j]] = rng.normal();
            }
        }
        let w = vec![1.0; n];
        let d = dependence_metric(&a, c.view(), &w).unwrap();
        let parts = weighted_dcov(&a, c.view(), &w).unwrap()
            + energy_distance_weighted(Rows::Scalar(&a), &w).unwrap()
            + energy_distance_weighted(Rows::Matrix(c.view()), &w).unwrap();
        assert!((d - parts).abs() < 1e-10, "d={d} parts={parts}");
    }
}
