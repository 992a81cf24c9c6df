//! Monte Carlo performance summaries across replications: bias, relative
//! bias, empirical and model-based standard errors, coverage, each with its
//! Monte Carlo standard error, plus the ESS distribution for weighting
//! methods.

use crate::data_model::{MethodId, ReplicationResult};
use crate::error::{Error, Result};
use crate::stats::{mean, quantile_type7, sample_sd};

/// One row of the aggregate performance table.
#[derive(Debug, Clone)]
pub struct PerfRow {
    pub scenario: String,
    pub method: MethodId,
    pub winsorised: bool,
    pub n_reps_used: usize,
    pub n_failed: usize,
    pub bias: f64,
    pub bias_mcse: f64,
    /// Absent when the true effect is zero.
    pub relative_bias_pct: Option<f64>,
    pub relative_bias_mcse: Option<f64>,
    pub empirical_se: f64,
    /// sqrt of the mean estimated variance.
    pub model_se: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub ess_mean: Option<f64>,
    pub ess_sd: Option<f64>,
    pub ess_p5: Option<f64>,
    pub ess_p95: Option<f64>,
    pub mean_abs_rho: Option<f64>,
}

/// Summarise successful replications of one (scenario, method, winsorised)
/// cell against the true effect. Failures are counted by the caller and
/// passed in for the failure column.
pub fn summarize(
    scenario: &str,
    method: MethodId,
    winsorised: bool,
    results: &[&ReplicationResult],
    theta_true: f64,
    n_failed: usize,
) -> Result<PerfRow> {
    let r = results.len();
    if r < 2 {
        return Err(Error::InvalidParameter(format!(
            "summarize needs at least 2 successful replications, got {r}"
        )));
    }
    let thetas: Vec<f64> = results.iter().map(|x| x.theta_hat).collect();
    let bias = mean(&thetas) - theta_true;
    let emp_se = sample_sd(&thetas);
    let bias_mcse = emp_se / (r as f64).sqrt();
    let (rel, rel_mcse) = if theta_true != 0.0 {
        (
            Some(100.0 * bias / theta_true),
            Some(100.0 * bias_mcse / theta_true.abs()),
        )
    } else {
        (None, None)
    };
    let model_se = mean(&results.iter().map(|x| x.var_hat).collect::<Vec<_>>()).sqrt();
    let covered = results
        .iter()
        .filter(|x| x.ci_lo <= theta_true && theta_true <= x.ci_hi)
        .count();
    let coverage = covered as f64 / r as f64;
    let coverage_mcse = (coverage * (1.0 - coverage) / r as f64).sqrt();

    let ess: Vec<f64> = results
        .iter()
        .filter_map(|x| x.diagnostics.as_ref().map(|d| d.ess))
        .collect();
    let rho: Vec<f64> = results
        .iter()
        .filter_map(|x| x.diagnostics.as_ref().map(|d| d.mean_abs_rho))
        .collect();
    let (ess_mean, ess_sd, ess_p5, ess_p95) = if ess.len() == r {
        (
            Some(mean(&ess)),
            Some(if ess.len() >= 2 { sample_sd(&ess) } else { 0.0 }),
            Some(quantile_type7(&ess, 0.05)),
            Some(quantile_type7(&ess, 0.95)),
        )
    } else {
        (None, None, None, None)
    };
    let mean_abs_rho = if rho.len() == r { Some(mean(&rho)) } else { None };

    Ok(PerfRow {
        scenario: scenario.to_string(),
        method,
        winsorised,
        n_reps_used: r,
        n_failed,
        bias,
        bias_mcse,
        relative_bias_pct: rel,
        relative_bias_mcse: rel_mcse,
        empirical_se: emp_se,
        model_se,
        coverage,
        coverage_mcse,
        ess_mean,
        ess_sd,
        ess_p5,
        ess_p95,
        mean_abs_rho,
    })
}

pub const PERF_CSV_HEADER: &str = "scenario,method,winsorised,n_reps_used,n_failed,bias,bias_mcse,relative_bias_pct,relative_bias_mcse,empirical_se,model_se,coverage,coverage_mcse,ess_mean,ess_sd,ess_p5,ess_p95,mean_abs_rho";

impl PerfRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.method,
            self.winsorised as u8,
            self.n_reps_used,
            self.n_failed,
            self.bias,
            self.bias_mcse,
            opt(self.relative_bias_pct),
            opt(self.relative_bias_mcse),
            self.empirical_se,
            self.model_se,
            self.coverage,
            self.coverage_mcse,
            opt(self.ess_mean),
            opt(self.ess_sd),
            opt(self.ess_p5),
            opt(self.ess_p95),
            opt(self.mean_abs_rho),
        )
    }
}
