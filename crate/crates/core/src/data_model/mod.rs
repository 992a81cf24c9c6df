//! Core tabular types shared by every stage of the pipeline: the simulated
//! dataset with explicit per-cell missingness masks, scenario configuration,
//! method identifiers, and per-replication results.

mod config;
mod csv;
mod dataset;

pub use config::{
    load_scenario_config, parse_scenario_config, ExposureDgm, MethodId, MissingnessKind,
    ScenarioConfig,
};
pub use csv::{read_dataset_csv, write_dataset_csv};
pub use dataset::Dataset;

use crate::diagnostics::WeightDiagnostics;

/// Outcome of one (replication, method, winsorised-variant) analysis.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub rep_index: usize,
    pub method: MethodId,
    pub winsorised: bool,
    /// Estimated ln RR per unit exposure.
    pub theta_hat: f64,
    pub var_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Absent for the unweighted estimators.
    pub diagnostics: Option<WeightDiagnostics>,
    /// Number of imputations pooled; 1 on complete data.
    pub m_used: usize,
}

impl ReplicationResult {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.var_hat < 0.0 {
            return Err(crate::error::Error::Validation(format!(
                "negative variance estimate {}",
                self.var_hat
            )));
        }
        if self.var_hat > 0.0 && !(self.ci_lo <= self.theta_hat && self.theta_hat <= self.ci_hi) {
            return Err(crate::error::Error::Validation(
                "confidence interval does not bracket the point estimate".into(),
            ));
        }
        if self.m_used < 1 {
            return Err(crate::error::Error::Validation("m_used must be >= 1".into()));
        }
        Ok(())
    }
}
