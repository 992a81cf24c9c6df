//! The five stabilised-weight estimators plus winsorisation and the
//! rare-level collapse rule. Every estimator consumes a complete dataset and
//! returns a [`WeightVector`]; the density-ratio methods also record their
//! numerator and denominator columns.

mod cbps;
mod collapse;
mod energy;
mod gbm;
mod multinomial;
mod npcbps;
mod standardize;

pub use cbps::cbps_weights;
pub use collapse::{collapse_rare_levels, CollapseMap};
pub use energy::{energy_weights, EnergyConfig};
pub use gbm::{gbm_weights, GbmConfig, GbmModel};
pub use multinomial::multinomial_weights;
pub use npcbps::npcbps_weights;
pub use standardize::{standardize_columns, standardized_design, StandardizedDesign};

use crate::data_model::{Dataset, MethodId};
use crate::error::{Error, Result};
use crate::stats::quantile_type7;

/// Stabilised weights for one dataset and method.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub w: Vec<f64>,
    /// Marginal density/probability of each row's exposure, when the method
    /// is a density ratio.
    pub numerator: Option<Vec<f64>>,
    /// Conditional density/probability, likewise.
    pub denominator: Option<Vec<f64>>,
    pub method: MethodId,
    /// Percentile at which the weights were capped, if winsorised.
    pub winsorised_at: Option<f64>,
}

impl WeightVector {
    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Validation(format!(
                "{} weights contain a negative or non-finite value",
                self.method
            )));
        }
        if let (Some(num), Some(den)) = (&self.numerator, &self.denominator) {
            for i in 0..self.w.len() {
                let ratio = num[i] / den[i];
                if (ratio - self.w[i]).abs() > 1e-12 * ratio.abs().max(1.0) {
                    return Err(Error::Validation(format!(
                        "{} weight {i} != numerator/denominator",
                        self.method
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Estimate weights for any weighting method on a complete dataset.
pub fn estimate_weights(ds: &Dataset, method: MethodId) -> Result<WeightVector> {
    match method {
        MethodId::Multinomial => multinomial_weights(ds),
        MethodId::Cbps => cbps_weights(ds),
        MethodId::NpCbps => npcbps_weights(ds),
        MethodId::Gbm => gbm_weights(ds, &GbmConfig::default()).map(|(wv, _)| wv),
        MethodId::Energy => energy_weights(ds, &EnergyConfig::default()),
        MethodId::Unadjusted | MethodId::Adjusted => Err(Error::InvalidParameter(format!(
            "{method} is not a weighting method"
        ))),
    }
}

/// Cap weights at their own empirical percentile (type-7 quantile);
/// percentile 1.0 is the identity. Capping the heavy tail can only reduce
/// weight dispersion, so the effective sample size never decreases.
pub fn winsorise(wv: &WeightVector, percentile: f64) -> Result<WeightVector> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "winsorise percentile {percentile} outside (0,1]"
        )));
    }
    let mut out = wv.clone();
    out.winsorised_at = Some(percentile);
    if percentile == 1.0 || wv.w.is_empty() {
        return Ok(out);
    }
    let cap = quantile_type7(&wv.w, percentile);
    for w in out.w.iter_mut() {
        if *w > cap {
            *w = cap;
        }
    }
    // capped weights are no longer the recorded density ratio
    out.numerator = None;
    out.denominator = None;
    Ok(out)
}
