//! Multinomial binning weights: collapse rare exposure levels, model the
//! binned exposure given covariates, and form stabilised weights as the
//! ratio of marginal to conditional bin probabilities. The original count
//! exposure (not the bin) is what enters downstream effect estimation.

use ndarray::Array2;

use crate::data_model::{Dataset, MethodId};
use crate::error::Result;
use crate::glm::{fit_multinomial, predict_probs};

use super::collapse::collapse_rare_levels;
use super::WeightVector;

pub fn multinomial_weights(ds: &Dataset) -> Result<WeightVector> {
    let n = ds.n;
    let (labels, map) = collapse_rare_levels(&ds.a, 0.01)?;
    let k = map.n_bins;

    let mut x = Array2::<f64>::zeros((n, 4));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        x[[i, 1]] = ds.c1[i] as f64;
        x[[i, 2]] = ds.c2[i];
        x[[i, 3]] = ds.c3[i];
    }
    let fit = fit_multinomial(&x, &labels, k)?;
    let probs = predict_probs(&fit, &x)?;

    let mut freq = vec![0.0f64; k + 1];
    for &b in &labels {
        freq[b] += 1.0;
    }
    for f in freq.iter_mut() {
        *f /= n as f64;
    }

    let mut w = Vec::with_capacity(n);
    let mut numerator = Vec::with_capacity(n);
    let mut denominator = Vec::with_capacity(n);
    for i in 0..n {
        let bin = labels[i];
        let num = freq[bin];
        let den = probs[[i, bin - 1]];
        numerator.push(num);
        denominator.push(den);
        w.push(num / den);
    }
    let wv = WeightVector {
        w,
        numerator: Some(numerator),
        denominator: Some(denominator),
        method: MethodId::Multinomial,
        winsorised_at: None,
    };
    wv.validate()?;
    Ok(wv)
}
