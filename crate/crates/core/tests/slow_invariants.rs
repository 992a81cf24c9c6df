//! Replication-level invariants too slow for every CI run:
//!
//!   cargo test -p countiptw --test slow_invariants -- --include-ignored

use countiptw::data_model::{ExposureDgm, MethodId};
use countiptw::dgm::{default_params, generate_dataset};
use countiptw::diagnostics::weighted_correlation;
use countiptw::imputation::mice_impute;
use countiptw::missingness::{ampute, calibrate_mcar};
use countiptw::rng::RngStream;
use countiptw::weights::estimate_weights;

/// On data where the exposure already ignores the covariates, no method may
/// worsen mean absolute balance by more than 0.01, and every method's mean
/// weight stays in [0.8, 1.25].
#[test]
#[ignore = "slow invariant suite"]
fn no_method_worsens_balance_on_balanced_data() {
    let mut params = default_params(ExposureDgm::NegBin, 1.1).unwrap();
    params.beta = [1.5f64.ln(), 0.0, 0.0, 0.0];
    let n = 1000;
    let reps = 50;
    let methods = [
        MethodId::Multinomial,
        MethodId::Cbps,
        MethodId::NpCbps,
        MethodId::Gbm,
        MethodId::Energy,
    ];
    let mut weighted_sum = vec![0.0f64; methods.len()];
    let mut unweighted_sum = 0.0f64;
    for rep in 0..reps {
        let mut rng = RngStream::substream(314, rep);
        let ds = generate_dataset(n, &params, &mut rng).unwrap();
        let a: Vec<f64> = ds.a.iter().map(|&v| v as f64).collect();
        let cols: [Vec<f64>; 3] = [
            ds.c1.iter().map(|&v| v as f64).collect(),
            ds.c2.clone(),
            ds.c3.clone(),
        ];
        let uniform = vec![1.0; n];
        let mean_abs = |w: &[f64]| -> f64 {
            cols.iter()
                .map(|c| weighted_correlation(&a, c, w).unwrap().abs())
                .sum::<f64>()
                / 3.0
        };
        unweighted_sum += mean_abs(&uniform);
        for (mi, &method) in methods.iter().enumerate() {
            let wv = estimate_weights(&ds, method).unwrap();
            weighted_sum[mi] += mean_abs(&wv.w);
            let mean_w = wv.w.iter().sum::<f64>() / n as f64;
            assert!(
                (0.8..=1.25).contains(&mean_w),
                "{method} rep {rep}: mean weight {mean_w}"
            );
        }
    }
    let unweighted = unweighted_sum / reps as f64;
    for (mi, &method) in methods.iter().enumerate() {
        let weighted = weighted_sum[mi] / reps as f64;
        assert!(
            weighted <= unweighted + 0.01,
            "{method}: mean |rho_w| {weighted:.4} above unweighted {unweighted:.4} + 0.01"
        );
    }
}

/// Under 20% MCAR amputation, chained-equation imputation keeps the
/// post-imputation marginal mean of the exposure within 5% of the
/// pre-amputation mean, averaged over 100 replications.
#[test]
#[ignore = "slow invariant suite"]
fn pmm_preserves_exposure_marginal_under_mcar() {
    let params = default_params(ExposureDgm::NegBin, 1.1).unwrap();
    let plan = calibrate_mcar(0.20).unwrap();
    let reps = 100;
    let n = 1500;
    let mut ratio_sum = 0.0;
    for rep in 0..reps {
        let mut rng = RngStream::substream(217, rep);
        let ds = generate_dataset(n, &params, &mut rng).unwrap();
        let pre_mean = ds.a.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let amputed = ampute(&ds, &plan, &mut rng).unwrap();
        let stream = RngStream::substream(218, rep);
        let ims = mice_impute(&amputed, 2, 5, &stream).unwrap();
        let post_mean = ims
            .completed
            .iter()
            .map(|d| d.a.iter().map(|&v| v as f64).sum::<f64>() / n as f64)
            .sum::<f64>()
            / ims.m as f64;
        ratio_sum += post_mean / pre_mean;
    }
    let mean_ratio = ratio_sum / reps as f64;
    assert!(
        (mean_ratio - 1.0).abs() < 0.05,
        "post/pre exposure mean ratio {mean_ratio:.4}"
    );
}
