//! Property tests for the shared invariants: lossless CSV round-trips,
//! winsorisation monotonicity, ESS identities, and pooling invariance.

use countiptw::data_model::{read_dataset_csv, write_dataset_csv, Dataset, MethodId};
use countiptw::diagnostics::ess;
use countiptw::estimation::pool_rubin;
use countiptw::weights::{winsorise, WeightVector};
use proptest::prelude::*;

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    let row = (
        any::<bool>(),                      // c1
        proptest::option::of(-1e15..1e15f64), // c2 (None = missing)
        proptest::option::of(-1e15..1e15f64), // c3
        proptest::option::of(0u32..=10),    // a
        proptest::option::of(any::<bool>()), // y
    );
    proptest::collection::vec(row, 0..40).prop_map(|rows| {
        let n = rows.len();
        let mut ds = Dataset::with_capacity(n);
        for (c1, c2, c3, a, y) in rows {
            ds.c1.push(c1 as u8);
            match c2 {
                Some(v) => {
                    ds.c2.push(v);
                    ds.miss_c2.push(false);
                }
                None => {
                    ds.c2.push(0.0);
                    ds.miss_c2.push(true);
                }
            }
            match c3 {
                Some(v) => {
                    ds.c3.push(v);
                    ds.miss_c3.push(false);
                }
                None => {
                    ds.c3.push(0.0);
                    ds.miss_c3.push(true);
                }
            }
            match a {
                Some(v) => {
                    ds.a.push(v);
                    ds.miss_a.push(false);
                }
                None => {
                    ds.a.push(0);
                    ds.miss_a.push(true);
                }
            }
            match y {
                Some(v) => {
                    ds.y.push(v as u8);
                    ds.miss_y.push(false);
                }
                None => {
                    ds.y.push(0);
                    ds.miss_y.push(true);
                }
            }
            ds.n += 1;
        }
        ds
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_lossless(ds in arb_dataset()) {
        let dir = std::env::temp_dir().join(format!("countiptw_prop_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        write_dataset_csv(&ds, &path).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        prop_assert_eq!(back.n, ds.n);
        prop_assert_eq!(&back.c1, &ds.c1);
        prop_assert_eq!(&back.a, &ds.a);
        prop_assert_eq!(&back.y, &ds.y);
        prop_assert_eq!(&back.miss_c2, &ds.miss_c2);
        prop_assert_eq!(&back.miss_c3, &ds.miss_c3);
        prop_assert_eq!(&back.miss_a, &ds.miss_a);
        prop_assert_eq!(&back.miss_y, &ds.miss_y);
        for i in 0..ds.n {
            if !ds.miss_c2[i] {
                prop_assert_eq!(back.c2[i].to_bits(), ds.c2[i].to_bits());
            }
            if !ds.miss_c3[i] {
                prop_assert_eq!(back.c3[i].to_bits(), ds.c3[i].to_bits());
            }
        }
        // a second write reproduces the file byte for byte
        let path2 = dir.join("roundtrip2.csv");
        write_dataset_csv(&back, &path2).unwrap();
        prop_assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn winsorise_monotone_in_ess(raw in proptest::collection::vec(1e-6..50.0f64, 2..200),
                                 p in 0.5..1.0f64) {
        let wv = WeightVector {
            w: raw,
            numerator: None,
            denominator: None,
            method: MethodId::Gbm,
            winsorised_at: None,
        };
        let before = ess(&wv.w).unwrap();
        let after = ess(&winsorise(&wv, p).unwrap().w).unwrap();
        prop_assert!(after >= before - 1e-9, "ESS fell from {before} to {after}");
    }

    #[test]
    fn ess_scale_invariance(w in proptest::collection::vec(1e-6..100.0f64, 1..100),
                            scale in 1e-3..1e3f64) {
        let scaled: Vec<f64> = w.iter().map(|x| scale * x).collect();
        let a = ess(&w).unwrap();
        let b = ess(&scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-6 * a.max(1.0));
    }

    #[test]
    fn rubin_pooling_identity_and_bounds(
        pairs in proptest::collection::vec((-0.5..0.5f64, 1e-6..0.2f64), 2..40)
    ) {
        let pooled = pool_rubin(&pairs).unwrap();
        let m = pairs.len() as f64;
        let identity = pooled.w_bar + (1.0 + 1.0 / m) * pooled.b;
        prop_assert!((pooled.t - identity).abs() < 1e-12 * identity.max(1e-12));
        prop_assert!(pooled.ci_lo <= pooled.theta && pooled.theta <= pooled.ci_hi);
        prop_assert!(pooled.nu > 0.0);
        // pooled CI at least as wide as the within-variance normal CI
        let half_within = 1.959963984540054 * pooled.w_bar.sqrt();
        prop_assert!(pooled.ci_hi - pooled.theta >= half_within - 1e-12);
    }
}
