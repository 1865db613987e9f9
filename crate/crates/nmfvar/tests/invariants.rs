//! Property tests for the library-wide invariants.

use ndarray::Array2;
use proptest::prelude::*;

use nmfvar::cluster::{hard_assign, time_membership, variable_membership};
use nmfvar::design::build_kernel_matrix;
use nmfvar::frame::TimeSeriesFrame;
use nmfvar::kernels::{hadamard_mul, spectral_radius};
use nmfvar::preprocess::{apply_pipeline, invert_pipeline, PipelineSpec, PipelineStep};

fn frame_from(values: Array2<f64>) -> TimeSeriesFrame {
    let t = values.ncols();
    let names = (0..values.nrows()).map(|i| format!("v{i}")).collect();
    TimeSeriesFrame::from_numeric(names, (0..t).map(|i| i as f64).collect(), values).unwrap()
}

fn positive_values(p: usize, t: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(0.05f64..50.0, p * t)
        .prop_map(move |v| Array2::from_shape_vec((p, t), v).unwrap())
}

/// Pipelines without moving averages invert exactly on retained points.
fn invertible_pipeline() -> impl Strategy<Value = PipelineSpec> {
    proptest::collection::vec(
        prop_oneof![
            Just(PipelineStep::Log),
            Just(PipelineStep::Log1p),
            Just(PipelineStep::FirstDifference),
            Just(PipelineStep::MinMaxScale),
        ],
        0..4,
    )
    .prop_map(|steps| PipelineSpec { steps })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pipeline_without_ma_round_trips(
        values in positive_values(3, 24),
        spec in invertible_pipeline(),
    ) {
        let f = frame_from(values.clone());
        // a pipeline may legitimately reject its input (constant variable
        // under min-max after differencing, say); only successful
        // applications must round-trip
        if let Ok((out, fitted)) = apply_pipeline(&f, &spec) {
            let inv = invert_pipeline(&out, &fitted).unwrap();
            prop_assert!(!inv.smoothed_scale);
            prop_assert_eq!(inv.frame.n_obs(), f.n_obs());
            for (got, want) in inv.frame.values().iter().zip(values.iter()) {
                prop_assert!(
                    (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                    "{} vs {}", got, want
                );
            }
        }
    }

    #[test]
    fn minmax_attains_both_endpoints(values in positive_values(2, 16)) {
        let f = frame_from(values);
        let spec = PipelineSpec::parse("minmax").unwrap();
        if let Ok((out, _)) = apply_pipeline(&f, &spec) {
            for row in out.values().rows() {
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }
    }

    #[test]
    fn t_accounting_matches_drops(
        values in positive_values(2, 40),
        window in prop_oneof![Just(3usize), Just(5), Just(7)],
        with_diff in any::<bool>(),
    ) {
        let f = frame_from(values);
        let mut steps = vec![PipelineStep::MovingAverage { window }];
        if with_diff {
            steps.push(PipelineStep::FirstDifference);
        }
        let spec = PipelineSpec { steps };
        let (out, fitted) = apply_pipeline(&f, &spec).unwrap();
        prop_assert_eq!(out.n_obs(), 40 - fitted.dropped_points());
        prop_assert_eq!(
            fitted.dropped_points(),
            (window - 1) + usize::from(with_diff)
        );
    }

    #[test]
    fn memberships_normalize_and_ignore_scale(
        raw in proptest::collection::vec(0.01f64..10.0, 3 * 8),
        scales in proptest::collection::vec(0.1f64..20.0, 8),
    ) {
        let b = Array2::from_shape_vec((3, 8), raw).unwrap();
        let m = time_membership(&b).unwrap();
        for col in m.probabilities.columns() {
            let s: f64 = col.sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
            for &v in col {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        // scaling each column leaves memberships unchanged
        let mut scaled = b.clone();
        for (j, s) in scales.iter().enumerate() {
            for i in 0..3 {
                scaled[(i, j)] *= s;
            }
        }
        let m2 = time_membership(&scaled).unwrap();
        for (a, b) in m.probabilities.iter().zip(m2.probabilities.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(hard_assign(&m), hard_assign(&m2));
    }

    #[test]
    fn variable_memberships_row_normalize(
        raw in proptest::collection::vec(0.01f64..10.0, 4 * 3),
    ) {
        let x = Array2::from_shape_vec((4, 3), raw).unwrap();
        let m = variable_membership(&x).unwrap();
        for row in m.probabilities.rows() {
            let s: f64 = row.sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hadamard_mul_commutative_associative(
        raw_a in proptest::collection::vec(-5.0f64..5.0, 12),
        raw_b in proptest::collection::vec(-5.0f64..5.0, 12),
        raw_c in proptest::collection::vec(-5.0f64..5.0, 12),
    ) {
        let a = Array2::from_shape_vec((3, 4), raw_a).unwrap();
        let b = Array2::from_shape_vec((3, 4), raw_b).unwrap();
        let c = Array2::from_shape_vec((3, 4), raw_c).unwrap();
        let ab = hadamard_mul(&a, &b).unwrap();
        let ba = hadamard_mul(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        // associativity holds to rounding (one extra rounding step per side)
        let ab_c = hadamard_mul(&ab, &c).unwrap();
        let a_bc = hadamard_mul(&a, &hadamard_mul(&b, &c).unwrap()).unwrap();
        for (x, y) in ab_c.iter().zip(a_bc.iter()) {
            prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * x.abs().max(y.abs()));
        }
    }

    #[test]
    fn spectral_radius_of_scaled_identity(c in -10.0f64..10.0, n in 1usize..8) {
        let m = Array2::from_diag_elem(n, c);
        let rho = spectral_radius(&m, 1e-12, 10_000).unwrap();
        prop_assert!((rho - c.abs()).abs() <= 1e-10 * c.abs().max(1.0));
    }

    #[test]
    fn kernel_matrix_is_exactly_symmetric(n in 2usize..12, beta in 0.001f64..10.0) {
        let k = build_kernel_matrix(n, beta).unwrap();
        for i in 0..n {
            prop_assert_eq!(k[(i, i)], 1.0);
            for j in 0..n {
                prop_assert_eq!(k[(i, j)], k[(j, i)]);
                // entries lie in (0, 1] up to underflow at large distances
                prop_assert!((0.0..=1.0).contains(&k[(i, j)]));
            }
        }
    }
}
