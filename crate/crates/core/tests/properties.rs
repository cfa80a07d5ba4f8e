//! Property tests for the structural invariants: basis algebra, posterior
//! normalization, metric symmetries, and text round-trips.

use curveclust::basis::{BasisSpec, Knots};
use curveclust::dataset::{load_csv, save_csv, Curve, FunctionalDataset};
use curveclust::evaluation::{adjusted_rand_index, misclassification_rate};
use curveclust::mixreg::{build_designs, e_step, penalized_objective, MixRegParams, SoftPartition};
use curveclust::mixrhlp::{logistic_proportions, LogisticParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|j| j as f64 / (m - 1) as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// B-spline rows are a partition of unity on the whole domain.
    #[test]
    fn bspline_partition_of_unity(
        degree in 1usize..=3,
        knots in 0usize..=5,
        m in 4usize..=40,
    ) {
        let xs = grid(m);
        let spec = BasisSpec::bspline(degree, Knots::Count(knots));
        let design = spec.design(&xs, 0.0, 1.0).unwrap();
        for j in 0..m {
            let mut row_sum = 0.0;
            for c in 0..design.ncols() {
                let v = design[(j, c)];
                prop_assert!(v >= -1e-12, "negative basis value {v}");
                row_sum += v;
            }
            prop_assert!((row_sum - 1.0).abs() <= 1e-9, "row {j} sums to {row_sum}");
        }
    }

    /// Posterior memberships are row-stochastic for any valid parameters.
    #[test]
    fn e_step_rows_are_stochastic(
        seed_vals in proptest::collection::vec(-3.0f64..3.0, 8..40),
        k in 1usize..=4,
    ) {
        let m = 6usize;
        let n = seed_vals.len() / m;
        prop_assume!(n >= 1);
        let xs = grid(m);
        let curves: Vec<Curve<f64>> = (0..n)
            .map(|i| {
                let ys = seed_vals[i * m..(i + 1) * m].to_vec();
                Curve::new(format!("c{i}"), xs.clone(), ys, None).unwrap()
            })
            .collect();
        let dataset = FunctionalDataset::new(curves).unwrap();
        let spec = BasisSpec::polynomial(1);
        let designs = build_designs(&dataset, &spec).unwrap();
        let params = MixRegParams {
            alphas: vec![1.0 / k as f64; k],
            betas: (0..k).map(|kk| DVector::from_vec(vec![kk as f64 * 0.5, -0.3])).collect(),
            sigma2s: vec![0.7; k],
        };
        let (partition, loglik) = e_step(&designs, &params).unwrap();
        prop_assert!(loglik.is_finite());
        for i in 0..n {
            let s: f64 = (0..k).map(|kk| partition.tau[(i, kk)]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9, "row {i} sums to {s}");
        }
    }

    /// MAP labels ignore any strictly increasing transform of a tau row.
    #[test]
    fn map_labels_invariant_to_monotone_transform(
        rows in proptest::collection::vec(
            proptest::collection::vec(0.01f64..1.0, 3), 1..10),
        scale in 0.1f64..5.0,
    ) {
        let n = rows.len();
        let tau = DMatrix::from_fn(n, 3, |i, j| {
            let s: f64 = rows[i].iter().sum();
            rows[i][j] / s
        });
        let transformed = tau.map(|v| (scale * v).exp());
        let a = SoftPartition { tau }.hard_labels();
        let b = SoftPartition { tau: transformed }.hard_labels();
        prop_assert_eq!(a, b);
    }

    /// The entropy penalty vanishes at lambda = 0 and equals
    /// lambda * n * ln K at uniform proportions.
    #[test]
    fn penalty_identities(
        loglik in -1e4f64..1e4,
        k in 1usize..=6,
        n in 1usize..=100,
        lambda in 0.0f64..3.0,
    ) {
        let alphas = vec![1.0 / k as f64; k];
        prop_assert_eq!(penalized_objective(loglik, &alphas, n, 0.0), loglik);
        let expected = loglik - lambda * n as f64 * (k as f64).ln();
        let got = penalized_objective(loglik, &alphas, n, lambda);
        prop_assert!((got - expected).abs() <= 1e-8 * (1.0 + expected.abs()));
    }

    /// Logistic regime proportions are a simplex at every abscissa.
    #[test]
    fn logistic_proportions_are_simplex(
        w in proptest::collection::vec((-4.0f64..4.0, -10.0f64..10.0), 1..4),
        x in -2.0f64..2.0,
    ) {
        let params = LogisticParams { w: w.iter().map(|&(a, b)| [a, b]).collect() };
        let pis = logistic_proportions(x, &params);
        let s: f64 = pis.iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-9);
        prop_assert!(pis.iter().all(|&p| p >= 0.0));
    }

    /// Misclassification is invariant to relabeling either side; ARI of a
    /// partition with itself is 1.
    #[test]
    fn metric_symmetries(labels in proptest::collection::vec(0usize..3, 4..40)) {
        prop_assume!(labels.iter().collect::<std::collections::HashSet<_>>().len() >= 2);
        let renamed: Vec<usize> = labels.iter().map(|&l| (l + 1) % 3 + 10).collect();
        let rate = misclassification_rate(&labels, &renamed).unwrap();
        prop_assert!(rate.abs() <= 1e-12, "relabeling scored {rate}");
        let ari = adjusted_rand_index(&labels, &renamed).unwrap();
        prop_assert!((ari - 1.0).abs() <= 1e-12);
    }

    /// CSV save/load reproduces values, ids and labels exactly.
    #[test]
    fn csv_roundtrip_is_exact(
        raw in proptest::collection::vec((-1e6f64..1e6, -1e3f64..1e3), 3..30),
        with_labels in any::<bool>(),
    ) {
        let m = 3usize;
        let n = raw.len() / m;
        prop_assume!(n >= 1);
        let curves: Vec<Curve<f64>> = (0..n)
            .map(|i| {
                let xs: Vec<f64> = (0..m).map(|j| j as f64 + raw[i * m].1.abs() * 1e-3).collect();
                let ys: Vec<f64> = (0..m).map(|j| raw[i * m + j].0).collect();
                let label = if with_labels { Some(i % 3 + 1) } else { None };
                Curve::new(format!("id{i}"), xs, ys, label).unwrap()
            })
            .collect();
        let dataset = FunctionalDataset::new(curves).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&dataset, &path).unwrap();
        let back: FunctionalDataset<f64> = load_csv(&path).unwrap();
        prop_assert_eq!(back.n(), dataset.n());
        for (a, b) in dataset.curves().iter().zip(back.curves()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.xs(), b.xs());
            prop_assert_eq!(a.ys(), b.ys());
        }
    }
}
