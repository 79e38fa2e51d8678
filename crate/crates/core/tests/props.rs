//! Property tests for the structural invariants.

use ndarray::Array2;
use proptest::prelude::*;
use rfembed_core::ae::{build_io, Variant};
use rfembed_core::data::{gaussian_blobs, split, standardize, SplitSpec};
use rfembed_core::eval::{mantel, MantelMethod};
use rfembed_core::proximity::{
    select_prototypes, symmetrize, ProximityKind, ProximityMatrix, SelfSimilarityMode,
};

fn prox_from_rows(rows: Vec<Vec<f64>>) -> ProximityMatrix {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    ProximityMatrix {
        values: Array2::from_shape_vec((n, flat.len() / n), flat).unwrap(),
        kind: ProximityKind::Train,
        mode: SelfSimilarityMode::Zero,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_a_partition(
        n_per in 2usize..20,
        classes in 1usize..4,
        fraction in 0.05f64..1.0,
        seed in any::<u64>(),
        stratified in any::<bool>(),
    ) {
        let ds = gaussian_blobs(n_per, 3, classes, 4.0, seed);
        let spec = SplitSpec { train_fraction: fraction, seed, stratified };
        let (train, test) = split(&ds, &spec).unwrap();
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.n()).collect::<Vec<_>>());
        if !stratified {
            prop_assert_eq!(train.len(), (fraction * ds.n() as f64).round() as usize);
        } else {
            // Per-class counts stay within 1 of exact proportionality.
            for class in 0..classes {
                let total = ds.labels.iter().filter(|&&l| l == class).count();
                let got = train.iter().filter(|&&i| ds.labels[i] == class).count();
                prop_assert!((got as f64 - fraction * total as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn standardize_output_is_a_fixed_point(
        n_per in 3usize..15,
        d in 1usize..5,
        seed in any::<u64>(),
    ) {
        let ds = gaussian_blobs(n_per, d, 2, 3.0, seed);
        let idx: Vec<usize> = (0..ds.n()).collect();
        let (once, _) = standardize(&ds, &idx).unwrap();
        let (twice, _) = standardize(&once, &idx).unwrap();
        let max = (&once.features - &twice.features)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(max < 1e-10);
    }

    #[test]
    fn symmetrize_output_is_symmetric_and_nonnegative(
        n in 2usize..8,
        seed in any::<u64>(),
    ) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let p = prox_from_rows(rows);
        let s = symmetrize(&p).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s[[i, j]], s[[j, i]]);
                prop_assert!(s[[i, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn build_io_widths_follow_the_variant_contract(
        n in 4usize..16,
        d in 1usize..6,
        classes in 1usize..3,
        fraction in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let p = prox_from_rows(rows);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let protos = select_prototypes(&p, &labels, fraction).unwrap();
        let expected_proto_cols: usize = protos.per_class_counts.iter().sum();

        for variant in Variant::ALL {
            let (input, target) =
                build_io(variant, x.view(), Some(&p), Some(&protos)).unwrap();
            prop_assert_eq!(input.nrows(), n);
            prop_assert_eq!(target.nrows(), n);
            let (wi, wt) = (input.ncols(), target.ncols());
            match variant {
                Variant::RfGrae | Variant::RfProxReg => prop_assert_eq!((wi, wt), (d, d)),
                Variant::RfProxIn => prop_assert_eq!((wi, wt), (n, d)),
                Variant::RfPrn => prop_assert_eq!((wi, wt), (n, n)),
                Variant::RfPrnPro => {
                    prop_assert_eq!((wi, wt), (expected_proto_cols, expected_proto_cols))
                }
            }
        }
        // Per-class prototype counts obey the max(1, round(...)) floor.
        for class in 0..classes {
            let size = labels.iter().filter(|&&l| l == class).count();
            let expect = ((fraction * size as f64).round() as usize).max(1);
            prop_assert_eq!(protos.per_class_counts[class], expect);
        }
    }

    #[test]
    fn mantel_is_symmetric_in_its_arguments(
        n in 3usize..7,
        seed in any::<u64>(),
    ) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut mk = || {
            let mut d = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = rng.random::<f64>() + 0.01;
                    d[[i, j]] = v;
                    d[[j, i]] = v;
                }
            }
            d
        };
        let d1 = mk();
        let d2 = mk();
        let a = mantel(d1.view(), d2.view(), MantelMethod::Spearman, 0, 0).unwrap();
        let b = mantel(d2.view(), d1.view(), MantelMethod::Spearman, 0, 0).unwrap();
        prop_assert_eq!(a.correlation, b.correlation);
    }
}
