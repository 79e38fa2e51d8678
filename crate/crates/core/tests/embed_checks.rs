//! Embedding pipeline checks: MDS against a dense eigensolver oracle,
//! metric axioms of the potential distances, and pipeline invariances.

use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rfembed_core::data::gaussian_blobs;
use rfembed_core::embed::{
    diffusion_operator, mds, potential_distances, procrustes_rmse, rfphate_embed,
    DiffusionConfig, TimeSelect,
};
use rfembed_core::eval::pairwise_distances;
use rfembed_core::forest::{fit_forest, ForestParams};

/// Test-side Jacobi rotation eigensolver, independent of the tridiagonal
/// solver and the power iteration used by the implementation.
fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[[row, src]];
        }
    }
    (values, vectors)
}

/// Classical MDS through the oracle eigensolver.
fn classical_mds_oracle(d: ArrayView2<f64>, k: usize) -> Array2<f64> {
    let n = d.nrows();
    let d2 = d.mapv(|v| v * v);
    let row_means: Vec<f64> = d2.outer_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            b[[i, j]] = -0.5 * (d2[[i, j]] - row_means[i] - row_means[j] + grand);
        }
    }
    let (values, vectors) = jacobi_eigen(&b);
    let mut coords = Array2::zeros((n, k));
    for col in 0..k.min(n) {
        if values[col] > 0.0 {
            let s = values[col].sqrt();
            for row in 0..n {
                coords[[row, col]] = vectors[[row, col]] * s;
            }
        }
    }
    coords
}

fn random_points(n: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, k), |_| rng.random::<f64>() * 4.0 - 2.0)
}

#[test]
fn mds_matches_eigendecomposition_oracle() {
    for seed in 0..6u64 {
        let points = random_points(10, 2, 40 + seed);
        let d = pairwise_distances(points.view()).unwrap();
        let result = mds(d.view(), 2, 2000, 1e-12, seed).unwrap();
        let oracle = classical_mds_oracle(d.view(), 2);
        let rmse = procrustes_rmse(result.coords.view(), oracle.view());
        assert!(rmse < 1e-6, "seed {seed}: procrustes rmse {rmse}");
        for w in result.stress.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "stress increased: {w:?}");
        }
    }
}

#[test]
fn smacof_reduces_stress_on_unrealizable_distances() {
    // Random (non-Euclidean) targets: stress stays non-increasing and the
    // refinement improves on the classical start.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 12;
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random::<f64>() * 3.0 + 0.5;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    let result = mds(d.view(), 2, 300, 1e-12, 0).unwrap();
    for w in result.stress.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
    }
    assert!(result.stress.last().unwrap() < result.stress.first().unwrap());
}

#[test]
fn potential_distances_satisfy_metric_axioms() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _case in 0..5 {
        let n = 8 + (rng.random::<u32>() % 8) as usize;
        let mut kernel = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = rng.random::<f64>();
                kernel[[i, j]] = v;
                kernel[[j, i]] = v;
            }
        }
        let p = diffusion_operator(kernel.view()).unwrap();
        let d = potential_distances(p.view(), 3).unwrap();
        for i in 0..n {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..n {
                assert_eq!(d[[i, j]], d[[j, i]]);
                assert!(d[[i, j]] >= 0.0);
                for k in 0..n {
                    assert!(
                        d[[i, j]] <= d[[i, k]] + d[[k, j]] + 1e-9,
                        "triangle violated at ({i},{j},{k})"
                    );
                }
            }
        }
    }
}

fn embed_cfg(seed: u64) -> DiffusionConfig {
    DiffusionConfig { t: TimeSelect::Auto, t_max: 16, k_dim: 2, mds_iters: 200, mds_tol: 1e-8, seed }
}

#[test]
fn separated_classes_stay_separated_in_the_embedding() {
    let ds = gaussian_blobs(15, 3, 2, 8.0, 10);
    let idx: Vec<usize> = (0..ds.n()).collect();
    let forest =
        fit_forest(&ds, &idx, &ForestParams { n_trees: 100, seed: 2, ..Default::default() })
            .unwrap();
    let result = rfphate_embed(&forest, &embed_cfg(0)).unwrap();
    assert_eq!(result.embedding.coords.nrows(), 30);
    assert_eq!(result.embedding.coords.ncols(), 2);
    assert!(result.embedding.coords.iter().all(|v| v.is_finite()));

    let d = pairwise_distances(result.embedding.coords.view()).unwrap();
    let mut max_within: f64 = 0.0;
    for i in 0..30 {
        for j in (i + 1)..30 {
            if ds.labels[i] == ds.labels[j] {
                max_within = max_within.max(d[[i, j]]);
            }
        }
    }
    let mut cross_total = 0usize;
    let mut cross_beyond = 0usize;
    for i in 0..30 {
        for j in (i + 1)..30 {
            if ds.labels[i] != ds.labels[j] {
                cross_total += 1;
                if d[[i, j]] > max_within {
                    cross_beyond += 1;
                }
            }
        }
    }
    let frac = cross_beyond as f64 / cross_total as f64;
    assert!(frac >= 0.95, "only {frac} of cross pairs exceed the within spread");
}

#[test]
fn embedding_is_deterministic_under_a_fixed_seed() {
    let ds = gaussian_blobs(12, 3, 2, 5.0, 21);
    let idx: Vec<usize> = (0..ds.n()).collect();
    let params = ForestParams { n_trees: 50, seed: 9, ..Default::default() };
    let f1 = fit_forest(&ds, &idx, &params).unwrap();
    let f2 = fit_forest(&ds, &idx, &params).unwrap();
    let e1 = rfphate_embed(&f1, &embed_cfg(3)).unwrap();
    let e2 = rfphate_embed(&f2, &embed_cfg(3)).unwrap();
    assert_eq!(e1.embedding.coords, e2.embedding.coords);
    assert_eq!(e1.t, e2.t);
}

#[test]
fn embedding_commutes_with_training_row_permutation() {
    let ds = gaussian_blobs(12, 3, 2, 4.0, 33);
    let n = ds.n();
    let fwd: Vec<usize> = (0..n).collect();
    let mut perm = fwd.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    perm.shuffle(&mut rng);

    let params = ForestParams { n_trees: 60, seed: 4, ..Default::default() };
    let e_fwd = rfphate_embed(&fit_forest(&ds, &fwd, &params).unwrap(), &embed_cfg(1)).unwrap();
    let e_perm = rfphate_embed(&fit_forest(&ds, &perm, &params).unwrap(), &embed_cfg(1)).unwrap();

    assert_eq!(e_fwd.t, e_perm.t);
    for (r, &orig) in perm.iter().enumerate() {
        for c in 0..2 {
            let a = e_perm.embedding.coords[[r, c]];
            let b = e_fwd.embedding.coords[[orig, c]];
            assert!(
                (a - b).abs() < 1e-8,
                "row {r} (original {orig}) dim {c}: {a} vs {b}"
            );
        }
    }
}
