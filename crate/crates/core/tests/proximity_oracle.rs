//! Brute-force equivalence for the proximity computations.
//!
//! The oracle re-routes every point through every tree using only the
//! node arrays and in-bag counts, tallying c_j / |M| leaf by leaf. It
//! shares no code with the leaf-group bookkeeping under test.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rfembed_core::data::{gaussian_blobs, Dataset};
use rfembed_core::forest::{fit_forest, Forest, ForestParams, Node};
use rfembed_core::proximity::{
    extend_proximities, self_similarity, train_proximities, SelfSimilarityMode,
};

fn oracle_route(nodes: &[Node], x: ArrayView1<f64>) -> usize {
    let mut i = 0usize;
    loop {
        match &nodes[i] {
            Node::Split { feature, threshold, left, right } => {
                i = if x[*feature] <= *threshold { *left } else { *right };
            }
            Node::Leaf { .. } => return i,
        }
    }
}

/// p(query -> j) accumulated tree by tree, averaging over `tree_filter`ed
/// trees, with the training features re-routed from scratch.
fn oracle_row(
    forest: &Forest,
    train_x: &Array2<f64>,
    query: ArrayView1<f64>,
    tree_filter: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let n = forest.n_train;
    let mut acc = vec![0.0f64; n];
    let mut used = 0usize;
    for (t, tree) in forest.trees.iter().enumerate() {
        if !tree_filter(t) {
            continue;
        }
        used += 1;
        let leaf = oracle_route(&tree.nodes, query);
        // Leaf occupancy from scratch: every in-bag point that routes here.
        let mut total = 0.0;
        let mut members = Vec::new();
        for j in 0..n {
            let c = tree.inbag_counts[j];
            if c > 0 && oracle_route(&tree.nodes, train_x.row(j)) == leaf {
                total += c as f64;
                members.push((j, c));
            }
        }
        if total > 0.0 {
            for (j, c) in members {
                acc[j] += c as f64 / total;
            }
        }
    }
    if used > 0 {
        for v in acc.iter_mut() {
            *v /= used as f64;
        }
    }
    acc
}

fn assert_matrix_close(got: ArrayView2<f64>, want: &[Vec<f64>], tol: f64, what: &str) {
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let g = got[[i, j]];
            assert!(
                (g - w).abs() <= tol,
                "{what}: entry ({i},{j}) {g} vs oracle {w}"
            );
        }
    }
}

fn random_case(seed: u64) -> (Dataset, Vec<usize>, ForestParams) {
    let n_per = 8 + (seed % 12) as usize;
    let classes = 2 + (seed % 3) as usize;
    let d = 2 + (seed % 4) as usize;
    let ds = gaussian_blobs(n_per, d, classes, 1.5 + (seed % 4) as f64, 900 + seed);
    let train: Vec<usize> = (0..ds.n().min(100)).collect();
    let params = ForestParams {
        n_trees: 5 + (seed % 46) as usize,
        max_depth: if seed % 3 == 0 { Some(4) } else { None },
        min_leaf: 1 + (seed % 2) as usize,
        seed,
        ..Default::default()
    };
    (ds, train, params)
}

#[test]
fn train_proximities_match_brute_force() {
    for seed in 0..8u64 {
        let (ds, train, mut params) = random_case(seed);
        // The training rows need OOB coverage: with too few trees a point
        // can be in-bag everywhere, which is a documented error.
        params.n_trees = params.n_trees.max(25);
        let forest = fit_forest(&ds, &train, &params).unwrap();
        let train_x = ds.feature_rows(&train);
        let p = train_proximities(&forest, SelfSimilarityMode::Zero).unwrap();
        let oracle: Vec<Vec<f64>> = (0..forest.n_train)
            .map(|i| {
                oracle_row(&forest, &train_x, train_x.row(i), |t| {
                    forest.trees[t].inbag_counts[i] == 0
                })
            })
            .collect();
        assert_matrix_close(p.values.view(), &oracle, 1e-12, &format!("train seed {seed}"));
    }
}

#[test]
fn extension_matches_brute_force() {
    for seed in 0..8u64 {
        let (ds, _, params) = random_case(seed);
        // Hold some rows out as queries.
        let n = ds.n();
        let split_at = n - (n / 4).max(3);
        let train: Vec<usize> = (0..split_at).collect();
        let queries: Vec<usize> = (split_at..n).collect();
        let forest = fit_forest(&ds, &train, &params).unwrap();
        let train_x = ds.feature_rows(&train);
        let query_x = ds.feature_rows(&queries);

        let p = extend_proximities(&forest, query_x.view()).unwrap();
        let oracle: Vec<Vec<f64>> = (0..query_x.nrows())
            .map(|q| oracle_row(&forest, &train_x, query_x.row(q), |_| true))
            .collect();
        assert_matrix_close(p.values.view(), &oracle, 1e-12, &format!("extend seed {seed}"));

        // Rows sum to one whenever every terminal node has in-bag points.
        for (q, row) in p.values.outer_iter().enumerate() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() <= 1e-9, "seed {seed} query {q}: row sum {sum}");
        }
    }
}

#[test]
fn self_similarity_matches_brute_force() {
    for seed in 0..6u64 {
        let (ds, train, params) = random_case(seed);
        let forest = fit_forest(&ds, &train, &params).unwrap();
        let train_x = ds.feature_rows(&train);
        for i in 0..forest.n_train {
            let inbag_somewhere = forest.trees.iter().any(|t| t.inbag_counts[i] > 0);
            if !inbag_somewhere {
                continue;
            }
            let got = self_similarity(&forest, i).unwrap();
            let row = oracle_row(&forest, &train_x, train_x.row(i), |t| {
                forest.trees[t].inbag_counts[i] > 0
            });
            assert!((got - row[i]).abs() <= 1e-12, "seed {seed} i {i}: {got} vs {}", row[i]);
            assert!(got > 0.0 && got <= 1.0 + 1e-12);
        }
    }
}
