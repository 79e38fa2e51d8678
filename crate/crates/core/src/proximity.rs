//! Forest-derived proximities.
//!
//! For a query point x0 and training point j, each tree contributes
//! `c_j(t) / |M_0(t)|` when j is in-bag in the terminal node x0 reaches,
//! where `c_j(t)` is j's bootstrap multiplicity and `|M_0(t)|` the node's
//! total in-bag multiplicity. Out-of-sample rows average over all trees;
//! training rows average only over trees where the row point is out-of-bag,
//! so every point is scored as held-out data. Rows sum to one whenever each
//! terminal node reached contains at least one in-bag point; a node empty
//! of in-bag points (impossible under full-size bootstraps) contributes 0.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityKind {
    Train,
    OutOfSample,
}

/// How the diagonal of a training proximity matrix is filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfSimilarityMode {
    /// Diagonal fixed at zero; rows sum to one.
    #[default]
    Zero,
    /// Diagonal set by re-passing each point down the trees where it is
    /// in-bag, putting self-similarity on the same scale as the other
    /// entries of its row (almost always dominating them).
    InbagPassdown,
}

impl std::fmt::Display for SelfSimilarityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelfSimilarityMode::Zero => write!(f, "zero"),
            SelfSimilarityMode::InbagPassdown => write!(f, "passdown"),
        }
    }
}

/// Dense nonnegative similarity block; rows are query points, columns are
/// training points in forest-local order.
#[derive(Debug, Clone)]
pub struct ProximityMatrix {
    pub values: Array2<f64>,
    pub kind: ProximityKind,
    pub mode: SelfSimilarityMode,
}

impl ProximityMatrix {
    pub fn n_queries(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_train(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.values.nrows() == self.values.ncols()
    }
}

/// Per-leaf in-bag membership of one tree.
struct LeafGroups {
    /// `members[node]` lists `(local_index, multiplicity)` of in-bag points.
    members: Vec<Vec<(u32, u32)>>,
    /// Total in-bag multiplicity per node.
    totals: Vec<f64>,
}

fn leaf_groups(tree: &Tree) -> LeafGroups {
    let mut members = vec![Vec::new(); tree.nodes.len()];
    let mut totals = vec![0.0; tree.nodes.len()];
    for (j, &c) in tree.inbag_counts.iter().enumerate() {
        if c > 0 {
            let leaf = tree.leaf_of_train[j] as usize;
            members[leaf].push((j as u32, c));
            totals[leaf] += c as f64;
        }
    }
    LeafGroups { members, totals }
}

fn all_leaf_groups(forest: &Forest) -> Vec<LeafGroups> {
    forest.trees.par_iter().map(leaf_groups).collect()
}

/// Proximities from unlabeled query points to every training point.
///
/// Every query is treated as out-of-bag in every tree, so the average runs
/// over the whole forest. No label information is consumed.
pub fn extend_proximities(forest: &Forest, queries: ArrayView2<f64>) -> Result<ProximityMatrix> {
    if forest.trees.is_empty() {
        return Err(Error::invalid("empty forest"));
    }
    if queries.ncols() != forest.n_features {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features,
            got: queries.ncols(),
        });
    }
    let groups = all_leaf_groups(forest);
    let n = forest.n_train;
    let scale = 1.0 / forest.trees.len() as f64;

    let rows: Vec<Vec<f64>> = (0..queries.nrows())
        .into_par_iter()
        .map(|r| {
            let q = queries.row(r);
            let mut acc = vec![0.0f64; n];
            for (tree, g) in forest.trees.iter().zip(&groups) {
                let leaf = tree.route(q) as usize;
                let total = g.totals[leaf];
                if total == 0.0 {
                    continue;
                }
                for &(j, c) in &g.members[leaf] {
                    acc[j as usize] += c as f64 / total;
                }
            }
            for v in acc.iter_mut() {
                *v *= scale;
            }
            acc
        })
        .collect();

    Ok(ProximityMatrix {
        values: rows_to_matrix(rows, n),
        kind: ProximityKind::OutOfSample,
        mode: SelfSimilarityMode::Zero,
    })
}

/// Pairwise proximities among the training points.
///
/// Row i averages only over trees where point i is out-of-bag; the error
/// names any point that is in-bag in every tree (the remedy is more trees).
pub fn train_proximities(forest: &Forest, mode: SelfSimilarityMode) -> Result<ProximityMatrix> {
    if forest.trees.is_empty() {
        return Err(Error::invalid("empty forest"));
    }
    let groups = all_leaf_groups(forest);
    let n = forest.n_train;

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut acc = vec![0.0f64; n];
            let mut oob_trees = 0usize;
            for (tree, g) in forest.trees.iter().zip(&groups) {
                if tree.inbag_counts[i] != 0 {
                    continue;
                }
                oob_trees += 1;
                let leaf = tree.leaf_of_train[i] as usize;
                let total = g.totals[leaf];
                if total == 0.0 {
                    continue;
                }
                for &(j, c) in &g.members[leaf] {
                    acc[j as usize] += c as f64 / total;
                }
            }
            if oob_trees == 0 {
                return Err(Error::NeverOob { index: forest.train_indices[i] });
            }
            let scale = 1.0 / oob_trees as f64;
            for v in acc.iter_mut() {
                *v *= scale;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = rows_to_matrix(rows, n);
    if mode == SelfSimilarityMode::InbagPassdown {
        for i in 0..n {
            values[[i, i]] = self_similarity(forest, i)?;
        }
    }
    Ok(ProximityMatrix { values, kind: ProximityKind::Train, mode })
}

/// Self-similarity of training point i: the proximity an identical
/// held-out copy would receive from the trees where i is in-bag.
pub fn self_similarity(forest: &Forest, i: usize) -> Result<f64> {
    if i >= forest.n_train {
        return Err(Error::DimensionMismatch { expected: forest.n_train, got: i });
    }
    let mut acc = 0.0;
    let mut inbag_trees = 0usize;
    for tree in &forest.trees {
        let c = tree.inbag_counts[i];
        if c == 0 {
            continue;
        }
        inbag_trees += 1;
        let leaf = tree.leaf_of_train[i] as usize;
        let mut total = 0.0f64;
        for (j, &cj) in tree.inbag_counts.iter().enumerate() {
            if cj > 0 && tree.leaf_of_train[j] == leaf as u32 {
                total += cj as f64;
            }
        }
        acc += c as f64 / total;
    }
    if inbag_trees == 0 {
        return Err(Error::NeverInbag { index: forest.train_indices[i] });
    }
    Ok(acc / inbag_trees as f64)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, n_cols: usize) -> Array2<f64> {
    let n_rows = rows.len();
    let mut flat = Vec::with_capacity(n_rows * n_cols);
    for row in rows {
        debug_assert_eq!(row.len(), n_cols);
        flat.extend(row);
    }
    Array2::from_shape_vec((n_rows, n_cols), flat).expect("row-major layout")
}

/// Per-class representatives with the highest average within-class
/// proximity (diagonal excluded), `max(1, round(fraction * class size))`
/// per class, ties broken by lower index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub indices: Vec<usize>,
    pub per_class_counts: Vec<usize>,
    pub fraction: f64,
}

pub fn select_prototypes(
    p: &ProximityMatrix,
    labels: &[usize],
    fraction: f64,
) -> Result<PrototypeSet> {
    if !p.is_square() {
        return Err(Error::NotSquare { rows: p.values.nrows(), cols: p.values.ncols() });
    }
    if labels.len() != p.n_train() {
        return Err(Error::DimensionMismatch { expected: p.n_train(), got: labels.len() });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("prototype fraction must be in (0, 1]"));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut indices = Vec::new();
    let mut per_class_counts = vec![0usize; n_classes];
    for class in 0..n_classes {
        let members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut scored: Vec<(f64, usize)> = members
            .iter()
            .map(|&i| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for &j in &members {
                    if j != i {
                        sum += p.values[[i, j]];
                        count += 1;
                    }
                }
                let mean = if count > 0 { sum / count as f64 } else { 0.0 };
                (mean, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let k = ((fraction * members.len() as f64).round() as usize).max(1);
        per_class_counts[class] = k;
        indices.extend(scored[..k].iter().map(|&(_, i)| i));
    }
    indices.sort_unstable();
    Ok(PrototypeSet { indices, per_class_counts, fraction })
}

/// Arithmetic-mean symmetrization `(P + P^T) / 2`.
pub fn symmetrize(p: &ProximityMatrix) -> Result<Array2<f64>> {
    if !p.is_square() {
        return Err(Error::NotSquare { rows: p.values.nrows(), cols: p.values.ncols() });
    }
    let n = p.n_train();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = 0.5 * (p.values[[i, j]] + p.values[[j, i]]);
        }
    }
    Ok(out)
}

/// Dense CSV export with row/column index headers.
pub fn write_proximity_csv(
    p: &ProximityMatrix,
    row_ids: &[usize],
    col_ids: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    if row_ids.len() != p.n_queries() || col_ids.len() != p.n_train() {
        return Err(Error::invalid("row/column id lengths do not match the matrix"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![String::new()];
    header.extend(col_ids.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (r, row) in p.values.outer_iter().enumerate() {
        let mut record = vec![row_ids[r].to_string()];
        record.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
