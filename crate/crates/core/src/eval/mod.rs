//! Embedding-quality evaluation: pairwise distances and the Mantel
//! distance-matrix correlation.

mod harness;

pub use harness::{
    mix_seed, plan_cells, run_experiment, AeSettings, AggregateRow, CellPlan, CellRecord,
    DatasetSpec, EmbedSettings, ExperimentConfig, ExperimentReport, ForestSettings,
};

use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};

/// Euclidean distances between all coordinate rows.
pub fn pairwise_distances(coords: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = coords.nrows();
    if n < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..coords.ncols() {
                let d = coords[[i, c]] - coords[[j, c]];
                acc += d * d;
            }
            let v = acc.sqrt();
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

pub fn embedding_distances(e: &Embedding) -> Result<Array2<f64>> {
    pairwise_distances(e.coords.view())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MantelMethod {
    Spearman,
    Pearson,
}

impl std::str::FromStr for MantelMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spearman" => Ok(MantelMethod::Spearman),
            "pearson" => Ok(MantelMethod::Pearson),
            other => Err(Error::invalid(format!("unknown mantel method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MantelResult {
    pub correlation: f64,
    pub method: MantelMethod,
    pub n_pairs: usize,
    pub permutation_p: Option<f64>,
}

/// Correlation between the vectorized strict upper triangles of two
/// distance matrices. Spearman ranks use average tie handling. The
/// optional permutation p-value co-permutes rows and columns of `d2`.
pub fn mantel(
    d1: ArrayView2<f64>,
    d2: ArrayView2<f64>,
    method: MantelMethod,
    n_permutations: usize,
    seed: u64,
) -> Result<MantelResult> {
    check_distance_matrix(d1)?;
    check_distance_matrix(d2)?;
    if d1.nrows() != d2.nrows() {
        return Err(Error::DimensionMismatch { expected: d1.nrows(), got: d2.nrows() });
    }
    let m = d1.nrows();
    let a = upper_triangle(d1);
    let b = upper_triangle(d2);
    let correlation = correlate(&a, &b, method)?;

    let permutation_p = if n_permutations > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..m).collect();
        let mut at_least = 1usize; // the observed statistic counts itself
        for _ in 0..n_permutations {
            order.shuffle(&mut rng);
            let mut permuted = Vec::with_capacity(b.len());
            for i in 0..m {
                for j in (i + 1)..m {
                    permuted.push(d2[[order[i], order[j]]]);
                }
            }
            let r = correlate(&a, &permuted, method)?;
            if r >= correlation {
                at_least += 1;
            }
        }
        Some(at_least as f64 / (n_permutations + 1) as f64)
    } else {
        None
    };

    Ok(MantelResult { correlation, method, n_pairs: a.len(), permutation_p })
}

fn check_distance_matrix(d: ArrayView2<f64>) -> Result<()> {
    let n = d.nrows();
    if n != d.ncols() {
        return Err(Error::NotSquare { rows: n, cols: d.ncols() });
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        if d[[i, i]] != 0.0 {
            return Err(Error::invalid(format!("nonzero diagonal at row {i}")));
        }
        for j in (i + 1)..n {
            if (d[[i, j]] - d[[j, i]]).abs() > 1e-9 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(())
}

fn upper_triangle(d: ArrayView2<f64>) -> Vec<f64> {
    let n = d.nrows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(d[[i, j]]);
        }
    }
    out
}

fn correlate(a: &[f64], b: &[f64], method: MantelMethod) -> Result<f64> {
    match method {
        MantelMethod::Pearson => pearson(a, b),
        MantelMethod::Spearman => pearson(&ranks(a), &ranks(b)),
    }
}

/// Ranks starting at 1, ties assigned their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let da = x - mean_a;
        let db = y - mean_b;
        num += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::ConstantDistances);
    }
    // sqrt(fl(v*v)) recovers v exactly, so identical inputs give exactly 1.
    Ok(num / (var_a * var_b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn naive_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let below = v.iter().filter(|&&y| y < x).count() as f64;
                let tied = v.iter().filter(|&&y| y == x).count() as f64;
                below + (tied - 1.0) / 2.0 + 1.0
            })
            .collect()
    }

    fn random_distance_matrix(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random::<f64>() + 0.01;
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
        d
    }

    #[test]
    fn pairwise_one_dimensional() {
        let coords = arr2(&[[0.0], [3.0]]);
        let d = pairwise_distances(coords.view()).unwrap();
        assert_eq!(d[[0, 1]], 3.0);
    }

    #[test]
    fn pairwise_duplicates_are_zero() {
        let coords = arr2(&[[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]);
        let d = pairwise_distances(coords.view()).unwrap();
        assert_eq!(d[[0, 1]], 0.0);
    }

    #[test]
    fn pairwise_matches_norm_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let coords = Array2::from_shape_fn((5, 2), |_| rng.random::<f64>() * 3.0);
        let d = pairwise_distances(coords.view()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dx = coords[[i, 0]] - coords[[j, 0]];
                let dy = coords[[i, 1]] - coords[[j, 1]];
                assert!((d[[i, j]] - (dx * dx + dy * dy).sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_matrices_correlate_exactly_one() {
        let d = random_distance_matrix(7, 2);
        let r = mantel(d.view(), d.view(), MantelMethod::Spearman, 0, 0).unwrap();
        assert_eq!(r.correlation, 1.0);
        assert_eq!(r.n_pairs, 21);
        let r = mantel(d.view(), d.view(), MantelMethod::Pearson, 0, 0).unwrap();
        assert_eq!(r.correlation, 1.0);
    }

    #[test]
    fn spearman_is_monotone_invariant() {
        let d1 = random_distance_matrix(6, 3);
        let squared = d1.mapv(|v| v * v);
        let r = mantel(d1.view(), squared.view(), MantelMethod::Spearman, 0, 0).unwrap();
        assert_eq!(r.correlation, 1.0);
        // An arbitrary strictly increasing transform changes nothing either.
        let warped = d1.mapv(|v| if v > 0.0 { v.exp() + 3.0 * v } else { 0.0 });
        let a = mantel(d1.view(), warped.view(), MantelMethod::Spearman, 0, 0).unwrap();
        let b = mantel(d1.view(), d1.view(), MantelMethod::Spearman, 0, 0).unwrap();
        assert_eq!(a.correlation, b.correlation);
    }

    #[test]
    fn matches_independent_rank_oracle() {
        for seed in 0..8u64 {
            let d1 = random_distance_matrix(6, 10 + seed);
            let d2 = random_distance_matrix(6, 50 + seed);
            let got = mantel(d1.view(), d2.view(), MantelMethod::Spearman, 0, 0)
                .unwrap()
                .correlation;

            let a = upper_triangle(d1.view());
            let b = upper_triangle(d2.view());
            let ra = naive_ranks(&a);
            let rb = naive_ranks(&b);
            let expect = pearson(&ra, &rb).unwrap();
            assert!((got - expect).abs() < 1e-12, "seed {seed}: {got} vs {expect}");
        }
    }

    #[test]
    fn constant_triangle_is_an_error() {
        let mut d = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    d[[i, j]] = 2.5;
                }
            }
        }
        let other = random_distance_matrix(4, 1);
        assert!(matches!(
            mantel(d.view(), other.view(), MantelMethod::Spearman, 0, 0),
            Err(Error::ConstantDistances)
        ));
    }

    #[test]
    fn permutation_p_small_for_identical_structure() {
        let d = random_distance_matrix(12, 9);
        let r = mantel(d.view(), d.view(), MantelMethod::Spearman, 199, 4).unwrap();
        let p = r.permutation_p.unwrap();
        assert!(p <= 0.05, "p = {p}");
    }

    #[test]
    fn rigid_transform_leaves_distances_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coords = Array2::from_shape_fn((8, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let angle = 0.73f64;
        let rot = arr2(&[[angle.cos(), -angle.sin()], [angle.sin(), angle.cos()]]);
        let mut moved = coords.dot(&rot);
        for mut row in moved.outer_iter_mut() {
            row[0] += 5.0;
            row[1] -= 7.0;
        }
        let d1 = pairwise_distances(coords.view()).unwrap();
        let d2 = pairwise_distances(moved.view()).unwrap();
        let max = (&d1 - &d2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-9);
    }
}
