//! Reference embedding pipeline: proximity kernel -> row-stochastic
//! diffusion operator -> t-step potential distances -> metric MDS.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::linalg::{symmetric_eigenvalues, top_eigenpairs_power};
use crate::proximity::{symmetrize, train_proximities, SelfSimilarityMode};

/// Additive floor inside the potential log transform.
pub const POTENTIAL_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    ReferencePipeline,
    Encoder,
}

/// An n-by-k coordinate matrix.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub coords: Array2<f64>,
    pub source: EmbeddingSource,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn k(&self) -> usize {
        self.coords.ncols()
    }
}

/// Diffusion time: explicit, or selected from the entropy curve knee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSelect {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub t: TimeSelect,
    /// Largest diffusion time scanned when `t` is `Auto`.
    pub t_max: usize,
    pub k_dim: usize,
    pub mds_iters: usize,
    pub mds_tol: f64,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            t: TimeSelect::Auto,
            t_max: 64,
            k_dim: 2,
            mds_iters: 500,
            mds_tol: 1e-6,
            seed: 0,
        }
    }
}

/// Row-normalize a symmetric nonnegative kernel into a stochastic operator.
pub fn diffusion_operator(kernel: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = kernel.nrows();
    if n != kernel.ncols() {
        return Err(Error::NotSquare { rows: n, cols: kernel.ncols() });
    }
    let scale = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..n {
        for j in (i + 1)..n {
            if (kernel[[i, j]] - kernel[[j, i]]).abs() > 1e-9 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    if let Some(bad) = kernel.iter().find(|v| **v < 0.0) {
        return Err(Error::invalid(format!("negative kernel entry {bad}")));
    }
    let mut out = kernel.to_owned();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let sum: f64 = row.sum();
        if sum <= 0.0 {
            return Err(Error::ZeroKernelRow { index: i });
        }
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Spectrum magnitudes of the operator, via its symmetric conjugate.
///
/// A row-stochastic operator built from a symmetric kernel is reversible:
/// d_i P_ij = d_j P_ji for the kernel row sums d. The conjugate
/// D^{1/2} P D^{-1/2} is then symmetric with the same eigenvalues, and d
/// is recovered up to a per-component scale (which cancels) from the
/// pairwise ratios P_ji / P_ij.
fn operator_spectrum(p_op: ArrayView2<f64>) -> Result<Vec<f64>> {
    let n = p_op.nrows();
    let mut d = vec![0.0f64; n];
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if d[start] != 0.0 {
            continue;
        }
        d[start] = 1.0;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if d[v] == 0.0 && p_op[[u, v]] > 0.0 && p_op[[v, u]] > 0.0 {
                    d[v] = d[u] * p_op[[u, v]] / p_op[[v, u]];
                    queue.push_back(v);
                }
            }
        }
    }
    let sqrt_d: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let mut conjugate = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            conjugate[[i, j]] = sqrt_d[i] * p_op[[i, j]] / sqrt_d[j];
        }
    }
    // Symmetrize away the floating-point residue of the conjugation.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (conjugate[[i, j]] + conjugate[[j, i]]);
            conjugate[[i, j]] = m;
            conjugate[[j, i]] = m;
        }
    }
    let values = symmetric_eigenvalues(conjugate.view())?;
    Ok(values.into_iter().map(f64::abs).collect())
}

/// Entropy of the normalized t-step spectrum, for t = 1..=t_max.
pub fn von_neumann_entropies(p_op: ArrayView2<f64>, t_max: usize) -> Result<Vec<f64>> {
    let magnitudes = operator_spectrum(p_op)?;
    let mut out = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let powered: Vec<f64> = magnitudes.iter().map(|m| m.powi(t as i32)).collect();
        let total: f64 = powered.iter().sum();
        let mut h = 0.0;
        if total > 0.0 {
            for p in powered {
                let p = p / total;
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Index of the curve point farthest from the chord between the curve's
/// endpoints; earliest index wins ties. Input is indexed from t = 1.
pub fn knee_point(curve: &[f64]) -> usize {
    let m = curve.len();
    if m < 2 {
        return 1;
    }
    let (x1, y1) = (1.0, curve[0]);
    let (x2, y2) = (m as f64, curve[m - 1]);
    let len = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
    // Improvements below the noise floor keep the earlier (smaller) t, so
    // flat curves resolve to t = 1 despite eigensolver jitter.
    let floor = 1e-9 * (1.0 + curve.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut best_t = 1;
    let mut best_dist = 0.0;
    for (i, &y) in curve.iter().enumerate() {
        let x = (i + 1) as f64;
        let dist = ((y2 - y1) * x - (x2 - x1) * y + x2 * y1 - y2 * x1).abs() / len;
        if dist > best_dist + floor {
            best_dist = dist;
            best_t = i + 1;
        }
    }
    best_t
}

/// Diffusion time at the knee of the entropy curve.
pub fn von_neumann_entropy_t(p_op: ArrayView2<f64>, t_max: usize) -> Result<usize> {
    if t_max < 3 {
        return Err(Error::invalid("t_max must be at least 3"));
    }
    let curve = von_neumann_entropies(p_op, t_max)?;
    Ok(knee_point(&curve))
}

fn matrix_power(p: &Array2<f64>, mut t: usize) -> Array2<f64> {
    assert!(t >= 1);
    let mut result: Option<Array2<f64>> = None;
    let mut base = p.clone();
    loop {
        if t & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.dot(&base),
            });
        }
        t >>= 1;
        if t == 0 {
            break;
        }
        base = base.dot(&base);
    }
    result.expect("t >= 1")
}

/// Pairwise Euclidean distances between the negative-log rows of the
/// t-step operator. Symmetric with zero diagonal by construction.
pub fn potential_distances(p_op: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
    if t < 1 {
        return Err(Error::invalid("diffusion time must be at least 1"));
    }
    let n = p_op.nrows();
    if n != p_op.ncols() {
        return Err(Error::NotSquare { rows: n, cols: p_op.ncols() });
    }
    let stepped = matrix_power(&p_op.to_owned(), t);
    let potential = stepped.mapv(|v| -(v + POTENTIAL_EPSILON).ln());

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ui = potential.row(i);
            (i + 1..n)
                .map(|j| {
                    let uj = potential.row(j);
                    let mut acc = 0.0;
                    for (a, b) in ui.iter().zip(uj.iter()) {
                        let d = a - b;
                        acc += d * d;
                    }
                    acc.sqrt()
                })
                .collect()
        })
        .collect();

    let mut out = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MdsResult {
    pub coords: Array2<f64>,
    /// Raw stress after each iteration, starting at the classical init.
    pub stress: Vec<f64>,
    /// Final stress divided by the sum of squared target distances.
    pub normalized_stress: f64,
    pub iterations: usize,
}

/// Metric MDS: classical double-centering initialization refined by
/// SMACOF majorization. Stress is non-increasing across iterations; the
/// loop stops at `max_iters` or when the relative stress change drops
/// below `tol`.
pub fn mds(
    d: ArrayView2<f64>,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<MdsResult> {
    let n = d.nrows();
    if n != d.ncols() {
        return Err(Error::NotSquare { rows: n, cols: d.ncols() });
    }
    if k < 1 {
        return Err(Error::invalid("embedding dimension must be at least 1"));
    }
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        if d[[i, i]] != 0.0 {
            return Err(Error::invalid(format!("nonzero diagonal at row {i}")));
        }
        for j in (i + 1)..n {
            if (d[[i, j]] - d[[j, i]]).abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::NotSymmetric);
            }
            if d[[i, j]] < 0.0 {
                return Err(Error::invalid("negative distance"));
            }
        }
    }

    let mut coords = classical_init(d, k, seed);
    let mut stress_history = vec![raw_stress(coords.view(), d)];
    let mut iterations = 0;
    for _ in 0..max_iters {
        coords = guttman_update(coords.view(), d);
        iterations += 1;
        let s = raw_stress(coords.view(), d);
        let prev = stress_history[stress_history.len() - 1];
        stress_history.push(s);
        if prev <= 0.0 {
            break;
        }
        if (prev - s) / prev < tol {
            break;
        }
    }

    let denom: f64 = {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += d[[i, j]] * d[[i, j]];
            }
        }
        acc
    };
    let last = *stress_history.last().unwrap();
    let normalized_stress = if denom > 0.0 { last / denom } else { 0.0 };
    Ok(MdsResult { coords, stress: stress_history, normalized_stress, iterations })
}

fn classical_init(d: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
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
    let k_eff = k.min(n);
    let (values, vectors) = top_eigenpairs_power(&b, k_eff, 5000, 1e-12, seed);
    let mut coords = Array2::zeros((n, k));
    for (col, &value) in values.iter().enumerate() {
        if value > 0.0 {
            let s = value.sqrt();
            for row in 0..n {
                coords[[row, col]] = vectors[[row, col]] * s;
            }
        }
    }
    coords
}

fn pairwise(coords: ArrayView2<f64>) -> Array2<f64> {
    let n = coords.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..coords.ncols() {
                let diff = coords[[i, c]] - coords[[j, c]];
                acc += diff * diff;
            }
            let v = acc.sqrt();
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

fn raw_stress(coords: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let dist = pairwise(coords);
    let n = coords.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = target[[i, j]] - dist[[i, j]];
            acc += diff * diff;
        }
    }
    acc
}

fn guttman_update(coords: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    let n = coords.nrows();
    let dist = pairwise(coords);
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let v = if dist[[i, j]] > 1e-300 { -target[[i, j]] / dist[[i, j]] } else { 0.0 };
            b[[i, j]] = v;
            diag -= v;
        }
        b[[i, i]] = diag;
    }
    b.dot(&coords) / n as f64
}

/// Full reference embedding of a fitted forest's training points.
pub struct RfphateResult {
    pub embedding: Embedding,
    pub t: usize,
    pub normalized_stress: f64,
    pub mds_iterations: usize,
}

pub fn rfphate_embed(forest: &Forest, cfg: &DiffusionConfig) -> Result<RfphateResult> {
    let prox = train_proximities(forest, SelfSimilarityMode::Zero)?;
    let kernel = symmetrize(&prox)?;
    let p_op = diffusion_operator(kernel.view())?;
    let t = match cfg.t {
        TimeSelect::Fixed(t) => {
            if t < 1 {
                return Err(Error::invalid("diffusion time must be at least 1"));
            }
            t
        }
        TimeSelect::Auto => von_neumann_entropy_t(p_op.view(), cfg.t_max)?,
    };
    let distances = potential_distances(p_op.view(), t)?;
    let result = mds(distances.view(), cfg.k_dim, cfg.mds_iters, cfg.mds_tol, cfg.seed)?;
    Ok(RfphateResult {
        embedding: Embedding {
            coords: result.coords,
            source: EmbeddingSource::ReferencePipeline,
        },
        t,
        normalized_stress: result.normalized_stress,
        mds_iterations: result.iterations,
    })
}

/// Root-mean-square coordinate error between two point sets after optimal
/// translation and orthogonal alignment (rotations and reflections).
pub fn procrustes_rmse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "point sets must share a shape");
    let n = a.nrows();
    let k = a.ncols();
    let center = |m: ArrayView2<f64>| {
        let mean: Array1<f64> = m.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let mut out = m.to_owned();
        for mut row in out.outer_iter_mut() {
            row -= &mean;
        }
        out
    };
    let ac = center(a);
    let bc = center(b);
    let m = ac.t().dot(&bc);

    // SVD of the small k-by-k cross matrix via its symmetric Gram form.
    let mtm = m.t().dot(&m);
    let (sq_values, v) = crate::linalg::symmetric_eigen(mtm.view()).expect("square input");
    let sigma_max = sq_values.first().map_or(0.0, |s| s.max(0.0).sqrt());
    let mut u = Array2::zeros((k, k));
    let mut filled = vec![false; k];
    for c in 0..k {
        let sigma = sq_values[c].max(0.0).sqrt();
        if sigma > sigma_max * 1e-12 && sigma > 0.0 {
            let col = m.dot(&v.column(c).to_owned()) / sigma;
            for r in 0..k {
                u[[r, c]] = col[r];
            }
            filled[c] = true;
        }
    }
    // Complete degenerate columns to an orthonormal basis.
    for c in 0..k {
        if filled[c] {
            continue;
        }
        for candidate in 0..k {
            let mut col = Array1::zeros(k);
            col[candidate] = 1.0;
            for c2 in 0..k {
                if c2 == c || !filled[c2] {
                    continue;
                }
                let proj = u.column(c2).dot(&col);
                let existing = u.column(c2).to_owned();
                col = col - existing * proj;
            }
            let norm = col.dot(&col).sqrt();
            if norm > 1e-8 {
                col /= norm;
                for r in 0..k {
                    u[[r, c]] = col[r];
                }
                filled[c] = true;
                break;
            }
        }
    }
    let rotation = u.dot(&v.t());
    let aligned = ac.dot(&rotation);
    let mut acc = 0.0;
    for i in 0..n {
        for c in 0..k {
            let d = aligned[[i, c]] - bc[[i, c]];
            acc += d * d;
        }
    }
    (acc / n as f64).sqrt()
}

/// CSV export: `dim_0..dim_{k-1}` columns plus the original row index.
pub fn write_embedding_csv(
    e: &Embedding,
    row_ids: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    if row_ids.len() != e.n() {
        return Err(Error::DimensionMismatch { expected: e.n(), got: row_ids.len() });
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..e.k()).map(|c| format!("dim_{c}")).collect();
    header.push("index".to_string());
    w.write_record(&header)?;
    for (i, row) in e.coords.outer_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        record.push(row_ids[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Load coordinates written by [`write_embedding_csv`]; returns the
/// coordinate matrix and the original row indices.
pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let k = headers.iter().filter(|h| h.starts_with("dim_")).count();
    if k == 0 || headers.last().map(String::as_str) != Some("index") {
        return Err(Error::invalid("not an embedding CSV"));
    }
    let mut coords_rows = Vec::new();
    let mut ids = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(k);
        for c in 0..k {
            row.push(
                record[c]
                    .parse::<f64>()
                    .map_err(|_| Error::invalid("bad coordinate value"))?,
            );
        }
        ids.push(
            record[k]
                .parse::<usize>()
                .map_err(|_| Error::invalid("bad index value"))?,
        );
        coords_rows.push(row);
    }
    let n = coords_rows.len();
    let mut coords = Array2::zeros((n, k));
    for (i, row) in coords_rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            coords[[i, j]] = v;
        }
    }
    Ok((coords, ids))
}
