//! Dense symmetric eigensolvers used by the embedding pipeline.

use ndarray::{Array1, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// All eigenvalues and eigenvectors of a symmetric matrix, sorted by
/// descending eigenvalue. Householder tridiagonalization followed by the
/// implicitly shifted QL iteration; vectors are returned as columns.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::NotSquare { rows: n, cols: a.ncols() });
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut v: Vec<f64> = a.iter().copied().collect();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2(&mut v, &mut d, &mut e, n);
    tql2(&mut v, &mut d, &mut e, n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[row * n + src];
        }
    }
    Ok((values, vectors))
}

/// Eigenvalues only, sorted descending.
pub fn symmetric_eigenvalues(a: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(symmetric_eigen(a)?.0)
}

// Householder reduction to tridiagonal form, accumulating transformations.
fn tred2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let l = i - 1;
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[l];
            for j in 0..i {
                d[j] = v[at(l, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let f = d[l];
            let mut g = if f > 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            d[l] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..=l {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..=l {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(l, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..(n - 1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit-shift QL iteration on the tridiagonal form.
fn tql2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 50 {
                    return Err(Error::invalid("eigensolver failed to converge"));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Top-k eigenpairs of a symmetric matrix by magnitude, found through
/// power iteration with deflation. Start vectors are taken from matrix
/// columns (largest norm first) so the result depends only on the matrix
/// content; a seeded random start is the last resort for degenerate
/// columns. Returned pairs are sorted by descending eigenvalue.
pub fn top_eigenpairs_power(
    a: &Array2<f64>,
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let k = k.min(n);
    let mut deflated = a.clone();
    let mut pairs: Vec<(f64, Array1<f64>)> = Vec::new();

    for _ in 0..k {
        match dominant_eigenpair(&deflated, max_iter, tol, seed) {
            Some((value, vector)) => {
                // Deflate: remove the found component.
                for i in 0..n {
                    for j in 0..n {
                        deflated[[i, j]] -= value * vector[i] * vector[j];
                    }
                }
                pairs.push((value, vector));
            }
            None => break,
        }
    }

    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let found = pairs.len();
    let mut values = vec![0.0; k];
    let mut vectors = Array2::zeros((n, k));
    for (col, (value, vector)) in pairs.into_iter().enumerate().take(found) {
        values[col] = value;
        for row in 0..n {
            vectors[[row, col]] = vector[row];
        }
    }
    (values, vectors)
}

fn dominant_eigenpair(
    a: &Array2<f64>,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Option<(f64, Array1<f64>)> {
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }

    // Candidate starts: matrix columns by descending norm, then random.
    let mut col_order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).dot(&a.column(j))).collect();
    col_order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut best: Option<(f64, Array1<f64>, f64)> = None;
    for attempt in 0..col_order.len().min(3) + 1 {
        let mut v: Array1<f64> = if attempt < col_order.len().min(3) {
            a.column(col_order[attempt]).to_owned()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Array1::from_iter((0..n).map(|_| rng.random::<f64>() - 0.5))
        };
        let norm = v.dot(&v).sqrt();
        if norm < scale * 1e-14 {
            continue;
        }
        v /= norm;

        let mut lambda = 0.0;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let w = a.dot(&v);
            lambda = v.dot(&w);
            let mut r = 0.0;
            for i in 0..n {
                let diff = w[i] - lambda * v[i];
                r += diff * diff;
            }
            residual = r.sqrt();
            let wnorm = w.dot(&w).sqrt();
            if wnorm < scale * 1e-15 {
                // v is (numerically) in the null space.
                lambda = 0.0;
                residual = 0.0;
                break;
            }
            v = w / wnorm;
            if residual <= tol * lambda.abs().max(scale * 1e-12) {
                break;
            }
        }
        let good = residual <= tol * lambda.abs().max(scale * 1e-12);
        if good {
            return Some((lambda, v));
        }
        if best.as_ref().is_none_or(|(_, _, r)| residual < *r) {
            best = Some((lambda, v, residual));
        }
    }
    best.map(|(l, v, _)| (l, v))
}
