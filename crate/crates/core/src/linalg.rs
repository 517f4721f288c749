//! Small dense helpers. Everything here works on dimensions of a few dozen at
//! most, so plain loops over slices are used instead of a BLAS backend.

use ndarray::{Array1, ArrayView1};

pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(a: ArrayView1<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the component of `a` along the unit vector `u`.
pub fn reject(a: ArrayView1<f64>, u: ArrayView1<f64>) -> Array1<f64> {
    let c = dot(a, u);
    &a - &(&u * c)
}

/// Orthonormal basis of the orthogonal complement of `span(vectors)` in R^dim,
/// built by modified Gram-Schmidt over the spanning set followed by the
/// canonical basis. Vectors whose residual norm falls below `rank_tol` (relative
/// to their original norm) are treated as dependent.
pub fn orthogonal_complement(vectors: &[Array1<f64>], dim: usize, rank_tol: f64) -> Vec<Array1<f64>> {
    let mut span: Vec<Array1<f64>> = Vec::new();
    for v in vectors {
        if let Some(q) = gram_schmidt_step(&span, v.view(), rank_tol) {
            span.push(q);
        }
    }
    let mut complement: Vec<Array1<f64>> = Vec::new();
    for axis in 0..dim {
        let mut e = Array1::zeros(dim);
        e[axis] = 1.0;
        let all: Vec<Array1<f64>> = span.iter().chain(complement.iter()).cloned().collect();
        if let Some(q) = gram_schmidt_step(&all, e.view(), 1e-8) {
            complement.push(q);
        }
    }
    complement
}

fn gram_schmidt_step(basis: &[Array1<f64>], v: ArrayView1<f64>, rank_tol: f64) -> Option<Array1<f64>> {
    let scale = norm(v);
    if scale == 0.0 {
        return None;
    }
    let mut r = v.to_owned();
    // two passes keep the result orthogonal to working precision
    for _ in 0..2 {
        for q in basis {
            let c = dot(r.view(), q.view());
            r.scaled_add(-c, q);
        }
    }
    let n = norm(r.view());
    if n <= rank_tol * scale {
        None
    } else {
        Some(r / n)
    }
}

/// Non-negative least squares, `min ||A x - b||` subject to `x >= 0`, by the
/// Lawson-Hanson active set method. `columns` holds the columns of `A`.
///
/// Returns `None` when the iteration cap is hit.
pub fn nnls(columns: &[Array1<f64>], b: ArrayView1<f64>, max_iter: usize) -> Option<Array1<f64>> {
    let n = columns.len();
    let mut x = Array1::<f64>::zeros(n);
    if n == 0 {
        return Some(x);
    }
    let scale = columns.iter().map(|c| norm(c.view())).fold(norm(b), f64::max).max(1e-300);
    let tol = 1e-12 * scale * scale;
    let mut passive = vec![false; n];
    let residual = |x: &Array1<f64>| {
        let mut r = b.to_owned();
        for (c, xi) in columns.iter().zip(x.iter()) {
            if *xi != 0.0 {
                r.scaled_add(-*xi, c);
            }
        }
        r
    };
    let mut iter = 0;
    loop {
        let r = residual(&x);
        let grad: Vec<f64> = columns.iter().map(|c| dot(c.view(), r.view())).collect();
        let candidate = (0..n)
            .filter(|&k| !passive[k] && grad[k] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(t) = candidate else {
            return Some(x);
        };
        passive[t] = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return None;
            }
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let z = least_squares(columns, &idx, b)?;
            if z.iter().all(|&v| v > 0.0) {
                for (p, &k) in idx.iter().enumerate() {
                    x[k] = z[p];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (p, &k) in idx.iter().enumerate() {
                if z[p] <= 0.0 {
                    let a = x[k] / (x[k] - z[p]);
                    alpha = alpha.min(a);
                }
            }
            for (p, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z[p] - x[k]);
                if x[k] <= 1e-15 * scale {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
    }
}

/// Unconstrained least squares restricted to the columns in `idx`, solved
/// through the normal equations with Cholesky plus a tiny ridge for rank
/// deficient column sets.
fn least_squares(columns: &[Array1<f64>], idx: &[usize], b: ArrayView1<f64>) -> Option<Vec<f64>> {
    let m = idx.len();
    let mut g = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut trace = 0.0;
    for (p, &a) in idx.iter().enumerate() {
        for (q, &c) in idx.iter().enumerate() {
            g[p * m + q] = dot(columns[a].view(), columns[c].view());
        }
        trace += g[p * m + p];
        rhs[p] = dot(columns[a].view(), b);
    }
    let ridge = 1e-13 * (trace / m as f64).max(1e-300);
    for p in 0..m {
        g[p * m + p] += ridge;
    }
    solve_spd(&mut g, &mut rhs, m)?;
    Some(rhs)
}

/// In-place Cholesky solve of a symmetric positive definite system.
pub fn solve_spd(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if s <= 0.0 || !s.is_finite() {
            return None;
        }
        let l = s.sqrt();
        a[j * n + j] = l;
        for i in (j + 1)..n {
            let mut t = a[i * n + j];
            for k in 0..j {
                t -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = t / l;
        }
    }
    for i in 0..n {
        let mut t = b[i];
        for k in 0..i {
            t -= a[i * n + k] * b[k];
        }
        b[i] = t / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut t = b[i];
        for k in (i + 1)..n {
            t -= a[k * n + i] * b[k];
        }
        b[i] = t / a[i * n + i];
    }
    Some(())
}
