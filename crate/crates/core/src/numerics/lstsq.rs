//! Minimum-norm least squares `K = Y pinv(X)` for wide data matrices.
//!
//! A column-pivoted Householder QR of `X^T` is stopped once the remaining
//! columns are negligible, and the Jacobi SVD only sees the small
//! triangular factor. This gives the same operator as forming `pinv(X)` in
//! full but costs `O(D q k)` for numerical rank `k` instead of a Jacobi
//! sweep over the whole `D x q` matrix.

use crate::error::{dim_err, Error, Result};

use super::matrix::{dot, Matrix};
use super::svd::svd;

/// Returns `Y pinv(X)` with singular values of `X` at or below
/// `rel_tol * sigma_max` (and beyond `rank`, if given) discarded, together
/// with the number of singular values kept. `X` is `q x D`, `Y` is `p x D`.
pub fn right_pinv_solve(x: &Matrix, y: &Matrix, rel_tol: f64, rank: Option<usize>) -> Result<(Matrix, usize)> {
    let (q, m) = x.shape();
    let p = y.rows();
    if y.cols() != m {
        return dim_err(format!("{m} feature snapshots for {} targets", y.cols()));
    }
    if q == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty least-squares problem".into()));
    }
    if !(rel_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {rel_tol} must be non-negative")));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidArgument("least-squares data are not finite".into()));
    }
    // Column j of A = X^T is row j of X, already contiguous; likewise B = Y^T.
    let mut a = x.data().to_vec();
    let mut b = y.data().to_vec();
    let mut perm: Vec<usize> = (0..q).collect();
    let mut norms: Vec<f64> = (0..q).map(|j| col_norm2(&a, m, j, 0)).collect();
    let mut diag = Vec::new();
    let max_steps = q.min(m);
    let mut stop = 0.0;
    let mut k = 0;
    while k < max_steps {
        let (piv, &best) = norms[k..]
            .iter()
            .enumerate()
            .max_by(|l, r| l.1.total_cmp(r.1).then(r.0.cmp(&l.0)))
            .expect("non-empty tail");
        let piv = piv + k;
        if k == 0 {
            // The tail dropped below this bound has Frobenius norm far under
            // the truncation level rel_tol * sigma_max >= rel_tol * |R_11|.
            stop = rel_tol.min(1.0) * best.sqrt() * 1e-3 / (q as f64).sqrt();
        }
        if best.sqrt() <= stop || best == 0.0 {
            break;
        }
        if piv != k {
            swap_cols(&mut a, m, k, piv);
            perm.swap(k, piv);
            norms.swap(k, piv);
        }
        let (beta, r_kk) = householder(&mut a[k * m + k..(k + 1) * m]);
        diag.push(r_kk);
        let (head, tail) = a.split_at_mut((k + 1) * m);
        let v = &head[k * m + k..];
        for j in 0..q - k - 1 {
            apply_reflector(v, beta, &mut tail[j * m + k..(j + 1) * m]);
        }
        for j in 0..p {
            apply_reflector(v, beta, &mut b[j * m + k..(j + 1) * m]);
        }
        for j in k + 1..q {
            norms[j] = col_norm2(&a, m, j, k + 1);
        }
        k += 1;
    }
    if k == 0 {
        return Ok((Matrix::zeros(p, q), 0));
    }

    // R1 is k x q (permuted columns); C = first k rows of Q^T B.
    let r1 = Matrix::from_fn(k, q, |i, j| {
        if j < i {
            0.0
        } else if j == i {
            diag[i]
        } else {
            a[j * m + i]
        }
    });
    let c = Matrix::from_fn(k, p, |i, j| b[j * m + i]);
    let f = svd(&r1)?;
    let mut keep = f.rank(rel_tol);
    if let Some(r) = rank {
        keep = keep.min(r);
    }
    // Z' = V S^+ U^T C  (q x p), then undo the column pivoting.
    let mut kt = Matrix::zeros(p, q);
    for s in 0..keep {
        let inv = 1.0 / f.singular_values[s];
        for col in 0..p {
            let uc: f64 = (0..k).map(|i| f.u[(i, s)] * c[(i, col)]).sum::<f64>() * inv;
            if uc == 0.0 {
                continue;
            }
            let row = kt.row_mut(col);
            for j in 0..q {
                row[perm[j]] += f.vt[(s, j)] * uc;
            }
        }
    }
    Ok((kt, keep))
}

fn col_norm2(a: &[f64], m: usize, j: usize, from: usize) -> f64 {
    let c = &a[j * m + from..(j + 1) * m];
    dot(c, c)
}

fn swap_cols(a: &mut [f64], m: usize, i: usize, j: usize) {
    let (lo, hi) = a.split_at_mut(i.max(j) * m);
    let lo_start = i.min(j) * m;
    lo[lo_start..lo_start + m].swap_with_slice(&mut hi[..m]);
}

/// Overwrites `x` with the Householder vector `v` (with `v[0] = 1`
/// implicit in the returned `beta`) such that `(I - beta v v^T) x = r e_1`.
/// Returns `(beta, r)`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let norm = dot(x, x).sqrt();
    if norm == 0.0 {
        return (0.0, 0.0);
    }
    let r = if x[0] >= 0.0 { -norm } else { norm };
    x[0] -= r;
    let vnorm2 = dot(x, x);
    (2.0 / vnorm2, r)
}

#[inline]
fn apply_reflector(v: &[f64], beta: f64, y: &mut [f64]) {
    if beta == 0.0 {
        return;
    }
    let w = beta * dot(v, y);
    for (yi, vi) in y.iter_mut().zip(v) {
        *yi -= w * vi;
    }
}
