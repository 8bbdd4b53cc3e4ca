//! Thin SVD by one-sided (Hestenes) Jacobi rotations, and the Moore–Penrose
//! pseudo-inverse built on it.
//!
//! For an `m x n` input with `m >= n` the columns of a working copy are
//! rotated pairwise until mutually orthogonal; the accumulated rotations
//! form `V`, the column norms are the singular values and the normalised
//! columns form `U`. Wide inputs are handled through the transpose.

use crate::error::{Error, Result};

use super::matrix::{dot, Matrix};

/// Maximum number of full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;

/// Default relative truncation for [`pinv`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `m x r` with orthonormal columns, `r = min(m, n)`.
    pub u: Matrix,
    /// Non-negative, sorted in non-increasing order.
    pub singular_values: Vec<f64>,
    /// `r x n` with orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    /// Number of singular values strictly above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .take_while(|&&s| s > rel_tol * smax)
            .count()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let (m, r) = self.u.shape();
        let us = Matrix::from_fn(m, r, |i, k| self.u[(i, k)] * self.singular_values[k]);
        us.matmul(&self.vt).expect("factor shapes agree")
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot decompose an empty {m}x{n} matrix"
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{m}x{n} matrix has non-finite entries"
        )));
    }
    if m < n {
        let t = svd_tall(&a.transpose())?;
        return Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        });
    }
    svd_tall(a)
}

/// One-sided Jacobi for `m >= n`. Storage is column-major throughout so the
/// inner loops walk contiguous memory.
fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a[(i, j)];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let tol = (m as f64).sqrt() * f64::EPSILON;
    let mut norms: Vec<f64> = (0..n)
        .map(|j| {
            let c = &w[j * m..(j + 1) * m];
            dot(c, c)
        })
        .collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (wi, wj) = column_pair(&mut w, m, i, j);
                let gamma = dot(wi, wj);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wi, wj, c, s);
                let (vi, vj) = column_pair(&mut v, n, i, j);
                rotate(vi, vj, c, s);
                norms[i] = dot(wi, wi);
                norms[j] = dot(wj, wj);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            rows: m,
            cols: n,
            sweeps: MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigma: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));

    let smax = sigma[order[0]];
    // Columns this small carry no direction information; their U columns are
    // rebuilt by orthogonal completion below.
    let floor = smax * f64::EPSILON * (m.max(n) as f64) * 1e-4;

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let mut incomplete = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = sigma[j];
        let col = &w[j * m..(j + 1) * m];
        if s > floor && s > 0.0 {
            for i in 0..m {
                u[(i, k)] = col[i] / s;
            }
            singular_values.push(s);
        } else {
            incomplete.push(k);
            singular_values.push(if s > 0.0 { s } else { 0.0 });
        }
        for r in 0..n {
            vt[(k, r)] = v[j * n + r];
        }
    }
    if !incomplete.is_empty() {
        complete_orthonormal(&mut u, &incomplete);
    }
    Ok(SvdResult {
        u,
        singular_values,
        vt,
    })
}

fn column_pair(buf: &mut [f64], len: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = buf.split_at_mut(j * len);
    (&mut lo[i * len..(i + 1) * len], &mut hi[..len])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the listed (zero) columns of `u` with unit vectors orthogonal to
/// every other column, by Gram–Schmidt over the standard basis.
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    let (m, n) = u.shape();
    let mut filled: Vec<usize> = (0..n).filter(|k| !missing.contains(k)).collect();
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            assert!(candidate < m, "ran out of basis vectors for completion");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of modified Gram–Schmidt for stability.
            for _ in 0..2 {
                for &f in &filled {
                    let p: f64 = (0..m).map(|i| u[(i, f)] * e[i]).sum();
                    for (i, ei) in e.iter_mut().enumerate() {
                        *ei -= p * u[(i, f)];
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                for (i, ei) in e.iter().enumerate() {
                    u[(i, k)] = ei / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}

/// Moore–Penrose pseudo-inverse; singular values at or below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pinv(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    pinv_truncated(a, rel_tol, None)
}

/// Pseudo-inverse restricted to the leading `rank` singular triplets (after
/// relative truncation).
pub fn pinv_truncated(a: &Matrix, rel_tol: f64, rank: Option<usize>) -> Result<Matrix> {
    if rel_tol < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "pinv tolerance must be non-negative, got {rel_tol}"
        )));
    }
    let f = svd(a)?;
    Ok(pinv_from_svd(&f, rel_tol, rank))
}

pub fn pinv_from_svd(f: &SvdResult, rel_tol: f64, rank: Option<usize>) -> Matrix {
    let mut keep = f.rank(rel_tol);
    if let Some(r) = rank {
        keep = keep.min(r);
    }
    let m = f.u.rows();
    let n = f.vt.cols();
    let mut out = Matrix::zeros(n, m);
    for k in 0..keep {
        let inv = 1.0 / f.singular_values[k];
        for r in 0..n {
            let vk = f.vt[(k, r)] * inv;
            if vk == 0.0 {
                continue;
            }
            let row = out.row_mut(r);
            for (i, o) in row.iter_mut().enumerate() {
                *o += vk * f.u[(i, k)];
            }
        }
    }
    out
}
