use num_complex::Complex64;

use crate::error::{dim_err, Result};

use super::matrix::Matrix;

/// Eigenvalues of a 2x2 matrix from its trace and determinant, ordered by
/// descending real part (then descending imaginary part).
pub fn eig2x2(a: &Matrix) -> Result<[Complex64; 2]> {
    if a.shape() != (2, 2) {
        return dim_err(format!("eig2x2 needs a 2x2 matrix, got {:?}", a.shape()));
    }
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    Ok(eig_from_trace_det(tr, det))
}

pub fn eig_from_trace_det(tr: f64, det: f64) -> [Complex64; 2] {
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // Avoid cancellation: take the larger-magnitude root directly and
        // recover the other from the product of roots.
        let q = 0.5 * (tr + tr.signum() * sq);
        let (r1, r2) = if q == 0.0 {
            (0.5 * sq, -0.5 * sq)
        } else {
            (q, det / q)
        };
        let (hi, lo) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
        [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
    } else {
        let re = 0.5 * tr;
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(re, im), Complex64::new(re, -im)]
    }
}
