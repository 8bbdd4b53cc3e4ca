//! Prescribed (non-learnable) dictionaries.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, SeededRng};

/// Rows drawn for the median-distance lengthscale heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 256;

/// Random Fourier features `sqrt(2/M) cos(W x + b)` for the Gaussian kernel
/// with lengthscale `l`: rows of `W` are N(0, I/l^2), `b` is U[0, 2pi).
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    pub(crate) input_dim: usize,
    pub(crate) lengthscale: f64,
    pub(crate) seed: u64,
    pub(crate) weights: Matrix,
    pub(crate) phases: Vec<f64>,
}

impl RffMap {
    pub fn new(input_dim: usize, m: usize, lengthscale: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || m == 0 {
            return Err(Error::InvalidArgument("RFF needs input_dim >= 1 and M >= 1".into()));
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(Error::InvalidArgument(format!("RFF lengthscale {lengthscale} must be positive")));
        }
        let mut rng = SeededRng::new(seed);
        let w: Vec<f64> = (0..m * input_dim).map(|_| rng.normal() / lengthscale).collect();
        let phases = (0..m).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
        Ok(Self {
            input_dim,
            lengthscale,
            seed,
            weights: Matrix::from_vec(m, input_dim, w)?,
            phases,
        })
    }

    pub(crate) fn from_parts(input_dim: usize, lengthscale: f64, seed: u64, flat: &[f64]) -> Result<Self> {
        let m = flat.len() / (input_dim + 1);
        if m == 0 || m * (input_dim + 1) != flat.len() {
            return Err(Error::Dimension(format!(
                "{} RFF parameters do not split into M x ({input_dim} + 1)",
                flat.len()
            )));
        }
        Ok(Self {
            input_dim,
            lengthscale,
            seed,
            weights: Matrix::from_vec(m, input_dim, flat[..m * input_dim].to_vec())?,
            phases: flat[m * input_dim..].to_vec(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.phases.len()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub(crate) fn flat_params(&self) -> Vec<f64> {
        let mut p = self.weights.data().to_vec();
        p.extend_from_slice(&self.phases);
        p
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let scale = (2.0 / self.output_dim() as f64).sqrt();
        for (k, o) in out.iter_mut().enumerate() {
            *o = scale * (dot(self.weights.row(k), x) + self.phases[k]).cos();
        }
    }
}

/// Median pairwise Euclidean distance over at most [`MEDIAN_SUBSAMPLE`]
/// seeded rows of `states`. Falls back to 1 when all rows coincide.
pub fn median_lengthscale(states: &Matrix, seed: u64) -> f64 {
    let n = states.rows();
    let idx: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut perm = SeededRng::new(seed).permutation(n);
        perm.truncate(MEDIAN_SUBSAMPLE);
        perm.sort_unstable();
        perm
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let s: f64 = states
                .row(i)
                .iter()
                .zip(states.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// All monomials of total degree `0..=degree`, graded then lexicographic, so
/// degree 1 gives `[1, x_1, ..., x_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMap {
    pub(crate) input_dim: usize,
    pub(crate) degree: usize,
    exponents: Vec<Vec<usize>>,
}

impl PolynomialMap {
    pub fn new(input_dim: usize, degree: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("polynomial map needs input_dim >= 1".into()));
        }
        let mut exponents = Vec::new();
        for k in 0..=degree {
            // Non-decreasing index tuples of length k enumerate the monomials.
            let mut tuple = vec![0usize; k];
            loop {
                let mut e = vec![0usize; input_dim];
                for &i in &tuple {
                    e[i] += 1;
                }
                exponents.push(e);
                let Some(pos) = (0..k).rev().find(|&p| tuple[p] + 1 < input_dim) else {
                    break;
                };
                let v = tuple[pos] + 1;
                tuple[pos..].fill(v);
            }
        }
        Ok(Self {
            input_dim,
            degree,
            exponents,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.exponents.len()
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e
                .iter()
                .zip(x)
                .filter(|(&p, _)| p > 0)
                .map(|(&p, &v)| v.powi(p as i32))
                .product();
        }
    }
}

/// Delay embedding `[x(n), x(n - lag), ..., x(n - delays*lag)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeDelayMap {
    pub(crate) input_dim: usize,
    pub(crate) delays: usize,
    pub(crate) lag: usize,
}

impl TimeDelayMap {
    pub fn new(input_dim: usize, delays: usize, lag: usize) -> Result<Self> {
        if input_dim == 0 || lag == 0 {
            return Err(Error::InvalidArgument("time-delay map needs input_dim >= 1 and lag >= 1".into()));
        }
        Ok(Self {
            input_dim,
            delays,
            lag,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim * (self.delays + 1)
    }

    /// Samples of history consumed before the first full window.
    pub fn history(&self) -> usize {
        self.delays * self.lag
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_monomial_counts() {
        // C(d + k, k) monomials.
        assert_eq!(PolynomialMap::new(3, 2).unwrap().output_dim(), 10);
        assert_eq!(PolynomialMap::new(2, 3).unwrap().output_dim(), 10);
        assert_eq!(PolynomialMap::new(4, 0).unwrap().output_dim(), 1);
    }

    #[test]
    fn polynomial_degree_two_values() {
        let p = PolynomialMap::new(2, 2).unwrap();
        let mut out = vec![0.0; 6];
        p.apply_into(&[2.0, 3.0], &mut out);
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn median_of_collinear_points() {
        let m = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        // Distances 1, 3, 2.
        assert_eq!(median_lengthscale(&m, 0), 2.0);
        assert_eq!(median_lengthscale(&Matrix::zeros(4, 2), 0), 1.0);
    }

    #[test]
    fn rff_rejects_bad_lengthscale() {
        assert!(RffMap::new(2, 10, 0.0, 0).is_err());
        assert!(RffMap::new(2, 10, f64::NAN, 0).is_err());
    }
}
