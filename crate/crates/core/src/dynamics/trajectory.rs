use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::Matrix;

/// Relative tolerance on the sample spacing.
pub const UNIFORM_STEP_RTOL: f64 = 1e-6;

/// A uniformly sampled multivariate time series, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Matrix,
    dim_labels: Vec<String>,
}

impl Trajectory {
    /// Validates the invariants. Empty `labels` become `dim_0, dim_1, ...`.
    pub fn new(times: Vec<f64>, states: Matrix, labels: Vec<String>) -> Result<Self> {
        if times.len() != states.rows() {
            return dim_err(format!(
                "{} times for {} samples",
                times.len(),
                states.rows()
            ));
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument(
                "a trajectory needs at least two samples".into(),
            ));
        }
        if !states.is_finite() {
            return Err(Error::InvalidArgument("trajectory states are not finite".into()));
        }
        let step = times[1] - times[0];
        if !(step > 0.0) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        for (k, w) in times.windows(2).enumerate() {
            let h = w[1] - w[0];
            if !(h > 0.0) || ((h - step) / step).abs() > UNIFORM_STEP_RTOL {
                return Err(Error::InvalidArgument(format!(
                    "non-uniform time step between samples {k} and {}",
                    k + 1
                )));
            }
        }
        let dim_labels = if labels.is_empty() {
            (0..states.cols()).map(|i| format!("dim_{i}")).collect()
        } else if labels.len() == states.cols() {
            labels
        } else {
            return dim_err(format!(
                "{} labels for {} dimensions",
                labels.len(),
                states.cols()
            ));
        };
        Ok(Self {
            times,
            states,
            dim_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }

    pub fn dim_labels(&self) -> &[String] {
        &self.dim_labels
    }

    pub fn state(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }

    /// Samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Trajectory> {
        if end > self.len() || end < start + 2 {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} of a {}-sample trajectory",
                self.len()
            )));
        }
        Trajectory::new(
            self.times[start..end].to_vec(),
            self.states.row_range(start, end),
            self.dim_labels.clone(),
        )
    }

    /// Every `every`-th sample starting from the first.
    pub fn subsample(&self, every: usize) -> Result<Trajectory> {
        if every == 0 {
            return Err(Error::InvalidArgument("subsample stride must be >= 1".into()));
        }
        let idx: Vec<usize> = (0..self.len()).step_by(every).collect();
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.state(i)).collect();
        Trajectory::new(
            idx.iter().map(|&i| self.times[i]).collect(),
            Matrix::from_rows(&rows)?,
            self.dim_labels.clone(),
        )
    }

    /// Columns `dims` of every sample, as a `len x dims.len()` matrix.
    pub fn select_dims(&self, dims: &[usize]) -> Matrix {
        self.states.select_columns(dims)
    }

    /// CSV with header `t,<labels>` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for l in &self.dim_labels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{}", fmt_f64(*t))?;
            for v in self.states.row(i) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Full-precision scientific formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Disjoint effect / cause / remainder index sets covering a state space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentPartition {
    pub effect: Vec<usize>,
    pub cause: Vec<usize>,
    pub remainder: Vec<usize>,
}

impl ComponentPartition {
    /// Builds the partition of `0..dim`; every index not in `effect` or
    /// `cause` goes to the remainder.
    pub fn new(effect: Vec<usize>, cause: Vec<usize>, dim: usize) -> Result<Self> {
        if effect.is_empty() || cause.is_empty() {
            return Err(Error::InvalidArgument(
                "effect and cause components must be non-empty".into(),
            ));
        }
        let mut seen = vec![false; dim];
        for &i in effect.iter().chain(&cause) {
            if i >= dim {
                return dim_err(format!("index {i} outside a {dim}-dimensional state"));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {i} assigned to more than one component"
                )));
            }
            seen[i] = true;
        }
        let remainder = (0..dim).filter(|&i| !seen[i]).collect();
        Ok(Self {
            effect,
            cause,
            remainder,
        })
    }

    /// The same split with cause and effect swapped.
    pub fn reversed(&self) -> Self {
        Self {
            effect: self.cause.clone(),
            cause: self.effect.clone(),
            remainder: self.remainder.clone(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.effect.len() + self.cause.len() + self.remainder.len()
    }

    /// Checks that the three sets partition `0..dim` exactly.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let rebuilt = Self::new(self.effect.clone(), self.cause.clone(), dim)?;
        let mut rem = self.remainder.clone();
        rem.sort_unstable();
        if rem != rebuilt.remainder {
            return dim_err(format!(
                "partition does not cover a {dim}-dimensional state exactly"
            ));
        }
        Ok(())
    }
}
