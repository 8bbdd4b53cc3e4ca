//! Marginal and joint Koopman operators fitted by least squares on stacked
//! `[identity; dictionary]` observables.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, ComponentPartition};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, right_pinv_solve, Matrix, DEFAULT_PINV_RTOL};
use crate::observables::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Dictionary over the effect states only.
    Marginal,
    /// Dictionary over the concatenated `[effect; cause]` states.
    Joint,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Marginal => "marginal",
            Mode::Joint => "joint",
        }
    }
}

/// Dictionary inputs for every sample of `states` (rows): the effect
/// columns, followed by the cause columns in joint mode.
pub fn dictionary_input(states: &Matrix, partition: &ComponentPartition, mode: Mode) -> Matrix {
    let mut cols = partition.effect.clone();
    if mode == Mode::Joint {
        cols.extend(&partition.cause);
    }
    states.select_columns(&cols)
}

/// Snapshot data for one shift: column `n` of `features` is
/// `[w_E(n); psi(input(n))]`, column `n` of `targets` is `w_E(n + t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPairs {
    pub features: Matrix,
    pub targets: Matrix,
    pub time_shift: usize,
}

/// Builds the stacked feature and target matrices from `states` (one row
/// per sample). Time-delay dictionaries drop the samples lacking history.
pub fn build_matrices(
    states: &Matrix,
    partition: &ComponentPartition,
    dictionary: &FeatureMap,
    t: usize,
    mode: Mode,
) -> Result<SnapshotPairs> {
    partition.validate(states.cols())?;
    if t == 0 {
        return Err(Error::InvalidArgument("time shift must be >= 1".into()));
    }
    let h = dictionary.history();
    let n = states.rows();
    if n < h + t + 1 {
        return dim_err(format!("{n} samples are too few for shift {t} with history {h}"));
    }
    let input = dictionary_input(states, partition, mode);
    let psi = dictionary.apply_series(&input.row_range(0, n - t))?;
    let de = partition.effect.len();
    let m = dictionary.output_dim();
    let d = n - t - h;
    let mut features = Matrix::zeros(de + m, d);
    let mut targets = Matrix::zeros(de, d);
    for k in 0..d {
        let s = k + h;
        for (r, &c) in partition.effect.iter().enumerate() {
            features[(r, k)] = states[(s, c)];
            targets[(r, k)] = states[(s + t, c)];
        }
        for (r, v) in psi.row(k).iter().enumerate() {
            features[(de + r, k)] = *v;
        }
    }
    Ok(SnapshotPairs {
        features,
        targets,
        time_shift: t,
    })
}

/// `K = targets * pinv(features)`, with the pseudo-inverse truncated at
/// `rel_tol * sigma_max` and optionally to `svd_rank` singular values.
/// Returns the operator and the number of singular values retained.
pub fn fit(features: &Matrix, targets: &Matrix, svd_rank: Option<usize>, rel_tol: f64) -> Result<(Matrix, usize)> {
    if features.cols() != targets.cols() {
        return dim_err(format!(
            "{} feature snapshots for {} targets",
            features.cols(),
            targets.cols()
        ));
    }
    right_pinv_solve(features, targets, rel_tol, svd_rank)
}

/// A fitted operator together with the dictionary it was fitted on.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    pub mode: Mode,
    pub operator: Matrix,
    pub dictionary: Arc<FeatureMap>,
    pub partition: ComponentPartition,
    pub time_shift: usize,
    pub svd_rank: Option<usize>,
    pub effective_rank: usize,
}

impl KoopmanModel {
    /// Builds the snapshot matrices from `states` and fits the operator.
    pub fn fit(
        states: &Matrix,
        partition: &ComponentPartition,
        dictionary: Arc<FeatureMap>,
        t: usize,
        mode: Mode,
        svd_rank: Option<usize>,
        rel_tol: f64,
    ) -> Result<Self> {
        let pairs = build_matrices(states, partition, &dictionary, t, mode)?;
        let (operator, effective_rank) = fit(&pairs.features, &pairs.targets, svd_rank, rel_tol)?;
        Ok(Self {
            mode,
            operator,
            dictionary,
            partition: partition.clone(),
            time_shift: t,
            svd_rank,
            effective_rank,
        })
    }

    pub fn fit_default(
        states: &Matrix,
        partition: &ComponentPartition,
        dictionary: Arc<FeatureMap>,
        t: usize,
        mode: Mode,
    ) -> Result<Self> {
        Self::fit(states, partition, dictionary, t, mode, None, DEFAULT_PINV_RTOL)
    }

    /// `K [w_E; psi(input)]`. `cause` is required in joint mode. For
    /// time-delay dictionaries the arguments are full input windows.
    pub fn predict(&self, effect: &[f64], cause: Option<&[f64]>) -> Result<Vec<f64>> {
        let de = self.partition.effect.len();
        let input: Vec<f64> = match (self.mode, cause) {
            (Mode::Marginal, _) => effect.to_vec(),
            (Mode::Joint, Some(c)) => {
                if c.len() != self.partition.cause.len() {
                    return dim_err(format!(
                        "cause state has length {}, expected {}",
                        c.len(),
                        self.partition.cause.len()
                    ));
                }
                let mut v = effect.to_vec();
                v.extend_from_slice(c);
                v
            }
            (Mode::Joint, None) => {
                return Err(Error::InvalidArgument("joint prediction needs the cause state".into()))
            }
        };
        if self.dictionary.history() > 0 {
            return Err(Error::InvalidArgument(
                "time-delay models predict from series; use conditional_forecast".into(),
            ));
        }
        if effect.len() != de {
            return dim_err(format!("effect state has length {}, expected {de}", effect.len()));
        }
        let psi = self.dictionary.apply(&input)?;
        let mut x = effect.to_vec();
        x.extend(psi);
        self.operator.matvec(&x)
    }

    /// Precomputes the dictionary contribution for every sample of `states`
    /// so that forecasts only iterate the identity block.
    pub fn forecaster(&self, states: &Matrix) -> Result<Forecaster> {
        self.partition.validate(states.cols())?;
        let de = self.partition.effect.len();
        let input = dictionary_input(states, &self.partition, self.mode);
        let psi = self.dictionary.apply_series(&input)?;
        let k_psi = self.operator.column_range(de, self.operator.cols());
        let drive = psi.matmul(&k_psi.transpose())?;
        Ok(Forecaster {
            k_id: self.operator.column_range(0, de),
            drive,
            effect: states.select_columns(&self.partition.effect),
            offset: self.dictionary.history(),
            shift: self.time_shift,
        })
    }

    /// Forecast of `horizon` steps starting at sample `origin` of
    /// `test_states`. Step 1 uses test data throughout; later steps feed the
    /// previous prediction into the identity slot while the dictionary slot
    /// keeps reading test data. Row `i` approximates
    /// `w_E(origin + (i + 1) t)`.
    pub fn conditional_forecast(&self, test_states: &Matrix, origin: usize, horizon: usize) -> Result<Matrix> {
        self.forecaster(test_states)?.run(origin, horizon)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: 1,
            mode: self.mode,
            time_shift: self.time_shift,
            svd_rank: self.svd_rank,
            effective_rank: self.effective_rank,
            operator_rows: self.operator.rows(),
            operator_cols: self.operator.cols(),
            operator: self.operator.data().to_vec(),
            partition: self.partition.clone(),
            dictionary_kind: self.dictionary.kind().as_str().to_string(),
            dictionary_hash: self.dictionary.content_hash(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("documents serialise")
    }
}

/// Exported model. The dictionary is referenced by the SHA-256 of its own
/// JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub mode: Mode,
    pub time_shift: usize,
    pub svd_rank: Option<usize>,
    pub effective_rank: usize,
    pub operator_rows: usize,
    pub operator_cols: usize,
    pub operator: Vec<f64>,
    pub partition: ComponentPartition,
    pub dictionary_kind: String,
    pub dictionary_hash: String,
}

/// Conditional-forecast engine over one data set.
#[derive(Debug, Clone)]
pub struct Forecaster {
    k_id: Matrix,
    /// Row `k` is `K_psi psi(input(k + offset))`.
    drive: Matrix,
    effect: Matrix,
    offset: usize,
    shift: usize,
}

impl Forecaster {
    /// Earliest admissible origin.
    pub fn first_origin(&self) -> usize {
        self.offset
    }

    /// Samples advanced per forecast step.
    pub fn shift(&self) -> usize {
        self.shift
    }

    /// Number of samples in the underlying data.
    pub fn len(&self) -> usize {
        self.effect.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.effect.rows() == 0
    }

    /// Largest horizon reachable from `origin`.
    pub fn max_horizon(&self, origin: usize) -> usize {
        if origin < self.offset || origin >= self.len() {
            0
        } else {
            (self.len() - 1 - origin) / self.shift
        }
    }

    pub fn run(&self, origin: usize, horizon: usize) -> Result<Matrix> {
        let de = self.effect.cols();
        let mut out = Matrix::zeros(horizon, de);
        self.run_with(origin, horizon, |i, pred| out.row_mut(i).copy_from_slice(pred))?;
        Ok(out)
    }

    /// Calls `visit(i, prediction)` for steps `i = 0..horizon`.
    pub fn run_with(&self, origin: usize, horizon: usize, mut visit: impl FnMut(usize, &[f64])) -> Result<()> {
        if origin < self.offset {
            return Err(Error::InvalidArgument(format!(
                "origin {origin} precedes the first full dictionary window at {}",
                self.offset
            )));
        }
        if horizon == 0 || horizon > self.max_horizon(origin) {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} from origin {origin} exceeds the {} available test samples",
                self.len()
            )));
        }
        let de = self.effect.cols();
        let mut state = self.effect.row(origin).to_vec();
        let mut next = vec![0.0; de];
        for i in 0..horizon {
            let s = origin + i * self.shift;
            let drive = self.drive.row(s - self.offset);
            for r in 0..de {
                next[r] = drive[r] + dot(self.k_id.row(r), &state);
            }
            visit(i, &next);
            std::mem::swap(&mut state, &mut next);
        }
        Ok(())
    }

    /// Observed effect state of sample `i`.
    pub fn truth(&self, i: usize) -> &[f64] {
        self.effect.row(i)
    }
}

/// Forecast CSV: `step,<labels>`.
pub fn write_forecast_csv<W: Write>(mut w: W, forecast: &Matrix, labels: &[String]) -> Result<()> {
    if labels.len() != forecast.cols() {
        return dim_err(format!("{} labels for {} forecast columns", labels.len(), forecast.cols()));
    }
    write!(w, "step")?;
    for l in labels {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for i in 0..forecast.rows() {
        write!(w, "{}", i + 1)?;
        for v in forecast.row(i) {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Plain least-squares residual `sum ||targets - K features||^2`.
pub fn residual(operator: &Matrix, pairs: &SnapshotPairs) -> Result<f64> {
    let r = pairs.targets.sub(&operator.matmul(&pairs.features)?)?;
    Ok(r.data().iter().map(|v| v * v).sum())
}
