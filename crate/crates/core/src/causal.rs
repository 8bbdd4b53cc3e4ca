//! Causal measures, ensembles, the permutation identifiability test and
//! sliding-window causal magnitudes.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, ComponentPartition};
use crate::error::{dim_err, Error, Result};
use crate::koopman::{dictionary_input, fit, Forecaster, KoopmanModel, Mode};
use crate::numerics::{Matrix, SeededRng, DEFAULT_PINV_RTOL};
use crate::observables::{DictionarySpec, FeatureMap};

/// Mean over rows of the squared Euclidean norm of `pred - truth`.
pub fn loss(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return dim_err(format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()));
    }
    if pred.rows() == 0 {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.rows() as f64)
}

/// How the measure at shift `t` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Fit the one-step operator once and reach shift `t` by `t` steps of
    /// conditional forecasting.
    Iterate,
    /// Fit a separate operator for every shift and predict once.
    Refit,
}

/// Which test samples start a forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastOrigin {
    /// Every test sample with enough samples ahead of it.
    All,
    /// Only the first test sample.
    First,
}

/// Which series the identifiability test shuffles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    /// Independent full-length shuffles of the cause and of the effect.
    Both,
    /// Shuffle the cause only; the effect series keeps its time order.
    Cause,
    /// Rotate the cause series by a random circular offset, keeping its own
    /// temporal structure while breaking its alignment with the effect.
    CauseShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalConfig {
    /// Leading fraction of samples used to fit operators (and dictionaries).
    pub train_fraction: f64,
    pub svd_rank: Option<usize>,
    pub rel_tol: f64,
    pub normalize: bool,
    pub shift_mode: ShiftMode,
    pub origin: ForecastOrigin,
    pub permutation: PermutationScheme,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            svd_rank: None,
            rel_tol: DEFAULT_PINV_RTOL,
            normalize: false,
            shift_mode: ShiftMode::Iterate,
            origin: ForecastOrigin::All,
            permutation: PermutationScheme::Cause,
        }
    }
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Chronological split into the leading training part and the test part.
pub fn split(states: &Matrix, train_fraction: f64) -> Result<(Matrix, Matrix)> {
    let n = states.rows();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train < 2 || n - n_train.min(n) < 2 {
        return Err(Error::InvalidArgument(format!(
            "a {train_fraction} split of {n} samples leaves fewer than two on one side"
        )));
    }
    Ok((states.row_range(0, n_train), states.row_range(n_train, n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalAnalysis {
    pub shifts: Vec<usize>,
    pub delta: Vec<f64>,
    pub marginal_loss: Vec<f64>,
    pub joint_loss: Vec<f64>,
    /// When set, `delta` has been divided by its largest magnitude.
    pub normalized: bool,
    /// Per-member delta series (ensembles only).
    pub ensemble: Option<Vec<Vec<f64>>>,
}

impl CausalAnalysis {
    fn from_losses(shifts: Vec<usize>, marginal_loss: Vec<f64>, joint_loss: Vec<f64>, normalize: bool) -> Self {
        let mut delta: Vec<f64> = marginal_loss.iter().zip(&joint_loss).map(|(m, j)| m - j).collect();
        if normalize {
            normalize_max_abs(&mut delta);
        }
        Self {
            shifts,
            delta,
            marginal_loss,
            joint_loss,
            normalized: normalize,
            ensemble: None,
        }
    }

    /// Per-shift (min, max) over ensemble members.
    pub fn band(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let members = self.ensemble.as_ref()?;
        let lo = (0..self.shifts.len())
            .map(|i| members.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min))
            .collect();
        let hi = (0..self.shifts.len())
            .map(|i| members.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Some((lo, hi))
    }

    /// CSV `shift,delta,marginal_loss,joint_loss[,member_k...]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "shift,delta,marginal_loss,joint_loss")?;
        let members = self.ensemble.as_deref().unwrap_or(&[]);
        for k in 0..members.len() {
            write!(w, ",member_{k}")?;
        }
        writeln!(w)?;
        for i in 0..self.shifts.len() {
            write!(
                w,
                "{},{},{},{}",
                self.shifts[i],
                fmt_f64(self.delta[i]),
                fmt_f64(self.marginal_loss[i]),
                fmt_f64(self.joint_loss[i])
            )?;
            for m in members {
                write!(w, ",{}", fmt_f64(m[i]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Divides by the largest magnitude (no-op for an all-zero series).
pub fn normalize_max_abs(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
}

/// Mean forecast loss at each horizon `1..=max_h` over the chosen origins.
fn horizon_losses(fc: &Forecaster, max_h: usize, origin: ForecastOrigin) -> Result<Vec<f64>> {
    let first = fc.first_origin();
    if fc.max_horizon(first) < max_h {
        return Err(Error::InvalidArgument(format!(
            "shift {max_h} exceeds the {}-sample test split",
            fc.len()
        )));
    }
    let origins: Vec<usize> = match origin {
        ForecastOrigin::First => vec![first],
        ForecastOrigin::All => (first..fc.len()).filter(|&o| fc.max_horizon(o) >= 1).collect(),
    };
    let mut sum = vec![0.0; max_h];
    let mut count = vec![0usize; max_h];
    for o in origins {
        let h = fc.max_horizon(o).min(max_h);
        fc.run_with(o, h, |i, pred| {
            let truth = fc.truth(o + (i + 1) * fc.shift());
            sum[i] += pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count[i] += 1;
        })?;
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
}

/// Marginal and joint dictionaries built on the training part of `states`.
pub fn train_dictionaries(
    states: &Matrix,
    partition: &ComponentPartition,
    spec: &DictionarySpec,
    seed: u64,
    train_fraction: f64,
) -> Result<(Arc<FeatureMap>, Arc<FeatureMap>)> {
    let (train, _) = split(states, train_fraction)?;
    let (marg, _) = spec.build(&dictionary_input(&train, partition, Mode::Marginal), seed)?;
    let (joint, _) = spec.build(&dictionary_input(&train, partition, Mode::Joint), seed)?;
    Ok((Arc::new(marg), Arc::new(joint)))
}

/// Fits marginal and joint operators on the training split and compares
/// their effect-state losses on the test split at every shift.
pub fn causal_measure(
    states: &Matrix,
    partition: &ComponentPartition,
    dict_marg: &Arc<FeatureMap>,
    dict_joint: &Arc<FeatureMap>,
    shifts: &[usize],
    config: &CausalConfig,
) -> Result<CausalAnalysis> {
    config.validate()?;
    partition.validate(states.cols())?;
    if shifts.is_empty() || shifts.contains(&0) {
        return Err(Error::InvalidArgument("shifts must be non-empty and >= 1".into()));
    }
    let (train, test) = split(states, config.train_fraction)?;
    let mut losses = [Vec::new(), Vec::new()];
    for (slot, (mode, dict)) in [(Mode::Marginal, dict_marg), (Mode::Joint, dict_joint)].into_iter().enumerate() {
        losses[slot] = match config.shift_mode {
            ShiftMode::Iterate => {
                let model = KoopmanModel::fit(&train, partition, dict.clone(), 1, mode, config.svd_rank, config.rel_tol)?;
                let fc = model.forecaster(&test)?;
                let max_h = *shifts.iter().max().expect("non-empty");
                let per_h = horizon_losses(&fc, max_h, config.origin)?;
                shifts.iter().map(|&t| per_h[t - 1]).collect()
            }
            ShiftMode::Refit => shifts
                .iter()
                .map(|&t| {
                    let model =
                        KoopmanModel::fit(&train, partition, dict.clone(), t, mode, config.svd_rank, config.rel_tol)?;
                    let fc = model.forecaster(&test)?;
                    Ok(horizon_losses(&fc, 1, config.origin)?[0])
                })
                .collect::<Result<Vec<f64>>>()?,
        };
    }
    let [marginal, joint] = losses;
    Ok(CausalAnalysis::from_losses(shifts.to_vec(), marginal, joint, config.normalize))
}

/// Runs [`causal_measure`] once per seed, each with freshly initialised and
/// trained dictionaries. The summary series are member means.
pub fn causal_ensemble(
    states: &Matrix,
    partition: &ComponentPartition,
    spec: &DictionarySpec,
    seeds: &[u64],
    shifts: &[usize],
    config: &CausalConfig,
) -> Result<CausalAnalysis> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("an ensemble needs at least two members".into()));
    }
    let mut members = Vec::with_capacity(seeds.len());
    for (k, &seed) in seeds.iter().enumerate() {
        let run = || -> Result<CausalAnalysis> {
            let (m, j) = train_dictionaries(states, partition, spec, seed, config.train_fraction)?;
            causal_measure(states, partition, &m, &j, shifts, config)
        };
        members.push(run().map_err(|e| Error::EnsembleMember {
            member: k,
            source: Box::new(e),
        })?);
    }
    let n = members.len() as f64;
    let mean = |f: &dyn Fn(&CausalAnalysis) -> &Vec<f64>| -> Vec<f64> {
        (0..shifts.len())
            .map(|i| members.iter().map(|m| f(m)[i]).sum::<f64>() / n)
            .collect()
    };
    Ok(CausalAnalysis {
        shifts: shifts.to_vec(),
        delta: mean(&|m| &m.delta),
        marginal_loss: mean(&|m| &m.marginal_loss),
        joint_loss: mean(&|m| &m.joint_loss),
        normalized: config.normalize,
        ensemble: Some(members.into_iter().map(|m| m.delta).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub delta_observed: f64,
    pub delta_permuted: Vec<f64>,
    pub p_value: f64,
    pub permutations: usize,
    pub time_shift: usize,
    pub seed: u64,
}

/// `(1 + #{permuted >= observed}) / (N + 1)`.
pub fn permutation_p_value(observed: f64, permuted: &[f64]) -> f64 {
    let exceed = permuted.iter().filter(|&&d| d >= observed).count();
    (1 + exceed) as f64 / (permuted.len() + 1) as f64
}

/// Rows of `states` with the effect and/or cause columns reordered by
/// independent seeded permutations.
pub fn permute_components(
    states: &Matrix,
    partition: &ComponentPartition,
    scheme: PermutationScheme,
    rng: &mut SeededRng,
) -> Matrix {
    let n = states.rows();
    let perm_e: Vec<usize> = match scheme {
        PermutationScheme::Both => rng.permutation(n),
        PermutationScheme::Cause | PermutationScheme::CauseShift => (0..n).collect(),
    };
    let perm_c: Vec<usize> = match scheme {
        PermutationScheme::CauseShift if n > 1 => {
            let k = 1 + rng.below(n - 1);
            (0..n).map(|i| (i + k) % n).collect()
        }
        _ => rng.permutation(n),
    };
    let mut out = states.clone();
    for i in 0..n {
        for &c in &partition.effect {
            out[(i, c)] = states[(perm_e[i], c)];
        }
        for &c in &partition.cause {
            out[(i, c)] = states[(perm_c[i], c)];
        }
    }
    out
}

/// Permutation test of the cause-to-effect measure at shift `t`. The
/// dictionaries are kept fixed; only the operators are refitted per round.
#[allow(clippy::too_many_arguments)]
pub fn identifiability_test(
    states: &Matrix,
    partition: &ComponentPartition,
    dict_marg: &Arc<FeatureMap>,
    dict_joint: &Arc<FeatureMap>,
    t: usize,
    permutations: usize,
    seed: u64,
    config: &CausalConfig,
) -> Result<HypothesisResult> {
    if permutations == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let config = CausalConfig {
        normalize: false,
        ..config.clone()
    };
    let delta_at = |s: &Matrix| -> Result<f64> {
        Ok(causal_measure(s, partition, dict_marg, dict_joint, &[t], &config)?.delta[0])
    };
    let observed = delta_at(states)?;
    let permuted = (0..permutations)
        .map(|r| {
            let mut rng = SeededRng::for_stream(seed, r as u64);
            delta_at(&permute_components(states, partition, config.permutation, &mut rng))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(HypothesisResult {
        delta_observed: observed,
        p_value: permutation_p_value(observed, &permuted),
        delta_permuted: permuted,
        permutations,
        time_shift: t,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeSeries {
    pub window_starts: Vec<usize>,
    pub magnitude: Vec<f64>,
    pub window_size: usize,
    pub step: usize,
}

impl MagnitudeSeries {
    /// Sample index whose effect state the window's measure refers to (its
    /// last sample).
    pub fn label_indices(&self) -> Vec<usize> {
        self.window_starts.iter().map(|s| s + self.window_size - 1).collect()
    }

    /// CSV `t,magnitude`, with `t` the time of each window's last sample.
    pub fn write_csv<W: Write>(&self, mut w: W, times: &[f64]) -> Result<()> {
        writeln!(w, "t,magnitude")?;
        for (idx, m) in self.label_indices().into_iter().zip(&self.magnitude) {
            let t = times.get(idx).ok_or_else(|| Error::Dimension(format!("no time for sample {idx}")))?;
            writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*m))?;
        }
        Ok(())
    }
}

/// Sliding-window `|Delta|` at shift 1. Inside each window the operators are
/// fitted on all consecutive pairs but the last, and both models predict the
/// window's final effect state from the one before. A window whose effect
/// and cause data are constant records 0.
pub fn magnitude_series(
    states: &Matrix,
    partition: &ComponentPartition,
    dict_marg: &FeatureMap,
    dict_joint: &FeatureMap,
    window_size: usize,
    step: usize,
    rel_tol: f64,
) -> Result<MagnitudeSeries> {
    partition.validate(states.cols())?;
    if window_size < 3 || step == 0 {
        return Err(Error::InvalidArgument("window_size must be >= 3 and step >= 1".into()));
    }
    if dict_marg.history() > 0 || dict_joint.history() > 0 {
        return Err(Error::InvalidArgument("sliding windows need memoryless dictionaries".into()));
    }
    let n = states.rows();
    if n < window_size + 1 {
        return dim_err(format!("{n} samples are too few for windows of {window_size}"));
    }
    let de = partition.effect.len();
    let effect = states.select_columns(&partition.effect);
    let feats = |dict: &FeatureMap, mode: Mode| -> Result<Matrix> {
        let psi = dict.apply_series(&dictionary_input(states, partition, mode))?;
        let mut f = Matrix::zeros(n, de + dict.output_dim());
        for i in 0..n {
            f.row_mut(i)[..de].copy_from_slice(effect.row(i));
            f.row_mut(i)[de..].copy_from_slice(psi.row(i));
        }
        Ok(f)
    };
    let f_marg = feats(dict_marg, Mode::Marginal)?;
    let f_joint = feats(dict_joint, Mode::Joint)?;
    let mut cols = partition.effect.clone();
    cols.extend(&partition.cause);
    let observed = states.select_columns(&cols);

    let window_err = |f: &Matrix, w: usize| -> Result<f64> {
        let last = w + window_size - 1;
        let x = f.row_range(w, last - 1).transpose();
        let y = effect.row_range(w + 1, last).transpose();
        let (k, _) = fit(&x, &y, None, rel_tol)?;
        let pred = k.matvec(f.row(last - 1))?;
        Ok(pred.iter().zip(effect.row(last)).map(|(a, b)| (a - b) * (a - b)).sum())
    };

    let starts: Vec<usize> = (0..=n - window_size).step_by(step).collect();
    let mut magnitude = Vec::with_capacity(starts.len());
    for &w in &starts {
        let block = observed.row_range(w, w + window_size);
        let constant = (1..window_size).all(|i| block.row(i) == block.row(0));
        if constant {
            magnitude.push(0.0);
            continue;
        }
        magnitude.push((window_err(&f_marg, w)? - window_err(&f_joint, w)?).abs());
    }
    Ok(MagnitudeSeries {
        window_starts: starts,
        magnitude,
        window_size,
        step,
    })
}

/// Marginal and joint conditional forecasts from the first admissible test
/// sample, with their mean squared errors over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastComparison {
    pub origin: usize,
    pub truth: Matrix,
    pub marginal: Matrix,
    pub joint: Matrix,
    pub marginal_mse: f64,
    pub joint_mse: f64,
}

impl ForecastComparison {
    /// CSV `step,truth_k...,marginal_k...,joint_k...` over effect components.
    pub fn write_csv<W: Write>(&self, mut w: W, labels: &[String]) -> Result<()> {
        if labels.len() != self.truth.cols() {
            return dim_err(format!("{} labels for {} effect components", labels.len(), self.truth.cols()));
        }
        write!(w, "step")?;
        for prefix in ["truth", "marginal", "joint"] {
            for l in labels {
                write!(w, ",{prefix}_{l}")?;
            }
        }
        writeln!(w)?;
        for i in 0..self.truth.rows() {
            write!(w, "{}", i + 1)?;
            for m in [&self.truth, &self.marginal, &self.joint] {
                for v in m.row(i) {
                    write!(w, ",{}", fmt_f64(*v))?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn forecast_comparison(
    states: &Matrix,
    partition: &ComponentPartition,
    dict_marg: &Arc<FeatureMap>,
    dict_joint: &Arc<FeatureMap>,
    horizon: usize,
    config: &CausalConfig,
) -> Result<ForecastComparison> {
    config.validate()?;
    partition.validate(states.cols())?;
    let (train, test) = split(states, config.train_fraction)?;
    let mut out = Vec::with_capacity(2);
    let mut origin = 0;
    for (mode, dict) in [(Mode::Marginal, dict_marg), (Mode::Joint, dict_joint)] {
        let model = KoopmanModel::fit(&train, partition, dict.clone(), 1, mode, config.svd_rank, config.rel_tol)?;
        let fc = model.forecaster(&test)?;
        origin = fc.first_origin();
        out.push(fc.run(origin, horizon)?);
    }
    let effect = test.select_columns(&partition.effect);
    let truth = effect.row_range(origin + 1, origin + 1 + horizon);
    let joint = out.pop().expect("two forecasts");
    let marginal = out.pop().expect("two forecasts");
    Ok(ForecastComparison {
        origin,
        marginal_mse: loss(&marginal, &truth)?,
        joint_mse: loss(&joint, &truth)?,
        truth,
        marginal,
        joint,
    })
}
