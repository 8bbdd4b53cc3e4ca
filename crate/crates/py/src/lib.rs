//! Python bindings. States cross the boundary as lists of rows; systems and
//! dictionaries as JSON strings in the same schema as the TOML configs.

use pyo3::prelude::*;

use kausal_core as core;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(e) => pyo3::exceptions::PyOSError::new_err(e.to_string()),
        core::Error::Dimension(_)
        | core::Error::InvalidArgument(_)
        | core::Error::Config(_)
        | core::Error::Csv { .. }
        | core::Error::SingleClass { .. }
        | core::Error::NoSignChange { .. } => pyo3::exceptions::PyValueError::new_err(e.to_string()),
        other => pyo3::exceptions::PyRuntimeError::new_err(other.to_string()),
    }
}

fn json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| pyo3::exceptions::PyValueError::new_err(format!("bad {what}: {e}")))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<core::numerics::Matrix> {
    core::numerics::Matrix::from_rows(rows).map_err(err)
}

#[pymodule]
mod kausal {
    use std::path::Path;

    use pyo3::prelude::*;

    use super::{core, err, json, matrix};
    use core::causal::{causal_measure as measure, identifiability_test as perm_test, train_dictionaries, CausalConfig};
    use core::cli_io::{run_experiment, ExperimentConfig, Stage};
    use core::dynamics::{ComponentPartition, EnsoParams, SystemSpec};
    use core::observables::DictionarySpec;

    #[allow(non_upper_case_globals)]
    #[pymodule_export]
    const __version__: &str = env!("CARGO_PKG_VERSION");

    /// Integrates a system given as JSON, e.g. `{"kind": "enso", "mu": 0.5}`.
    /// Returns `(times, states, labels)`.
    #[pyfunction]
    #[pyo3(signature = (system, t1, dt, stride = 1, t0 = 0.0, initial = None, seed = 0))]
    fn simulate(
        system: &str,
        t1: f64,
        dt: f64,
        stride: usize,
        t0: f64,
        initial: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<String>)> {
        let spec: SystemSpec = json(system, "system")?;
        let init = initial.unwrap_or_else(|| spec.default_initial(seed));
        let tr = core::dynamics::simulate(&spec, &init, t0, t1, dt, stride).map_err(err)?;
        let rows = (0..tr.len()).map(|i| tr.state(i).to_vec()).collect();
        Ok((tr.times().to_vec(), rows, tr.dim_labels().to_vec()))
    }

    /// Delta, marginal and joint losses at each shift for `cause -> effect`.
    #[pyfunction]
    #[pyo3(signature = (states, effect, cause, shifts, dictionary = "{\"kind\": \"identity\"}", seed = 0, train_fraction = 0.8))]
    fn causal_measure(
        states: Vec<Vec<f64>>,
        effect: Vec<usize>,
        cause: Vec<usize>,
        shifts: Vec<usize>,
        dictionary: &str,
        seed: u64,
        train_fraction: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = matrix(&states)?;
        let p = ComponentPartition::new(effect, cause, s.cols()).map_err(err)?;
        let spec: DictionarySpec = json(dictionary, "dictionary")?;
        let cfg = CausalConfig {
            train_fraction,
            ..CausalConfig::default()
        };
        let (m, j) = train_dictionaries(&s, &p, &spec, seed, cfg.train_fraction).map_err(err)?;
        let a = measure(&s, &p, &m, &j, &shifts, &cfg).map_err(err)?;
        Ok((a.delta, a.marginal_loss, a.joint_loss))
    }

    /// Permutation p-value of the `cause -> effect` measure at `time_shift`.
    #[pyfunction]
    #[pyo3(signature = (states, effect, cause, permutations = 100, time_shift = 1, dictionary = "{\"kind\": \"identity\"}", seed = 0))]
    fn identifiability_test(
        states: Vec<Vec<f64>>,
        effect: Vec<usize>,
        cause: Vec<usize>,
        permutations: usize,
        time_shift: usize,
        dictionary: &str,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        let s = matrix(&states)?;
        let p = ComponentPartition::new(effect, cause, s.cols()).map_err(err)?;
        let spec: DictionarySpec = json(dictionary, "dictionary")?;
        let cfg = CausalConfig::default();
        let (m, j) = train_dictionaries(&s, &p, &spec, seed, cfg.train_fraction).map_err(err)?;
        let h = perm_test(&s, &p, &m, &j, time_shift, permutations, seed, &cfg).map_err(err)?;
        Ok((h.delta_observed, h.p_value))
    }

    /// Critical coupling of the linear recharge oscillator on `[lo, hi]`.
    /// `params` is JSON with any of `r, alpha, b0, c, gamma`.
    #[pyfunction]
    #[pyo3(signature = (lo = 0.3, hi = 0.9, params = "{}"))]
    fn critical_mu(lo: f64, hi: f64, params: &str) -> PyResult<f64> {
        let p: EnsoParams = json(params, "parameters")?;
        core::stability::find_critical_mu(&p, lo, hi).map_err(err)
    }

    #[pyfunction]
    fn auroc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
        if labels.iter().any(|&l| l > 1) {
            return Err(pyo3::exceptions::PyValueError::new_err("labels must be 0 or 1"));
        }
        let positive_count = labels.iter().filter(|&&l| l == 1).count();
        let l = core::eval::EventLabels {
            labels,
            positive_count,
            method: core::eval::LabelMethod::GammaSigma,
            phase: None,
        };
        Ok(core::eval::auroc(&scores, &l).map_err(err)?.auroc)
    }

    /// Runs one pipeline stage of a TOML config file and returns the
    /// manifest as JSON.
    #[pyfunction]
    fn run(config: &str, stage: &str, out_dir: &str) -> PyResult<String> {
        let cfg = ExperimentConfig::load(Path::new(config)).map_err(err)?;
        let stage: Stage = json(&format!("\"{stage}\""), "stage")?;
        let m = run_experiment(&cfg, stage, Path::new(out_dir)).map_err(err)?;
        serde_json::to_string(&m).map_err(|e| pyo3::exceptions::PyRuntimeError::new_err(e.to_string()))
    }
}
