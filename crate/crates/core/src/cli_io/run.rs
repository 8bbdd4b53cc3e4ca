use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{with_parameter, DimRef, ExperimentConfig, LabelSource};
use super::ingest::ingest_csv;
use super::svg::{causal_svg, plot_svg, roc_svg, PlotStyle, Series, SeriesBundle};
use crate::causal::{
    causal_ensemble, causal_measure, forecast_comparison, identifiability_test, magnitude_series,
    train_dictionaries, CausalAnalysis, CausalConfig,
};
use crate::dynamics::{fmt_f64, simulate, ComponentPartition, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{extreme_labels, magnitude_auroc, oni_labels};
use crate::observables::hex;
use crate::stability::{bifurcation_scan, find_critical_mu, write_bifurcation_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Causal,
    Test,
    Forecast,
    Stability,
    Auroc,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Causal,
        Stage::Test,
        Stage::Forecast,
        Stage::Stability,
        Stage::Auroc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Causal => "causal",
            Stage::Test => "test",
            Stage::Forecast => "forecast",
            Stage::Stability => "stability",
            Stage::Auroc => "auroc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Provenance of one stage run. Everything except the timings is a
/// deterministic function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub stage: Stage,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    pub outputs: Vec<OutputRecord>,
    pub summary: Value,
}

struct Outputs {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        // Recorded before writing so a partially written file is cleaned up.
        self.records.push(OutputRecord {
            path: name.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        std::fs::write(path, bytes)?;
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn remove_all(&self) {
        for r in &self.records {
            let _ = std::fs::remove_file(self.dir.join(&r.path));
        }
    }
}

/// Output directory of `config` under `root`.
pub fn output_dir(config: &ExperimentConfig, root: &Path) -> PathBuf {
    match &config.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => root.join(d),
        None => root.join(&config.name),
    }
}

/// The trajectory an experiment analyses: simulated or read from CSV.
pub fn load_trajectory(config: &ExperimentConfig) -> Result<Trajectory> {
    if let Some(input) = &config.input {
        return ingest_csv(&input.path, &input.time_column, input.columns.as_deref());
    }
    let system = config
        .system
        .as_ref()
        .ok_or_else(|| Error::Config("no data source".into()))?;
    simulate_system(system, config)
}

fn simulate_system(system: &SystemSpec, config: &ExperimentConfig) -> Result<Trajectory> {
    let sim = &config.simulation;
    let initial = match &sim.initial {
        Some(v) => v.clone(),
        None => system.default_initial(sim.initial_seed),
    };
    simulate(system, &initial, sim.t0, sim.t1, sim.dt, sim.stride)
}

/// Runs one stage, writes its outputs and `manifest_<stage>.json` into
/// `out_dir`. On failure the files written so far are removed and the
/// error is wrapped with the stage name.
pub fn run_experiment(config: &ExperimentConfig, stage: Stage, out_dir: &Path) -> Result<RunManifest> {
    let wrap = |e: Error| Error::Stage {
        stage: stage.as_str(),
        source: Box::new(e),
    };
    config.validate().map_err(wrap)?;
    std::fs::create_dir_all(out_dir).map_err(|e| wrap(e.into()))?;
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        records: vec![],
    };
    let result = match stage {
        Stage::Simulate => run_simulate(config, &mut out),
        Stage::Causal => run_causal(config, &mut out),
        Stage::Test => run_test(config, &mut out),
        Stage::Forecast => run_forecast(config, &mut out),
        Stage::Stability => run_stability(config, &mut out),
        Stage::Auroc => run_auroc(config, &mut out),
    };
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            out.remove_all();
            return Err(wrap(e));
        }
    };
    let manifest = RunManifest {
        name: config.name.clone(),
        stage,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seeds: config.seeds.clone(),
        started_unix,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        outputs: std::mem::take(&mut out.records),
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| wrap(e.into()))?;
    let name = format!("manifest_{}.json", stage.as_str());
    std::fs::write(out_dir.join(&name), text).map_err(|e| {
        for r in &manifest.outputs {
            let _ = std::fs::remove_file(out_dir.join(&r.path));
        }
        wrap(e.into())
    })?;
    Ok(manifest)
}

fn run_simulate(config: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let tr = load_trajectory(config)?;
    out.csv("trajectory.csv", |w| tr.write_csv(w))?;
    let shown = tr.dim().min(6);
    let bundle = SeriesBundle {
        title: config.name.clone(),
        x_label: "t".into(),
        y_label: "state".into(),
        series: (0..shown)
            .map(|k| Series {
                label: tr.dim_labels()[k].clone(),
                x: tr.times().to_vec(),
                y: tr.states().column(k),
            })
            .collect(),
        bands: vec![],
    };
    out.write("trajectory.svg", plot_svg(&bundle, &PlotStyle::default())?.as_bytes())?;
    Ok(json!({ "samples": tr.len(), "dim": tr.dim(), "dt": tr.dt() }))
}

/// The configured partition and, if requested, its reverse, tagged
/// `c2e` (cause to effect) and `e2c`.
fn directions(config: &ExperimentConfig, partition: &ComponentPartition) -> Vec<(&'static str, ComponentPartition)> {
    let mut dirs = vec![("c2e", partition.clone())];
    if config.causal.both_directions {
        dirs.push(("e2c", partition.reversed()));
    }
    dirs
}

fn analyse(
    config: &ExperimentConfig,
    tr: &Trajectory,
    partition: &ComponentPartition,
    seed: u64,
    shifts: &[usize],
) -> Result<CausalAnalysis> {
    let settings = &config.causal.settings;
    match config.causal.ensemble {
        Some(n) => {
            let seeds: Vec<u64> = (0..n as u64).map(|k| seed + k).collect();
            causal_ensemble(tr.states(), partition, &config.dictionary, &seeds, shifts, settings)
        }
        None => {
            let (m, j) = train_dictionaries(tr.states(), partition, &config.dictionary, seed, settings.train_fraction)?;
            causal_measure(tr.states(), partition, &m, &j, shifts, settings)
        }
    }
}

fn run_causal(config: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let shifts = config.causal.shifts.values()?;
    let mut cases: Vec<(String, Trajectory)> = vec![];
    match (&config.scan, &config.system) {
        (Some(scan), Some(system)) => {
            for &v in &scan.values {
                let sys = with_parameter(system, &scan.parameter, v)?;
                cases.push((format!("{}{}_", scan.parameter, v), simulate_system(&sys, config)?));
            }
        }
        _ => cases.push((String::new(), load_trajectory(config)?)),
    }

    let partition = config.partition_for(cases[0].1.dim_labels())?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut overlays: Vec<(String, Vec<Series>)> = vec![];
    for (tag, tr) in &cases {
        for (dir, p) in directions(config, &partition) {
            for &seed in &config.seeds {
                let a = analyse(config, tr, &p, seed, &shifts)?;
                let stem = format!("causal_{tag}{dir}_seed{seed}");
                out.csv(&format!("{stem}.csv"), |w| a.write_csv(w))?;
                out.write(&format!("{stem}.svg"), causal_svg(&a, &stem)?.as_bytes())?;
                let max_abs = a.delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                let mean = a.delta.iter().sum::<f64>() / a.delta.len() as f64;
                rows.push(format!("{},{dir},{seed},{},{}", tag.trim_end_matches('_'), fmt_f64(mean), fmt_f64(max_abs)));
                summary.push(json!({ "case": tag.trim_end_matches('_'), "direction": dir, "seed": seed, "mean_delta": mean, "max_abs_delta": max_abs }));
                if !tag.is_empty() {
                    let key = format!("{dir}_seed{seed}");
                    let series = Series {
                        label: tag.trim_end_matches('_').into(),
                        x: a.shifts.iter().map(|&s| s as f64).collect(),
                        y: a.delta.clone(),
                    };
                    match overlays.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, v)) => v.push(series),
                        None => overlays.push((key, vec![series])),
                    }
                }
            }
        }
    }
    let mut table = String::from("case,direction,seed,mean_delta,max_abs_delta\n");
    for r in rows {
        table.push_str(&r);
        table.push('\n');
    }
    out.write("causal_summary.csv", table.as_bytes())?;
    for (key, series) in overlays {
        let bundle = SeriesBundle {
            title: format!("{} scan, {key}", config.scan.as_ref().map_or("", |s| s.parameter.as_str())),
            x_label: "shift".into(),
            y_label: "delta".into(),
            series,
            bands: vec![],
        };
        out.write(&format!("scan_{key}.svg"), plot_svg(&bundle, &PlotStyle::default())?.as_bytes())?;
    }
    Ok(json!({ "shifts": shifts.len(), "runs": summary }))
}

fn run_test(config: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let tr = load_trajectory(config)?;
    let partition = config.partition_for(tr.dim_labels())?;
    let settings = &config.causal.settings;
    let mut table = String::from("direction,seed,time_shift,permutations,delta_observed,p_value\n");
    let mut summary = Vec::new();
    for (dir, p) in directions(config, &partition) {
        for &seed in &config.seeds {
            let (m, j) = train_dictionaries(tr.states(), &p, &config.dictionary, seed, settings.train_fraction)?;
            let h = identifiability_test(
                tr.states(),
                &p,
                &m,
                &j,
                config.test.time_shift,
                config.test.permutations,
                seed,
                settings,
            )?;
            out.write(&format!("test_{dir}_seed{seed}.json"), serde_json::to_string_pretty(&h)?.as_bytes())?;
            table.push_str(&format!(
                "{dir},{seed},{},{},{},{}\n",
                h.time_shift,
                h.permutations,
                fmt_f64(h.delta_observed),
                fmt_f64(h.p_value)
            ));
            summary.push(json!({ "direction": dir, "seed": seed, "delta_observed": h.delta_observed, "p_value": h.p_value }));
        }
    }
    out.write("test_summary.csv", table.as_bytes())?;
    Ok(json!({ "runs": summary }))
}

fn run_forecast(config: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let tr = load_trajectory(config)?;
    let partition = config.partition_for(tr.dim_labels())?;
    let settings = CausalConfig {
        train_fraction: config
            .forecast
            .train_fraction
            .unwrap_or(config.causal.settings.train_fraction),
        ..config.causal.settings.clone()
    };
    let horizon = config.forecast.horizon;
    let mut table = String::from("direction,seed,horizon,marginal_mse,joint_mse\n");
    let mut summary = Vec::new();
    for (dir, p) in directions(config, &partition) {
        let labels: Vec<String> = p.effect.iter().map(|&i| tr.dim_labels()[i].clone()).collect();
        for &seed in &config.seeds {
            let (m, j) = train_dictionaries(tr.states(), &p, &config.dictionary, seed, settings.train_fraction)?;
            let fc = forecast_comparison(tr.states(), &p, &m, &j, horizon, &settings)?;
            let stem = format!("forecast_{dir}_seed{seed}");
            out.csv(&format!("{stem}.csv"), |w| fc.write_csv(w, &labels))?;
            let steps: Vec<f64> = (1..=horizon).map(|s| s as f64).collect();
            let bundle = SeriesBundle {
                title: format!("{stem} ({})", labels[0]),
                x_label: "step".into(),
                y_label: labels[0].clone(),
                series: [("truth", &fc.truth), ("marginal", &fc.marginal), ("joint", &fc.joint)]
                    .into_iter()
                    .map(|(l, m)| Series {
                        label: l.into(),
                        x: steps.clone(),
                        y: m.column(0),
                    })
                    .collect(),
                bands: vec![],
            };
            out.write(&format!("{stem}.svg"), plot_svg(&bundle, &PlotStyle::default())?.as_bytes())?;
            table.push_str(&format!("{dir},{seed},{horizon},{},{}\n", fmt_f64(fc.marginal_mse), fmt_f64(fc.joint_mse)));
            summary.push(json!({ "direction": dir, "seed": seed, "marginal_mse": fc.marginal_mse, "joint_mse": fc.joint_mse }));
        }
    }
    out.write("forecast_summary.csv", table.as_bytes())?;
    Ok(json!({ "runs": summary }))
}

fn run_stability(config: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let params = match &config.system {
        Some(SystemSpec::Enso(p)) => p,
        _ => return Err(Error::Config("the stability stage needs an enso [system]".into())),
    };
    let section = config
        .stability
        .as_ref()
        .ok_or_else(|| Error::Config("the stability stage needs a [stability] section".into()))?;
    let results = bifurcation_scan(params, &section.mu_values.values())?;
    out.csv("bifurcation.csv", |w| write_bifurcation_csv(&results, w))?;
    let [lo, hi] = section.mu_bracket;
    let critical = find_critical_mu(params, lo, hi)?;
    let mus: Vec<f64> = results.iter().map(|r| r.mu).collect();
    let bundle = SeriesBundle {
        title: format!("critical mu {critical:.6}"),
        x_label: "mu".into(),
        y_label: "lambda".into(),
        series: vec![
            Series {
                label: "Re".into(),
                x: mus.clone(),
                y: results.iter().map(|r| r.re_lambda()).collect(),
            },
            Series {
                label: "|Im|".into(),
                x: mus,
                y: results.iter().map(|r| r.im_lambda()).collect(),
            },
        ],
        bands: vec![],
    };
    out.write("bifurcation.svg", plot_svg(&bundle, &PlotStyle::default())?.as_bytes())?;
    let regimes: Vec<_> = results.iter().map(|r| json!({ "mu": r.mu, "regime": r.regime.as_str() })).collect();
    Ok(json!({ "critical_mu": critical, "regimes": regimes }))
}

fn resolve_dim(r: &DimRef, labels: &[String]) -> Result<usize> {
    match r {
        DimRef::Index(i) if *i < labels.len() => Ok(*i),
        DimRef::Index(i) => Err(Error::Config(format!("dimension {i} out of range"))),
        DimRef::Name(n) => labels
            .iter()
            .position(|l| l == n)
            .ok_or_else(|| Error::Config(format!("unknown dimension `{n}`"))),
    }
}

fn row_mean(tr: &Trajectory, dims: &[usize]) -> Vec<f64> {
    (0..tr.len())
        .map(|i| dims.iter().map(|&d| tr.state(i)[d]).sum::<f64>() / dims.len() as f64)
        .collect()
}

fn run_auroc(config: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let full = load_trajectory(config)?;
    let partition = config.partition_for(full.dim_labels())?;
    let mag = &config.magnitude;
    let mut tr = full.clone();
    if let Some(k) = mag.keep_last {
        tr = tr.slice(tr.len().saturating_sub(k), tr.len())?;
    }
    tr = tr.subsample(mag.subsample)?;
    let labels = match &mag.labels {
        LabelSource::EffectMean => extreme_labels(&row_mean(&tr, &partition.effect), mag.gamma)?,
        LabelSource::Dims { dims } => {
            let idx = dims.iter().map(|d| resolve_dim(d, tr.dim_labels())).collect::<Result<Vec<_>>>()?;
            extreme_labels(&row_mean(&tr, &idx), mag.gamma)?
        }
        LabelSource::Oni { column, threshold } => {
            let c = resolve_dim(column, tr.dim_labels())?;
            oni_labels(&tr.states().column(c), *threshold)?
        }
    };
    let settings = &config.causal.settings;
    let mut table = String::from("seed,auroc,positives,negatives\n");
    let mut summary = Vec::new();
    for &seed in &config.seeds {
        let (m, j) = train_dictionaries(full.states(), &partition, &config.dictionary, seed, settings.train_fraction)?;
        let series = magnitude_series(tr.states(), &partition, &m, &j, mag.window, mag.step, settings.rel_tol)?;
        let roc = magnitude_auroc(&series, &labels)?;
        out.csv(&format!("magnitude_seed{seed}.csv"), |w| series.write_csv(w, tr.times()))?;
        out.csv(&format!("roc_seed{seed}.csv"), |w| roc.write_csv(w))?;
        out.write(&format!("roc_seed{seed}.svg"), roc_svg(&roc, &format!("seed {seed}"))?.as_bytes())?;
        out.write(&format!("auroc_seed{seed}.json"), roc.summary_json()?.as_bytes())?;
        table.push_str(&format!("{seed},{},{},{}\n", fmt_f64(roc.auroc), roc.positives, roc.negatives));
        summary.push(json!({ "seed": seed, "auroc": roc.auroc, "positives": roc.positives }));
    }
    out.write("auroc_summary.csv", table.as_bytes())?;
    Ok(json!({ "samples": tr.len(), "runs": summary }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enso_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
            name = "t"
            [system]
            kind = "enso"
            mu = 0.5
            [simulation]
            t1 = 60.0
            dt = 0.1
            initial = [1.0, 0.0]
            [dictionary]
            kind = "identity"
            [causal]
            shifts = [1, 2, 3]
            settings = {{ shift_mode = "refit" }}
            {extra}
            "#
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn causal_stage_writes_hashed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&enso_config(""), Stage::Causal, dir.path()).unwrap();
        let names: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
        assert!(names.contains(&"causal_c2e_seed0.csv"));
        assert!(names.contains(&"causal_e2c_seed0.csv"));
        for o in &m.outputs {
            let bytes = std::fs::read(dir.path().join(&o.path)).unwrap();
            assert_eq!(hex(&Sha256::digest(&bytes)), o.sha256);
        }
        let text = std::fs::read_to_string(dir.path().join("manifest_causal.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config_hash, enso_config("").hash());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run_experiment(&enso_config(""), Stage::Causal, a.path()).unwrap();
        let mb = run_experiment(&enso_config(""), Stage::Causal, b.path()).unwrap();
        assert_eq!(ma.outputs, mb.outputs);
    }

    #[test]
    fn scan_and_stability() {
        let cfg = enso_config(
            "[scan]\nparameter = \"mu\"\nvalues = [0.5, 0.6]\n[stability]\nmu_values = { start = 0.5, end = 0.8, num = 4 }\n",
        );
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&cfg, Stage::Causal, dir.path()).unwrap();
        assert!(m.outputs.iter().any(|o| o.path == "causal_mu0.6_c2e_seed0.csv"));
        assert!(m.outputs.iter().any(|o| o.path == "scan_c2e_seed0.svg"));
        let s = run_experiment(&cfg, Stage::Stability, dir.path()).unwrap();
        let mu = s.summary["critical_mu"].as_f64().unwrap();
        assert!((mu - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn failure_removes_partial_outputs() {
        // The refit at shift 5000 fails after the first shift succeeded.
        let mut cfg = enso_config("");
        cfg.causal.shifts = super::super::config::ShiftSpec::List(vec![1, 5000]);
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, Stage::Causal, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "causal", .. }));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn stability_needs_enso() {
        let cfg = ExperimentConfig::from_toml("[system]\nkind = \"coupled_rossler\"\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_experiment(&cfg, Stage::Stability, dir.path()),
            Err(Error::Stage { stage: "stability", .. })
        ));
    }
}
