use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::CausalConfig;
use crate::dynamics::{ComponentPartition, SystemSpec};
use crate::error::{Error, Result};
use crate::observables::{hex, DictionarySpec};

/// One experiment: where the data comes from, how it is split into cause
/// and effect, and the settings of every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the output root.
    pub output_dir: Option<PathBuf>,
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub input: Option<InputConfig>,
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub dictionary: DictionarySpec,
    #[serde(default)]
    pub causal: CausalSection,
    #[serde(default)]
    pub test: TestSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    #[serde(default)]
    pub magnitude: MagnitudeSection,
    pub stability: Option<StabilitySection>,
    /// Repeats the causal stage over values of one system parameter.
    pub scan: Option<ScanSection>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    /// Record every `stride`-th integration step.
    pub stride: usize,
    /// Defaults to the system's own initial state.
    pub initial: Option<Vec<f64>>,
    /// Seed of randomised initial states (reaction-diffusion fields).
    pub initial_seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t1: 10.0,
            dt: 1e-2,
            stride: 1,
            initial: None,
            initial_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default = "default_time_column")]
    pub time_column: String,
    /// All non-time columns when absent.
    pub columns: Option<Vec<String>>,
}

fn default_time_column() -> String {
    "t".into()
}

/// A state dimension given by position or by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub effect: Vec<DimRef>,
    pub cause: Vec<DimRef>,
}

impl PartitionConfig {
    pub fn resolve(&self, labels: &[String]) -> Result<ComponentPartition> {
        let lookup = |refs: &[DimRef]| -> Result<Vec<usize>> {
            refs.iter()
                .map(|r| match r {
                    DimRef::Index(i) => Ok(*i),
                    DimRef::Name(n) => labels
                        .iter()
                        .position(|l| l == n)
                        .ok_or_else(|| Error::Config(format!("unknown dimension `{n}`"))),
                })
                .collect()
        };
        ComponentPartition::new(lookup(&self.effect)?, lookup(&self.cause)?, labels.len())
    }
}

/// Shifts as an explicit list or an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftSpec {
    List(Vec<usize>),
    Range {
        start: usize,
        end: usize,
        #[serde(default = "one")]
        step: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec::List(vec![1])
    }
}

impl ShiftSpec {
    pub fn values(&self) -> Result<Vec<usize>> {
        let v: Vec<usize> = match self {
            ShiftSpec::List(v) => v.clone(),
            ShiftSpec::Range { start, end, step } => {
                if *step == 0 {
                    return Err(Error::Config("shift step must be >= 1".into()));
                }
                (*start..=*end).step_by(*step).collect()
            }
        };
        if v.is_empty() || v.contains(&0) {
            return Err(Error::Config("shifts must be non-empty and >= 1".into()));
        }
        Ok(v)
    }

    /// `a,b,c` or `start:end[:step]`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse shifts `{text}`"));
        if text.contains(':') {
            let parts: Vec<usize> = text
                .split(':')
                .map(|p| p.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            match parts[..] {
                [start, end] => Ok(ShiftSpec::Range { start, end, step: 1 }),
                [start, end, step] => Ok(ShiftSpec::Range { start, end, step }),
                _ => Err(bad()),
            }
        } else {
            let v = text
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            Ok(ShiftSpec::List(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalSection {
    pub shifts: ShiftSpec,
    /// Also analyse the reversed partition.
    pub both_directions: bool,
    /// Ensemble size; members use consecutive seeds from each run seed.
    pub ensemble: Option<usize>,
    pub settings: CausalConfig,
}

impl Default for CausalSection {
    fn default() -> Self {
        Self {
            shifts: ShiftSpec::default(),
            both_directions: true,
            ensemble: None,
            settings: CausalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub permutations: usize,
    pub time_shift: usize,
}

impl Default for TestSection {
    fn default() -> Self {
        Self {
            permutations: 100,
            time_shift: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: usize,
    /// Overrides the causal split for forecasting.
    pub train_fraction: Option<f64>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            horizon: 200,
            train_fraction: None,
        }
    }
}

/// Scalar series whose extremes are the events to detect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelSource {
    /// Mean over the effect components.
    EffectMean,
    /// Mean over the listed dimensions.
    Dims { dims: Vec<DimRef> },
    /// ONI-style warm / cold episodes of one column.
    Oni {
        column: DimRef,
        #[serde(default = "half")]
        threshold: f64,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnitudeSection {
    pub window: usize,
    pub step: usize,
    pub gamma: f64,
    /// Keep only the final samples of the trajectory.
    pub keep_last: Option<usize>,
    /// Then keep every `subsample`-th sample.
    pub subsample: usize,
    pub labels: LabelSource,
}

impl Default for MagnitudeSection {
    fn default() -> Self {
        Self {
            window: 10,
            step: 1,
            gamma: 1.0,
            keep_last: None,
            subsample: 1,
            labels: LabelSource::EffectMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub mu_values: ShiftlessRange,
    #[serde(default = "default_mu_bracket")]
    pub mu_bracket: [f64; 2],
}

fn default_mu_bracket() -> [f64; 2] {
    [0.3, 0.9]
}

/// Real values as a list or `num` evenly spaced points on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftlessRange {
    List(Vec<f64>),
    Linspace { start: f64, end: f64, num: usize },
}

impl ShiftlessRange {
    pub fn values(&self) -> Vec<f64> {
        match self {
            ShiftlessRange::List(v) => v.clone(),
            ShiftlessRange::Linspace { start, end, num } => match num {
                0 => vec![],
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub parameter: String,
    pub values: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative input path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(input) = cfg.input.as_mut() {
            if input.path.is_relative() {
                if let Some(dir) = path.parent() {
                    input.path = dir.join(&input.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.system, &self.input) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [system] or [input], not both".into())),
            (None, None) => return Err(Error::Config("one of [system] or [input] is required".into())),
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {
                if self.partition.is_none() {
                    return Err(Error::Config("CSV input needs an explicit [partition]".into()));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.causal.shifts.values()?;
        self.causal.settings.validate()?;
        if let Some(n) = self.causal.ensemble {
            if n < 2 {
                return Err(Error::Config("an ensemble needs at least two members".into()));
            }
        }
        if self.test.permutations == 0 || self.test.time_shift == 0 {
            return Err(Error::Config("test needs permutations >= 1 and time_shift >= 1".into()));
        }
        if self.forecast.horizon == 0 {
            return Err(Error::Config("forecast horizon must be >= 1".into()));
        }
        if self.magnitude.subsample == 0 {
            return Err(Error::Config("magnitude subsample must be >= 1".into()));
        }
        if let Some(scan) = &self.scan {
            if scan.values.is_empty() {
                return Err(Error::Config("scan needs at least one value".into()));
            }
            let system = self
                .system
                .as_ref()
                .ok_or_else(|| Error::Config("a parameter scan needs a [system]".into()))?;
            with_parameter(system, &scan.parameter, scan.values[0])?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Default partition of a built-in system when none is configured.
    pub fn partition_for(&self, labels: &[String]) -> Result<ComponentPartition> {
        if let Some(p) = &self.partition {
            return p.resolve(labels);
        }
        let d = labels.len();
        match &self.system {
            Some(SystemSpec::CoupledRossler(_)) => ComponentPartition::new(vec![0, 1, 2], vec![3, 4, 5], d),
            Some(SystemSpec::ReactionDiffusion(_)) => {
                let n = d / 2;
                ComponentPartition::new((0..n).collect(), (n..d).collect(), d)
            }
            Some(SystemSpec::Enso(_)) => ComponentPartition::new(vec![1], vec![0], d),
            None => Err(Error::Config("no partition configured".into())),
        }
    }
}

/// A copy of `system` with one numeric parameter replaced.
pub fn with_parameter(system: &SystemSpec, name: &str, value: f64) -> Result<SystemSpec> {
    let mut doc = serde_json::to_value(system)?;
    let obj = doc.as_object_mut().expect("systems serialise as tables");
    match obj.get(name) {
        Some(v) if v.is_f64() => {}
        _ => return Err(Error::Config(format!("system has no real parameter `{name}`"))),
    }
    obj.insert(name.into(), serde_json::json!(value));
    let out: SystemSpec = serde_json::from_value(doc)?;
    out.validate()?;
    Ok(out)
}
