//! Observable dictionaries `psi: R^d -> R^M`.

mod fixed;
mod networks;
mod nn;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, Matrix};

pub use fixed::{median_lengthscale, PolynomialMap, RffMap, TimeDelayMap, MEDIAN_SUBSAMPLE};
pub use networks::{Cnn, LossWeights, Mlp};
pub use train::{adamw_step, train_dictionary, AdamWState, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Identity,
    Rff,
    Polynomial,
    TimeDelay,
    Mlp,
    Cnn,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Identity => "identity",
            FeatureKind::Rff => "rff",
            FeatureKind::Polynomial => "polynomial",
            FeatureKind::TimeDelay => "time_delay",
            FeatureKind::Mlp => "mlp",
            FeatureKind::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity { dim: usize },
    Rff(RffMap),
    Polynomial(PolynomialMap),
    TimeDelay(TimeDelayMap),
    Mlp(Mlp),
    Cnn(Cnn),
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("identity map needs dim >= 1".into()));
        }
        Ok(FeatureMap::Identity { dim })
    }

    pub fn rff(input_dim: usize, m: usize, lengthscale: f64, seed: u64) -> Result<Self> {
        RffMap::new(input_dim, m, lengthscale, seed).map(FeatureMap::Rff)
    }

    /// RFF with the median-distance lengthscale of `states`.
    pub fn rff_median(states: &Matrix, m: usize, seed: u64) -> Result<Self> {
        Self::rff(states.cols(), m, median_lengthscale(states, seed), seed)
    }

    pub fn polynomial(input_dim: usize, degree: usize) -> Result<Self> {
        PolynomialMap::new(input_dim, degree).map(FeatureMap::Polynomial)
    }

    pub fn time_delay(input_dim: usize, delays: usize, lag: usize) -> Result<Self> {
        TimeDelayMap::new(input_dim, delays, lag).map(FeatureMap::TimeDelay)
    }

    pub fn mlp(input_dim: usize, widths: &[usize], seed: u64) -> Result<Self> {
        Mlp::new(input_dim, widths, seed).map(FeatureMap::Mlp)
    }

    pub fn cnn(channels_in: usize, nx: usize, ny: usize, channels: &[usize], code_dim: usize, seed: u64) -> Result<Self> {
        Cnn::new(channels_in, nx, ny, channels, code_dim, seed).map(FeatureMap::Cnn)
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureMap::Identity { .. } => FeatureKind::Identity,
            FeatureMap::Rff(_) => FeatureKind::Rff,
            FeatureMap::Polynomial(_) => FeatureKind::Polynomial,
            FeatureMap::TimeDelay(_) => FeatureKind::TimeDelay,
            FeatureMap::Mlp(_) => FeatureKind::Mlp,
            FeatureMap::Cnn(_) => FeatureKind::Cnn,
        }
    }

    /// Dimension of one state.
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Rff(r) => r.input_dim,
            FeatureMap::Polynomial(p) => p.input_dim,
            FeatureMap::TimeDelay(t) => t.input_dim,
            FeatureMap::Mlp(m) => m.input_dim,
            FeatureMap::Cnn(c) => c.input_dim(),
        }
    }

    /// Length of the vector accepted by [`apply`](Self::apply): one state,
    /// or for time-delay maps the stacked window of `delays + 1` states.
    pub fn input_len(&self) -> usize {
        match self {
            FeatureMap::TimeDelay(t) => t.output_dim(),
            other => other.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Rff(r) => r.output_dim(),
            FeatureMap::Polynomial(p) => p.output_dim(),
            FeatureMap::TimeDelay(t) => t.output_dim(),
            FeatureMap::Mlp(m) => m.code_dim(),
            FeatureMap::Cnn(c) => c.code_dim,
        }
    }

    /// Leading samples of a series without a full input window.
    pub fn history(&self) -> usize {
        match self {
            FeatureMap::TimeDelay(t) => t.history(),
            _ => 0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, FeatureMap::Mlp(_) | FeatureMap::Cnn(_))
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            FeatureMap::Rff(r) => Some(r.seed),
            FeatureMap::Mlp(m) => Some(m.seed),
            FeatureMap::Cnn(c) => Some(c.seed),
            _ => None,
        }
    }

    pub fn lengthscale(&self) -> Option<f64> {
        match self {
            FeatureMap::Rff(r) => Some(r.lengthscale),
            _ => None,
        }
    }

    /// Flat learnable parameters (empty for prescribed maps).
    pub fn params(&self) -> &[f64] {
        match self {
            FeatureMap::Mlp(m) => &m.codec.params,
            FeatureMap::Cnn(c) => &c.codec.params,
            _ => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            FeatureMap::Mlp(m) => &mut m.codec.params,
            FeatureMap::Cnn(c) => &mut c.codec.params,
            _ => &mut [],
        }
    }

    /// Autoencoder training loss and its gradient at `params`, for
    /// learnable maps only.
    pub fn loss_and_grad(&self, params: &[f64], inputs: &Matrix, targets: &Matrix, w: LossWeights) -> Result<(f64, Vec<f64>)> {
        let codec = match self {
            FeatureMap::Mlp(m) => &m.codec,
            FeatureMap::Cnn(c) => &c.codec,
            _ => return Err(Error::InvalidArgument(format!("{} maps have no training loss", self.kind().as_str()))),
        };
        if params.len() != codec.params.len() {
            return dim_err(format!("{} parameters for a network with {}", params.len(), codec.params.len()));
        }
        codec.loss_and_grad(params, inputs, targets, w)
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FeatureMap::Identity { .. } | FeatureMap::TimeDelay(_) => out.copy_from_slice(x),
            FeatureMap::Rff(r) => r.apply_into(x, out),
            FeatureMap::Polynomial(p) => p.apply_into(x, out),
            FeatureMap::Mlp(m) => m.codec.encode_into(x, out),
            FeatureMap::Cnn(c) => c.codec.encode_into(x, out),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return dim_err(format!(
                "{} map expects input of length {}, got {}",
                self.kind().as_str(),
                self.input_len(),
                x.len()
            ));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Features of every sample of `series` (one row per sample). The first
    /// [`history`](Self::history) samples are dropped, so row `k` of the
    /// result belongs to sample `k + history`.
    pub fn apply_series(&self, series: &Matrix) -> Result<Matrix> {
        if series.cols() != self.input_dim() {
            return dim_err(format!(
                "{} map expects {}-dimensional states, series has {}",
                self.kind().as_str(),
                self.input_dim(),
                series.cols()
            ));
        }
        let h = self.history();
        if series.rows() <= h {
            return dim_err(format!("series of {} samples is shorter than the {h}-sample history", series.rows()));
        }
        let n = series.rows() - h;
        let mut out = Matrix::zeros(n, self.output_dim());
        match self {
            FeatureMap::TimeDelay(t) => {
                let d = t.input_dim;
                for k in 0..n {
                    let row = out.row_mut(k);
                    for j in 0..=t.delays {
                        row[j * d..(j + 1) * d].copy_from_slice(series.row(k + h - j * t.lag));
                    }
                }
            }
            FeatureMap::Mlp(m) => m.codec.encode_rows(series, &mut out),
            FeatureMap::Cnn(c) => c.codec.encode_rows(series, &mut out),
            _ => {
                for k in 0..n {
                    self.apply_into(series.row(k), out.row_mut(k));
                }
            }
        }
        Ok(out)
    }

    /// `<psi(x), psi(y)>`.
    pub fn kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(dot(&self.apply(x)?, &self.apply(y)?))
    }

    /// Decoder reconstruction of a state, for learnable maps.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let codec = match self {
            FeatureMap::Mlp(m) => &m.codec,
            FeatureMap::Cnn(c) => &c.codec,
            _ => return Err(Error::InvalidArgument("only learnable maps have a decoder".into())),
        };
        if x.len() != self.input_dim() {
            return dim_err(format!("expected a state of length {}, got {}", self.input_dim(), x.len()));
        }
        Ok(codec.reconstruct(x))
    }

    pub fn to_document(&self) -> FeatureMapDocument {
        let (architecture, params, shift, scale) = match self {
            FeatureMap::Identity { .. } => (vec![], vec![], vec![], vec![]),
            FeatureMap::Rff(r) => (vec![], r.flat_params(), vec![], vec![]),
            FeatureMap::Polynomial(p) => (vec![p.degree], vec![], vec![], vec![]),
            FeatureMap::TimeDelay(t) => (vec![t.delays, t.lag], vec![], vec![], vec![]),
            FeatureMap::Mlp(m) => (
                m.widths.clone(),
                m.codec.params.clone(),
                m.codec.shift.clone(),
                m.codec.scale.clone(),
            ),
            FeatureMap::Cnn(c) => {
                let mut arch = vec![c.channels_in, c.nx, c.ny];
                arch.extend(&c.channels);
                (arch, c.codec.params.clone(), c.codec.shift.clone(), c.codec.scale.clone())
            }
        };
        FeatureMapDocument {
            version: DOCUMENT_VERSION,
            kind: self.kind(),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            seed: self.seed(),
            lengthscale: self.lengthscale(),
            architecture,
            input_shift: shift,
            input_scale: scale,
            params,
        }
    }

    pub fn from_document(doc: &FeatureMapDocument) -> Result<Self> {
        if doc.version != DOCUMENT_VERSION {
            return Err(Error::Config(format!("unsupported feature-map document version {}", doc.version)));
        }
        let seed = doc.seed.unwrap_or(0);
        let arch = &doc.architecture;
        let need = |n: usize| -> Result<()> {
            if arch.len() < n {
                Err(Error::Config(format!("{} document needs {n} architecture entries", doc.kind.as_str())))
            } else {
                Ok(())
            }
        };
        let map = match doc.kind {
            FeatureKind::Identity => Self::identity(doc.input_dim)?,
            FeatureKind::Rff => {
                let l = doc
                    .lengthscale
                    .ok_or_else(|| Error::Config("RFF document lacks a lengthscale".into()))?;
                FeatureMap::Rff(RffMap::from_parts(doc.input_dim, l, seed, &doc.params)?)
            }
            FeatureKind::Polynomial => {
                need(1)?;
                Self::polynomial(doc.input_dim, arch[0])?
            }
            FeatureKind::TimeDelay => {
                need(2)?;
                Self::time_delay(doc.input_dim, arch[0], arch[1])?
            }
            FeatureKind::Mlp => {
                let mut m = Mlp::new(doc.input_dim, arch, seed)?;
                m.codec = m.codec.with_params(doc.params.clone(), doc.input_shift.clone(), doc.input_scale.clone())?;
                FeatureMap::Mlp(m)
            }
            FeatureKind::Cnn => {
                need(4)?;
                let mut c = Cnn::new(arch[0], arch[1], arch[2], &arch[3..], doc.output_dim, seed)?;
                c.codec = c.codec.with_params(doc.params.clone(), doc.input_shift.clone(), doc.input_scale.clone())?;
                FeatureMap::Cnn(c)
            }
        };
        if map.input_dim() != doc.input_dim || map.output_dim() != doc.output_dim {
            return dim_err(format!(
                "document declares {} -> {}, parameters give {} -> {}",
                doc.input_dim,
                doc.output_dim,
                map.input_dim(),
                map.output_dim()
            ));
        }
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("documents serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }

    /// SHA-256 of the compact JSON document, used to reference a dictionary
    /// from exported models.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_document()).expect("documents serialise");
        hex(&Sha256::digest(&bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub const DOCUMENT_VERSION: u32 = 1;

/// Serialised form of a [`FeatureMap`].
///
/// `architecture` is kind-specific: `[degree]` (polynomial), `[delays, lag]`
/// (time_delay), the layer widths (mlp), or `[channels_in, nx, ny,
/// channels...]` (cnn). RFF parameters are the row-major frequency matrix
/// followed by the phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapDocument {
    pub version: u32,
    pub kind: FeatureKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: Option<u64>,
    pub lengthscale: Option<f64>,
    pub architecture: Vec<usize>,
    #[serde(default)]
    pub input_shift: Vec<f64>,
    #[serde(default)]
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
}

fn default_widths() -> Vec<usize> {
    vec![16, 32]
}

fn default_channels() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

fn default_code_dim() -> usize {
    128
}

fn default_grid() -> usize {
    16
}

fn default_cnn_train() -> TrainConfig {
    TrainConfig {
        epochs: 50,
        learning_rate: 1e-4,
        ..TrainConfig::default()
    }
}

fn default_delays() -> usize {
    5
}

fn default_one() -> usize {
    1
}

fn default_rff_m() -> usize {
    500
}

/// How to construct (and, for learnable kinds, train) a dictionary from
/// training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DictionarySpec {
    Identity,
    Rff {
        #[serde(default = "default_rff_m")]
        m: usize,
        /// Median heuristic when absent.
        #[serde(default)]
        lengthscale: Option<f64>,
    },
    Polynomial {
        #[serde(default = "default_one")]
        degree: usize,
    },
    TimeDelay {
        #[serde(default = "default_delays")]
        delays: usize,
        #[serde(default = "default_one")]
        lag: usize,
    },
    Mlp {
        #[serde(default = "default_widths")]
        widths: Vec<usize>,
        #[serde(default)]
        train: TrainConfig,
    },
    Cnn {
        #[serde(default = "default_channels")]
        channels: Vec<usize>,
        #[serde(default = "default_code_dim")]
        code_dim: usize,
        #[serde(default = "default_grid")]
        nx: usize,
        #[serde(default = "default_grid")]
        ny: usize,
        #[serde(default = "default_cnn_train")]
        train: TrainConfig,
    },
}

impl Default for DictionarySpec {
    fn default() -> Self {
        DictionarySpec::Mlp {
            widths: default_widths(),
            train: TrainConfig::default(),
        }
    }
}

impl DictionarySpec {
    pub fn mlp(widths: &[usize], train: TrainConfig) -> Self {
        DictionarySpec::Mlp {
            widths: widths.to_vec(),
            train,
        }
    }

    pub fn rff(m: usize) -> Self {
        DictionarySpec::Rff { m, lengthscale: None }
    }

    /// Builds a map over the columns of `states` (one row per sample) with
    /// parameters initialised from `seed`; learnable maps are then trained
    /// on `states`. Returns the map and the training-loss history.
    pub fn build(&self, states: &Matrix, seed: u64) -> Result<(FeatureMap, Vec<f64>)> {
        let d = states.cols();
        Ok(match self {
            DictionarySpec::Identity => (FeatureMap::identity(d)?, vec![]),
            DictionarySpec::Rff { m, lengthscale } => {
                let l = lengthscale.unwrap_or_else(|| median_lengthscale(states, seed));
                (FeatureMap::rff(d, *m, l, seed)?, vec![])
            }
            DictionarySpec::Polynomial { degree } => (FeatureMap::polynomial(d, *degree)?, vec![]),
            DictionarySpec::TimeDelay { delays, lag } => (FeatureMap::time_delay(d, *delays, *lag)?, vec![]),
            DictionarySpec::Mlp { widths, train } => {
                let mut map = FeatureMap::mlp(d, widths, seed)?;
                let hist = train_dictionary(&mut map, states, train)?;
                (map, hist)
            }
            DictionarySpec::Cnn {
                channels,
                code_dim,
                nx,
                ny,
                train,
            } => {
                let plane = nx * ny;
                if plane == 0 || d % plane != 0 {
                    return dim_err(format!("{d}-dimensional states are not fields on a {nx}x{ny} grid"));
                }
                let mut map = FeatureMap::cnn(d / plane, *nx, *ny, channels, *code_dim, seed)?;
                let hist = train_dictionary(&mut map, states, train)?;
                (map, hist)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn identity_returns_state() {
        let m = FeatureMap::identity(2).unwrap();
        assert_eq!(m.apply(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        assert_eq!(m.kernel_eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(m.apply(&[1.0]).is_err());
    }

    #[test]
    fn zeroed_networks_output_one_half() {
        let mut m = FeatureMap::mlp(3, &[16, 32], 0).unwrap();
        m.params_mut().fill(0.0);
        assert!(m.apply(&[5.0, -2.0, 9.0]).unwrap().iter().all(|&v| v == 0.5));
        let mut c = FeatureMap::cnn(2, 8, 8, &[2, 4], 6, 0).unwrap();
        c.params_mut().fill(0.0);
        assert_eq!(c.apply(&[1.0; 128]).unwrap(), vec![0.5; 6]);
    }

    #[test]
    fn rff_self_inner_product_near_one() {
        let m = FeatureMap::rff(3, 500, 1.0, 0).unwrap();
        let x = [0.3, -1.2, 2.0];
        let k = m.kernel_eval(&x, &x).unwrap();
        assert!((k - 1.0).abs() < 0.15, "k(x,x) = {k}");
    }

    #[test]
    fn rff_approximates_gaussian_kernel() {
        let m_dim = 10_000;
        let m = FeatureMap::rff(2, m_dim, 1.0, 7).unwrap();
        let mut rng = SeededRng::new(1);
        for _ in 0..5 {
            let x = [rng.normal(), rng.normal()];
            let y = [rng.normal(), rng.normal()];
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            let exact = (-d2 / 2.0).exp();
            let approx = m.kernel_eval(&x, &y).unwrap();
            assert!((approx - exact).abs() < 3.0 / (m_dim as f64).sqrt(), "{approx} vs {exact}");
            assert_eq!(approx, m.kernel_eval(&y, &x).unwrap());
        }
    }

    #[test]
    fn time_delay_series_windows() {
        let m = FeatureMap::time_delay(1, 2, 1).unwrap();
        let s = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let f = m.apply_series(&s).unwrap();
        assert_eq!(f.shape(), (2, 3));
        assert_eq!(f.row(0), &[2.0, 1.0, 0.0]);
        assert_eq!(f.row(1), &[3.0, 2.0, 1.0]);
        assert_eq!(m.input_len(), 3);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = SeededRng::new(3);
        let states = Matrix::from_fn(40, 3, |_, _| rng.normal());
        let maps = vec![
            FeatureMap::identity(3).unwrap(),
            FeatureMap::rff_median(&states, 20, 4).unwrap(),
            FeatureMap::polynomial(3, 2).unwrap(),
            FeatureMap::time_delay(3, 5, 1).unwrap(),
            DictionarySpec::mlp(
                &[4, 5],
                TrainConfig {
                    epochs: 3,
                    ..TrainConfig::default()
                },
            )
            .build(&states, 9)
            .unwrap()
            .0,
            FeatureMap::cnn(1, 4, 4, &[2], 3, 2).unwrap(),
        ];
        for m in maps {
            let back = FeatureMap::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m, "{:?}", m.kind());
            assert_eq!(back.content_hash(), m.content_hash());
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = SeededRng::new(5);
        let states = Matrix::from_fn(60, 2, |i, j| (0.1 * i as f64 + j as f64).sin() + 0.01 * rng.normal());
        let spec = DictionarySpec::mlp(
            &[8, 6],
            TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
        );
        let (a, ha) = spec.build(&states, 1).unwrap();
        let (b, hb) = spec.build(&states, 1).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
        assert!(ha[ha.len() - 1] < 0.5 * ha[0]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let states = Matrix::from_fn(10, 2, |i, j| (i + j) as f64);
        let mut m = FeatureMap::mlp(2, &[3], 0).unwrap();
        let before = m.params().to_vec();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let h = train_dictionary(&mut m, &states, &cfg).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn prescribed_maps_are_not_trainable() {
        let mut m = FeatureMap::identity(2).unwrap();
        assert!(train_dictionary(&mut m, &Matrix::zeros(5, 2), &TrainConfig::default()).is_err());
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: DictionarySpec = toml::from_str("kind = \"mlp\"\nwidths = [16, 32]\n[train]\nepochs = 10\n").unwrap();
        match s {
            DictionarySpec::Mlp { widths, train } => {
                assert_eq!(widths, vec![16, 32]);
                assert_eq!(train.epochs, 10);
                assert_eq!(train.learning_rate, 1e-2);
            }
            _ => panic!("wrong kind"),
        }
    }
}
