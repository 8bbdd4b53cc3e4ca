//! Learnable encoder–decoder dictionaries.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::Matrix;

use super::nn::{NetBuilder, Network};

/// Weights of the two mean-squared-error terms in the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub prediction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reconstruction: 1.0,
            prediction: 1.0,
        }
    }
}

/// Network plus its flat parameters and an affine input standardisation
/// `z = (x - shift) / scale` applied before the encoder.
#[derive(Debug, Clone)]
pub(crate) struct Codec {
    pub net: Network,
    pub params: Vec<f64>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl PartialEq for Codec {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.shift == other.shift && self.scale == other.scale
    }
}

impl Codec {
    fn new(net: Network, seed: u64) -> Self {
        let params = net.init_params(seed);
        let n = net.input_len();
        Self {
            net,
            params,
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn with_params(mut self, params: Vec<f64>, shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let n = self.net.input_len();
        if params.len() != self.net.n_params() || shift.len() != n || scale.len() != n {
            return dim_err(format!(
                "network expects {} parameters and {n} standardisation entries, got {}/{}/{}",
                self.net.n_params(),
                params.len(),
                shift.len(),
                scale.len()
            ));
        }
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("standardisation scales must be positive".into()));
        }
        self.params = params;
        self.shift = shift;
        self.scale = scale;
        Ok(self)
    }

    fn standardize(&self, x: &[f64], z: &mut [f64]) {
        for (((zi, xi), s), c) in z.iter_mut().zip(x).zip(&self.shift).zip(&self.scale) {
            *zi = (xi - s) / c;
        }
    }

    /// Per-coordinate mean and population standard deviation of `states`
    /// (a zero deviation is replaced by 1).
    pub fn fit_standardizer(&mut self, states: &Matrix) {
        let (n, d) = states.shape();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(states.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(states.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        self.scale = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        self.shift = mean;
    }

    pub fn encode_into(&self, x: &[f64], out: &mut [f64]) {
        let mut ws = self.net.workspace();
        let mut z = vec![0.0; x.len()];
        self.standardize(x, &mut z);
        out.copy_from_slice(&self.net.encode(&self.params, &z, &mut ws));
    }

    pub fn encode_rows(&self, xs: &Matrix, out: &mut Matrix) {
        let mut ws = self.net.workspace();
        let mut z = vec![0.0; xs.cols()];
        for i in 0..xs.rows() {
            self.standardize(xs.row(i), &mut z);
            let code = self.net.encode(&self.params, &z, &mut ws);
            out.row_mut(i).copy_from_slice(&code);
        }
    }

    /// Decoder output for `x`, mapped back to the original coordinates.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.net.workspace();
        let mut z = vec![0.0; x.len()];
        self.standardize(x, &mut z);
        let mut y = self.net.reconstruct(&self.params, &z, &mut ws);
        for ((yi, s), c) in y.iter_mut().zip(&self.shift).zip(&self.scale) {
            *yi = *yi * c + s;
        }
        y
    }

    /// Loss and its exact gradient with respect to `params`, evaluated at
    /// `params` (which need not be `self.params`). Both batches are
    /// standardised before entering the loss.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        inputs: &Matrix,
        targets: &Matrix,
        w: LossWeights,
    ) -> Result<(f64, Vec<f64>)> {
        let n_in = self.net.input_len();
        if inputs.cols() != n_in || targets.cols() != n_in {
            return dim_err(format!(
                "batches have {} and {} columns, network input is {n_in}",
                inputs.cols(),
                targets.cols()
            ));
        }
        if inputs.rows() != targets.rows() || inputs.rows() == 0 {
            return dim_err(format!(
                "input batch has {} rows, target batch {}",
                inputs.rows(),
                targets.rows()
            ));
        }
        let norm = 1.0 / (inputs.rows() * n_in) as f64;
        let mut ws = self.net.workspace();
        let mut grad = vec![0.0; params.len()];
        let mut zx = vec![0.0; n_in];
        let mut zt = vec![0.0; n_in];
        let mut loss = 0.0;
        for i in 0..inputs.rows() {
            self.standardize(inputs.row(i), &mut zx);
            self.standardize(targets.row(i), &mut zt);
            let zx_ref = &zx;
            let zt_ref = &zt;
            loss += self.net.sample_grad(params, &zx, &mut grad, &mut ws, |out, g| {
                let mut l = 0.0;
                for k in 0..out.len() {
                    let er = out[k] - zx_ref[k];
                    let ep = out[k] - zt_ref[k];
                    l += w.reconstruction * er * er + w.prediction * ep * ep;
                    g[k] = 2.0 * norm * (w.reconstruction * er + w.prediction * ep);
                }
                l * norm
            });
        }
        Ok((loss, grad))
    }
}

/// Fully connected encoder with sigmoid layers of the given widths (the last
/// width is the code size M) and a mirrored decoder with a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) input_dim: usize,
    pub(crate) widths: Vec<usize>,
    pub(crate) seed: u64,
    pub(crate) codec: Codec,
}

impl Mlp {
    pub fn new(input_dim: usize, widths: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP needs input_dim >= 1 and positive widths, got {input_dim} / {widths:?}"
            )));
        }
        let mut b = NetBuilder::default();
        let mut prev = input_dim;
        for &w in widths {
            b.dense(prev, w).sigmoid();
            prev = w;
        }
        let code_at = b.len();
        for &w in widths.iter().rev().skip(1) {
            b.dense(prev, w).sigmoid();
            prev = w;
        }
        b.dense(prev, input_dim);
        Ok(Self {
            input_dim,
            widths: widths.to_vec(),
            seed,
            codec: Codec::new(b.finish(code_at), seed),
        })
    }

    pub fn code_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }
}

/// Convolutional encoder (3x3, stride 2, sigmoid) over `channels_in` fields
/// on an `nx x ny` grid, flattened and projected to a sigmoid code of size
/// `code_dim`. The decoder mirrors it with nearest-neighbour upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub(crate) channels_in: usize,
    pub(crate) nx: usize,
    pub(crate) ny: usize,
    pub(crate) channels: Vec<usize>,
    pub(crate) code_dim: usize,
    pub(crate) seed: u64,
    pub(crate) codec: Codec,
}

impl Cnn {
    pub fn new(
        channels_in: usize,
        nx: usize,
        ny: usize,
        channels: &[usize],
        code_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let k = channels.len();
        if channels_in == 0 || k == 0 || channels.contains(&0) || code_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "CNN needs positive channel counts and code size, got {channels_in} / {channels:?} / {code_dim}"
            )));
        }
        let factor = 1usize << k;
        if nx == 0 || ny == 0 || nx % factor != 0 || ny % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "{nx}x{ny} grid is not divisible by the downsampling factor {factor}"
            )));
        }
        let mut b = NetBuilder::default();
        let (mut h, mut w, mut c) = (nx, ny, channels_in);
        for &co in channels {
            b.conv(c, co, h, w, 2).sigmoid();
            h /= 2;
            w /= 2;
            c = co;
        }
        let flat = c * h * w;
        b.dense(flat, code_dim).sigmoid();
        let code_at = b.len();
        b.dense(code_dim, flat).sigmoid();
        for j in (0..k).rev() {
            let out = if j == 0 { channels_in } else { channels[j - 1] };
            b.upsample(channels[j], h, w);
            h *= 2;
            w *= 2;
            b.conv(channels[j], out, h, w, 1);
            if j > 0 {
                b.sigmoid();
            }
        }
        Ok(Self {
            channels_in,
            nx,
            ny,
            channels: channels.to_vec(),
            code_dim,
            seed,
            codec: Codec::new(b.finish(code_at), seed),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.channels_in * self.nx * self.ny
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }
}
