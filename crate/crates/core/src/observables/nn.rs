//! Minimal reverse-mode machinery for feed-forward encoder–decoder networks.
//!
//! A [`Network`] is a straight-line tape of [`Op`]s over a flat parameter
//! vector. The forward pass keeps every intermediate buffer; the backward pass
//! walks the tape in reverse and accumulates parameter gradients.

use crate::numerics::{dot, SeededRng};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: usize,
}

/// 3x3 convolution with zero padding of one cell.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
    pub wt: usize,
    pub b: usize,
}

/// Nearest-neighbour 2x upsampling.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Upsample {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    Dense(Dense),
    Conv(Conv),
    Upsample(Upsample),
    Sigmoid(usize),
}

impl Op {
    pub fn in_len(&self) -> usize {
        match self {
            Op::Dense(d) => d.inp,
            Op::Conv(c) => c.cin * c.h * c.w,
            Op::Upsample(u) => u.c * u.h * u.w,
            Op::Sigmoid(n) => *n,
        }
    }

    pub fn out_len(&self) -> usize {
        match self {
            Op::Dense(d) => d.out,
            Op::Conv(c) => c.cout * c.ho * c.wo,
            Op::Upsample(u) => u.c * u.h * u.w * 4,
            Op::Sigmoid(n) => *n,
        }
    }

    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        match self {
            Op::Dense(d) => {
                for o in 0..d.out {
                    let row = &p[d.w + o * d.inp..d.w + (o + 1) * d.inp];
                    y[o] = p[d.b + o] + dot(row, x);
                }
            }
            Op::Conv(c) => conv_forward(c, p, x, y),
            Op::Upsample(u) => {
                let (h2, w2) = (2 * u.h, 2 * u.w);
                for ch in 0..u.c {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            y[(ch * h2 + i) * w2 + j] = x[(ch * u.h + i / 2) * u.w + j / 2];
                        }
                    }
                }
            }
            Op::Sigmoid(_) => {
                for (yi, &xi) in y.iter_mut().zip(x) {
                    *yi = sigmoid(xi);
                }
            }
        }
    }

    /// Accumulates parameter gradients into `gp` and writes the input
    /// gradient into `gx` (overwriting it).
    fn backward(&self, p: &[f64], x: &[f64], y: &[f64], gy: &[f64], gp: &mut [f64], gx: &mut [f64]) {
        match self {
            Op::Dense(d) => {
                gx.fill(0.0);
                for o in 0..d.out {
                    let g = gy[o];
                    gp[d.b + o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let w_off = d.w + o * d.inp;
                    let row = &p[w_off..w_off + d.inp];
                    let grow = &mut gp[w_off..w_off + d.inp];
                    for i in 0..d.inp {
                        grow[i] += g * x[i];
                        gx[i] += g * row[i];
                    }
                }
            }
            Op::Conv(c) => conv_backward(c, p, x, gy, gp, gx),
            Op::Upsample(u) => {
                gx.fill(0.0);
                let (h2, w2) = (2 * u.h, 2 * u.w);
                for ch in 0..u.c {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            gx[(ch * u.h + i / 2) * u.w + j / 2] += gy[(ch * h2 + i) * w2 + j];
                        }
                    }
                }
            }
            Op::Sigmoid(_) => {
                for ((g, &yi), &gi) in gx.iter_mut().zip(y).zip(gy) {
                    *g = gi * yi * (1.0 - yi);
                }
            }
        }
    }

    /// Glorot-uniform weights, zero biases.
    fn init(&self, p: &mut [f64], rng: &mut SeededRng) {
        match self {
            Op::Dense(d) => {
                let limit = (6.0 / (d.inp + d.out) as f64).sqrt();
                for v in &mut p[d.w..d.w + d.inp * d.out] {
                    *v = rng.uniform_range(-limit, limit);
                }
                p[d.b..d.b + d.out].fill(0.0);
            }
            Op::Conv(c) => {
                let limit = (6.0 / (9 * (c.cin + c.cout)) as f64).sqrt();
                for v in &mut p[c.wt..c.wt + c.cout * c.cin * 9] {
                    *v = rng.uniform_range(-limit, limit);
                }
                p[c.b..c.b + c.cout].fill(0.0);
            }
            Op::Upsample(_) | Op::Sigmoid(_) => {}
        }
    }
}

fn conv_forward(c: &Conv, p: &[f64], x: &[f64], y: &mut [f64]) {
    let plane_in = c.h * c.w;
    let plane_out = c.ho * c.wo;
    for co in 0..c.cout {
        let out = &mut y[co * plane_out..(co + 1) * plane_out];
        out.fill(p[c.b + co]);
        for ci in 0..c.cin {
            let inp = &x[ci * plane_in..(ci + 1) * plane_in];
            let k = &p[c.wt + (co * c.cin + ci) * 9..c.wt + (co * c.cin + ci + 1) * 9];
            for oy in 0..c.ho {
                for ox in 0..c.wo {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let iy = (oy * c.stride + ky) as isize - 1;
                        if iy < 0 || iy >= c.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * c.stride + kx) as isize - 1;
                            if ix < 0 || ix >= c.w as isize {
                                continue;
                            }
                            acc += k[ky * 3 + kx] * inp[iy as usize * c.w + ix as usize];
                        }
                    }
                    out[oy * c.wo + ox] += acc;
                }
            }
        }
    }
}

fn conv_backward(c: &Conv, p: &[f64], x: &[f64], gy: &[f64], gp: &mut [f64], gx: &mut [f64]) {
    gx.fill(0.0);
    let plane_in = c.h * c.w;
    let plane_out = c.ho * c.wo;
    for co in 0..c.cout {
        let g_out = &gy[co * plane_out..(co + 1) * plane_out];
        gp[c.b + co] += g_out.iter().sum::<f64>();
        for ci in 0..c.cin {
            let inp = &x[ci * plane_in..(ci + 1) * plane_in];
            let k_off = c.wt + (co * c.cin + ci) * 9;
            let mut gk = [0.0; 9];
            let k: [f64; 9] = p[k_off..k_off + 9].try_into().expect("3x3 kernel");
            let g_in = &mut gx[ci * plane_in..(ci + 1) * plane_in];
            for oy in 0..c.ho {
                for ox in 0..c.wo {
                    let g = g_out[oy * c.wo + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let iy = (oy * c.stride + ky) as isize - 1;
                        if iy < 0 || iy >= c.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * c.stride + kx) as isize - 1;
                            if ix < 0 || ix >= c.w as isize {
                                continue;
                            }
                            let idx = iy as usize * c.w + ix as usize;
                            gk[ky * 3 + kx] += g * inp[idx];
                            g_in[idx] += g * k[ky * 3 + kx];
                        }
                    }
                }
            }
            for (t, v) in gk.iter().enumerate() {
                gp[k_off + t] += v;
            }
        }
    }
}

/// Hands out parameter offsets while a network is being assembled.
#[derive(Default)]
pub(crate) struct NetBuilder {
    ops: Vec<Op>,
    n_params: usize,
}

impl NetBuilder {
    fn alloc(&mut self, n: usize) -> usize {
        let off = self.n_params;
        self.n_params += n;
        off
    }

    pub fn dense(&mut self, inp: usize, out: usize) -> &mut Self {
        let w = self.alloc(inp * out);
        let b = self.alloc(out);
        self.ops.push(Op::Dense(Dense { inp, out, w, b }));
        self
    }

    pub fn conv(&mut self, cin: usize, cout: usize, h: usize, w: usize, stride: usize) -> &mut Self {
        let wt = self.alloc(cout * cin * 9);
        let b = self.alloc(cout);
        let ho = (h - 1) / stride + 1;
        let wo = (w - 1) / stride + 1;
        self.ops.push(Op::Conv(Conv {
            cin,
            cout,
            h,
            w,
            stride,
            ho,
            wo,
            wt,
            b,
        }));
        self
    }

    pub fn upsample(&mut self, c: usize, h: usize, w: usize) -> &mut Self {
        self.ops.push(Op::Upsample(Upsample { c, h, w }));
        self
    }

    pub fn sigmoid(&mut self) -> &mut Self {
        let n = self.ops.last().map_or(0, |o| o.out_len());
        self.ops.push(Op::Sigmoid(n));
        self
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn finish(self, code_at: usize) -> Network {
        for w in self.ops.windows(2) {
            debug_assert_eq!(w[0].out_len(), w[1].in_len());
        }
        Network {
            ops: self.ops,
            n_params: self.n_params,
            code_at,
        }
    }
}

/// Encoder–decoder tape. `ops[..code_at]` is the encoder; its output is the
/// dictionary code.
#[derive(Debug, Clone)]
pub(crate) struct Network {
    ops: Vec<Op>,
    n_params: usize,
    code_at: usize,
}

/// Per-thread scratch buffers for one forward/backward pass.
pub(crate) struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl Network {
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_len(&self) -> usize {
        self.ops[0].in_len()
    }

    #[cfg(test)]
    pub fn output_len(&self) -> usize {
        self.ops.last().expect("non-empty network").out_len()
    }


    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mut rng = SeededRng::new(seed);
        for op in &self.ops {
            op.init(&mut p, &mut rng);
        }
        p
    }

    pub fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.input_len()]];
        acts.extend(self.ops.iter().map(|o| vec![0.0; o.out_len()]));
        let grads = acts.iter().map(|a| vec![0.0; a.len()]).collect();
        Workspace { acts, grads }
    }

    /// Encoder output only.
    pub fn encode(&self, p: &[f64], x: &[f64], ws: &mut Workspace) -> Vec<f64> {
        self.run(p, x, ws, self.code_at);
        ws.acts[self.code_at].clone()
    }

    fn run(&self, p: &[f64], x: &[f64], ws: &mut Workspace, upto: usize) {
        ws.acts[0].copy_from_slice(x);
        for (i, op) in self.ops[..upto].iter().enumerate() {
            let (done, rest) = ws.acts.split_at_mut(i + 1);
            op.forward(p, &done[i], &mut rest[0]);
        }
    }

    /// Full reconstruction `decoder(encoder(x))`.
    pub fn reconstruct(&self, p: &[f64], x: &[f64], ws: &mut Workspace) -> Vec<f64> {
        self.run(p, x, ws, self.ops.len());
        ws.acts[self.ops.len()].clone()
    }

    /// Loss contribution and gradient of one sample. `out_grad` maps the
    /// network output to dL/d(output); the returned value is that sample's
    /// loss term. Parameter gradients are accumulated into `gp`.
    pub fn sample_grad(
        &self,
        p: &[f64],
        x: &[f64],
        gp: &mut [f64],
        ws: &mut Workspace,
        out_grad: impl FnOnce(&[f64], &mut [f64]) -> f64,
    ) -> f64 {
        let n = self.ops.len();
        self.run(p, x, ws, n);
        let loss = out_grad(&ws.acts[n], &mut ws.grads[n]);
        for i in (0..n).rev() {
            let (g_lo, g_hi) = ws.grads.split_at_mut(i + 1);
            self.ops[i].backward(p, &ws.acts[i], &ws.acts[i + 1], &g_hi[0], gp, &mut g_lo[i]);
        }
        loss
    }
}
