use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// A right-hand side `dw/dt = f(t, w)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    /// Writes `f(t, state)` into `out`. Both slices have length `dim()`.
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]);
}

/// Closure-backed system, handy for tests and ad-hoc models.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (self.f)(t, state, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RosslerParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for RosslerParams {
    fn default() -> Self {
        Self {
            a: 0.2,
            b: 0.2,
            d: 5.7,
            phi1: 1.0,
            phi2: 1.0,
            c1: 0.5,
            c2: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReactionDiffusionParams {
    pub du: f64,
    pub dv: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub gamma: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for ReactionDiffusionParams {
    fn default() -> Self {
        Self {
            du: 0.1,
            dv: 0.1,
            a: 0.3,
            b: 0.3,
            beta: 10.0,
            gamma: 0.0,
            nx: 16,
            ny: 16,
        }
    }
}

/// Recharge-oscillator parameters. State order is `[T, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsoParams {
    pub r: f64,
    pub alpha: f64,
    pub b0: f64,
    pub c: f64,
    pub gamma: f64,
    pub mu: f64,
    pub epsilon: f64,
}

impl Default for EnsoParams {
    fn default() -> Self {
        Self {
            r: 0.25,
            alpha: 0.125,
            b0: 2.5,
            c: 1.0,
            gamma: 0.75,
            mu: 2.0 / 3.0,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    CoupledRossler(RosslerParams),
    ReactionDiffusion(ReactionDiffusionParams),
    Enso(EnsoParams),
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let ok = match self {
            SystemSpec::CoupledRossler(p) => finite(&[p.a, p.b, p.d, p.phi1, p.phi2, p.c1, p.c2]),
            SystemSpec::ReactionDiffusion(p) => {
                if p.nx < 3 || p.ny < 3 {
                    return Err(Error::InvalidArgument(format!(
                        "reaction-diffusion grid must be at least 3x3, got {}x{}",
                        p.nx, p.ny
                    )));
                }
                finite(&[p.du, p.dv, p.a, p.b, p.beta, p.gamma])
            }
            SystemSpec::Enso(p) => finite(&[p.r, p.alpha, p.b0, p.c, p.gamma, p.mu, p.epsilon]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("system parameters must be finite".into()))
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemSpec::CoupledRossler(_) => 6,
            SystemSpec::ReactionDiffusion(p) => 2 * p.nx * p.ny,
            SystemSpec::Enso(_) => 2,
        }
    }

    pub fn dim_labels(&self) -> Vec<String> {
        match self {
            SystemSpec::CoupledRossler(_) => ["x1", "y1", "z1", "x2", "y2", "z2"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            SystemSpec::ReactionDiffusion(p) => ["u", "v"]
                .iter()
                .flat_map(|f| {
                    (0..p.nx).flat_map(move |i| (0..p.ny).map(move |j| format!("{f}_{i}_{j}")))
                })
                .collect(),
            SystemSpec::Enso(_) => vec!["T".into(), "h".into()],
        }
    }

    /// Checked right-hand side evaluation.
    pub fn rhs(&self, t: f64, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return dim_err(format!(
                "state has length {}, system expects {}",
                state.len(),
                self.state_dim()
            ));
        }
        let mut out = vec![0.0; state.len()];
        self.eval(t, state, &mut out);
        Ok(out)
    }

    /// Default initial state. Only the reaction-diffusion fields use `seed`.
    pub fn default_initial(&self, seed: u64) -> Vec<f64> {
        match self {
            SystemSpec::CoupledRossler(_) => vec![1.0, 1.0, 1.0, 1.1, 1.1, 1.1],
            SystemSpec::ReactionDiffusion(p) => reaction_diffusion_initial(p, seed),
            SystemSpec::Enso(_) => vec![1.0, 0.0],
        }
    }
}

impl OdeSystem for SystemSpec {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval(&self, _t: f64, s: &[f64], out: &mut [f64]) {
        match self {
            SystemSpec::CoupledRossler(p) => {
                let (x1, y1, z1, x2, y2, z2) = (s[0], s[1], s[2], s[3], s[4], s[5]);
                out[0] = -p.phi1 * y1 - z1;
                out[1] = p.phi1 * x1 + p.a * y1 + p.c1 * (y2 - y1);
                out[2] = p.b + z1 * (x1 - p.d);
                out[3] = -p.phi2 * y2 - z2;
                out[4] = p.phi2 * x2 + p.a * y2 + p.c2 * (y1 - y2);
                out[5] = p.b + z2 * (x2 - p.d);
            }
            SystemSpec::ReactionDiffusion(p) => {
                let n = p.nx * p.ny;
                let (u, v) = s.split_at(n);
                let (du_dt, dv_dt) = out.split_at_mut(n);
                laplacian_into(u, p.nx, p.ny, du_dt);
                laplacian_into(v, p.nx, p.ny, dv_dt);
                for k in 0..n {
                    let (uk, vk) = (u[k], v[k]);
                    du_dt[k] = p.du * du_dt[k] - uk * (uk - p.a) * (uk - 1.0) + p.beta * vk;
                    dv_dt[k] = p.dv * dv_dt[k] - vk * (vk - p.b) * (vk - 1.0) + p.gamma * uk;
                }
            }
            SystemSpec::Enso(p) => {
                let (temp, h) = (s[0], s[1]);
                out[0] = -p.r * temp - p.mu * p.alpha * p.b0 * h - p.epsilon * temp.powi(3);
                out[1] = p.gamma * temp + (p.gamma * p.mu * p.b0 - p.c) * h;
            }
        }
    }
}

/// Periodic five-point Laplacian with unit grid spacing.
pub fn laplacian2d(field: &Matrix) -> Result<Matrix> {
    let (nx, ny) = field.shape();
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidArgument(format!(
            "Laplacian grid must be at least 3x3, got {nx}x{ny}"
        )));
    }
    let mut out = Matrix::zeros(nx, ny);
    laplacian_into(field.data(), nx, ny, out.data_mut());
    Ok(out)
}

fn laplacian_into(f: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    for i in 0..nx {
        let up = if i == 0 { nx - 1 } else { i - 1 };
        let down = if i + 1 == nx { 0 } else { i + 1 };
        for j in 0..ny {
            let left = if j == 0 { ny - 1 } else { j - 1 };
            let right = if j + 1 == ny { 0 } else { j + 1 };
            out[i * ny + j] = f[up * ny + j] + f[down * ny + j] + f[i * ny + left]
                + f[i * ny + right]
                - 4.0 * f[i * ny + j];
        }
    }
}

/// Smooth random `u` and `v` fields: each is a sum of four low-wavenumber
/// cosine modes with amplitudes drawn from `[-0.5, 0.5]`.
pub fn reaction_diffusion_initial(p: &ReactionDiffusionParams, seed: u64) -> Vec<f64> {
    const MODES: usize = 4;
    let mut rng = SeededRng::new(seed);
    let n = p.nx * p.ny;
    let mut state = vec![0.0; 2 * n];
    for field in 0..2 {
        for _ in 0..MODES {
            let (kx, ky) = loop {
                let kx = rng.below(3) as f64;
                let ky = rng.below(3) as f64;
                if kx != 0.0 || ky != 0.0 {
                    break (kx, ky);
                }
            };
            let amp = rng.uniform_range(-0.5, 0.5);
            let phase = rng.uniform_range(0.0, 2.0 * PI);
            for i in 0..p.nx {
                for j in 0..p.ny {
                    let arg = 2.0 * PI * (kx * i as f64 / p.nx as f64 + ky * j as f64 / p.ny as f64);
                    state[field * n + i * p.ny + j] += amp * (arg + phase).cos();
                }
            }
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enso_origin_is_fixed_point() {
        let s = SystemSpec::Enso(EnsoParams::default());
        assert_eq!(s.rhs(0.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rossler_hand_computed_rhs() {
        let s = SystemSpec::CoupledRossler(RosslerParams::default());
        let f = s.rhs(0.0, &[1.0; 6]).unwrap();
        assert!((f[0] + 2.0).abs() < 1e-15);
        // y1: phi1*x1 + a*y1 + c1*(y2 - y1) = 1 + 0.2 + 0
        assert!((f[1] - 1.2).abs() < 1e-15);
        assert!((f[2] + 4.5).abs() < 1e-15);
        // Second oscillator is identical (c2 = 0, equal states).
        assert_eq!(&f[..3], &f[3..]);
    }

    #[test]
    fn reaction_diffusion_zero_fields_are_stationary() {
        let s = SystemSpec::ReactionDiffusion(ReactionDiffusionParams::default());
        let f = s.rhs(0.0, &vec![0.0; s.state_dim()]).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rhs_rejects_wrong_length() {
        let s = SystemSpec::Enso(EnsoParams::default());
        assert!(matches!(s.rhs(0.0, &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn laplacian_constant_is_zero() {
        let f = Matrix::from_fn(5, 4, |_, _| 3.5);
        assert!(laplacian2d(&f).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_spike_periodic() {
        let mut f = Matrix::zeros(4, 4);
        f[(0, 0)] = 1.0;
        let l = laplacian2d(&f).unwrap();
        let expected = Matrix::from_fn(4, 4, |i, j| match (i, j) {
            (0, 0) => -4.0,
            (1, 0) | (3, 0) | (0, 1) | (0, 3) => 1.0,
            _ => 0.0,
        });
        assert_eq!(l, expected);
    }

    #[test]
    fn laplacian_of_quadratic_in_interior() {
        let f = Matrix::from_fn(20, 12, |i, _| (i * i) as f64);
        let l = laplacian2d(&f).unwrap();
        for i in 1..19 {
            for j in 0..12 {
                assert!((l[(i, j)] - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_grid_rejected() {
        assert!(laplacian2d(&Matrix::zeros(2, 5)).is_err());
        let s = SystemSpec::ReactionDiffusion(ReactionDiffusionParams {
            nx: 2,
            ..Default::default()
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn rd_initial_is_seeded() {
        let p = ReactionDiffusionParams::default();
        let a = reaction_diffusion_initial(&p, 1);
        assert_eq!(a, reaction_diffusion_initial(&p, 1));
        assert_ne!(a, reaction_diffusion_initial(&p, 2));
        assert!(a.iter().all(|x| x.abs() <= 4.0 * 0.5 + 1e-12));
    }
}
