//! Fixed-step Dormand–Prince 5(4), advanced with the fifth-order weights.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::systems::OdeSystem;
use super::trajectory::Trajectory;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Reusable stage storage for one system dimension.
pub struct Dopri5Stepper {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    fsal_valid: bool,
}

impl Dopri5Stepper {
    pub fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            fsal_valid: false,
        }
    }

    /// Advances `y` in place from `t` to `t + h`.
    pub fn step<S: OdeSystem + ?Sized>(&mut self, sys: &S, t: f64, y: &mut [f64], h: f64) {
        let n = y.len();
        if !self.fsal_valid {
            sys.eval(t, y, &mut self.k[0]);
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            let (_, rest) = self.k.split_at_mut(s);
            sys.eval(t + C[s] * h, &self.tmp, &mut rest[0]);
        }
        // Row 6 of A holds the fifth-order weights, so `tmp` is now the new
        // state and stage 7 doubles as the next step's first stage.
        y.copy_from_slice(&self.tmp);
        let (first, last) = self.k.split_at_mut(6);
        first[0].copy_from_slice(&last[0]);
        self.fsal_valid = true;
    }

    pub fn reset(&mut self) {
        self.fsal_valid = false;
    }
}

/// Integrates from `t0` to `t1` with step `dt`, recording every step.
pub fn integrate_dopri5<S: OdeSystem + ?Sized>(
    sys: &S,
    initial: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    labels: Vec<String>,
) -> Result<Trajectory> {
    integrate_dopri5_strided(sys, initial, t0, t1, dt, 1, labels)
}

/// As [`integrate_dopri5`] but records only every `stride`-th step. The
/// number of steps is `round((t1 - t0) / dt)`.
pub fn integrate_dopri5_strided<S: OdeSystem + ?Sized>(
    sys: &S,
    initial: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    stride: usize,
    labels: Vec<String>,
) -> Result<Trajectory> {
    if !(t1 > t0) || !(dt > 0.0) || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "need t1 > t0, dt > 0 and stride >= 1 (t0={t0}, t1={t1}, dt={dt}, stride={stride})"
        )));
    }
    if initial.len() != sys.dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, system expects {}",
            initial.len(),
            sys.dim()
        )));
    }
    if initial.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("initial state is not finite".into()));
    }
    let steps = ((t1 - t0) / dt).round() as usize;
    if steps < stride {
        return Err(Error::InvalidArgument(format!(
            "interval [{t0}, {t1}] holds fewer than {stride} steps of {dt}"
        )));
    }
    let samples = steps / stride + 1;
    let d = initial.len();
    let mut states = Vec::with_capacity(samples * d);
    let mut times = Vec::with_capacity(samples);
    let mut y = initial.to_vec();
    states.extend_from_slice(&y);
    times.push(t0);
    let mut stepper = Dopri5Stepper::new(d);
    for step in 1..=(samples - 1) * stride {
        let t = t0 + (step - 1) as f64 * dt;
        stepper.step(sys, t, &mut y, dt);
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState {
                step,
                time: t + dt,
            });
        }
        if step % stride == 0 {
            states.extend_from_slice(&y);
            times.push(t0 + step as f64 * dt);
        }
    }
    let states = Matrix::from_vec(samples, d, states)?;
    Trajectory::new(times, states, labels)
}
