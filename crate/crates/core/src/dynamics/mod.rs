//! Benchmark systems, their integration, and the trajectory / partition types.

mod dopri5;
mod systems;
mod trajectory;

pub use dopri5::{integrate_dopri5, integrate_dopri5_strided, Dopri5Stepper};
pub use systems::{
    laplacian2d, reaction_diffusion_initial, EnsoParams, FnSystem, OdeSystem,
    ReactionDiffusionParams, RosslerParams, SystemSpec,
};
pub use trajectory::{fmt_f64, ComponentPartition, Trajectory, UNIFORM_STEP_RTOL};

/// Integrates a benchmark system, recording every `stride`-th step.
pub fn simulate(
    spec: &SystemSpec,
    initial: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    stride: usize,
) -> crate::Result<Trajectory> {
    spec.validate()?;
    integrate_dopri5_strided(spec, initial, t0, t1, dt, stride, spec.dim_labels())
}
