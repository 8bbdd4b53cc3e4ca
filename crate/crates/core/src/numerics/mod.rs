//! Dense linear algebra and random-number primitives.

mod eig;
mod lstsq;
mod matrix;
mod rng;
mod svd;

pub use eig::{eig2x2, eig_from_trace_det};
pub use lstsq::right_pinv_solve;
pub use matrix::{dot, Matrix};
pub use num_complex::Complex64;
pub use rng::SeededRng;
pub use svd::{pinv, pinv_from_svd, pinv_truncated, svd, SvdResult, DEFAULT_PINV_RTOL, MAX_SWEEPS};
