pub mod causal;
pub mod cli_io;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod koopman;
pub mod numerics;
pub mod observables;
pub mod stability;

pub use error::{Error, Result};
