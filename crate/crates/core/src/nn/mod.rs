//! Minimal dense autodiff used by every trained model in the crate.

pub mod gradcheck;
mod params;
mod tape;

pub(crate) use params::hex;
pub use params::{Adam, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Mat, Tape, Var};
