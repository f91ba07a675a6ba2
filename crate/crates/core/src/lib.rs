//! Environment-conditioned text-to-speech with conditional flow matching.
//!
//! The crate covers the whole desk-scale pipeline: a mel front end and
//! SNR-controlled mixing ([`audio`]), character text handling ([`text`]),
//! self-supervised triplet mining and a synthetic corpus ([`forge`]), the
//! DiT velocity network ([`denoiser`]), the flow-matching objective and ODE
//! sampler ([`flow`]), training ([`train`]) and evaluation plus the CLI
//! ([`eval`], [`cli`]).

pub mod audio;
pub mod cli;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod flow;
pub mod forge;
pub mod nn;
pub mod text;
pub mod train;

pub use error::{Error, Result};
