//! Hyena neural operator toolkit.
//!
//! The crate is organised bottom-up: a small reverse-mode tensor engine
//! ([`tensor`], [`fft`]), causal long convolutions ([`conv`]), the implicit
//! Hyena filters and operator blocks ([`filter`], [`hyena`]), the full
//! encoder/decoder model ([`model`]), the PDE data generators ([`pde`]) and
//! the training harness ([`train`]).

pub mod attention;
pub mod conv;
pub mod error;
pub mod fft;
pub mod filter;
pub mod gradcheck;
pub mod hyena;
pub mod model;
pub mod nn;
pub mod pde;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{no_grad, DType, Element, Tensor};
