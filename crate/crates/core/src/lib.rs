//! Numeric core of a compact self-proliferation-and-attention CNN.
//!
//! Everything here is `no_std` + `alloc`: a small rank-4 tensor type with a
//! tape-based reverse-mode autodiff, the self-proliferation / global-context
//! attention / inverted-residual blocks built on it, the full network
//! assembly, circle-loss training with Nesterov momentum, evaluation metrics,
//! an analytical parameter/FLOPs cost model, and a synthetic defect-pattern
//! generator with the preprocessing used to feed it to the network.
//!
//! File formats, configuration and the command line live in the `spanet`
//! companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod blocks;
pub mod cost;
pub mod data;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Param, ParamId, ParamStore, Var};
pub use real::Real;
pub use tensor::{Padding, Shape, Tensor};
