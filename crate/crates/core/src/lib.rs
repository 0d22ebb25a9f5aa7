//! Advantage-based value factorization for cooperative multi-agent Q-learning.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is pure
//! computation: a small reverse-mode autodiff engine, trainable layers, the
//! benchmark environments, the factorized joint Q model with its baselines, the
//! IGM / advantage-condition checkers, and the training loop. File formats and
//! the command line live in the `qfree` crate.
#![no_std]

extern crate alloc;

pub mod env;
pub mod error;
pub mod factor;
pub mod graph;
pub mod igm;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
