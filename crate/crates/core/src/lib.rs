//! Functional principal component analysis with bootstrap assessment of the
//! extrema of principal component functions.

pub mod bootstrap;
pub mod cli;
pub mod config;
pub mod error;
pub mod extrema;
pub mod fpca;
pub mod func;
pub mod io;
pub mod harness;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
