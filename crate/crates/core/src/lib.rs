//! Simulated endovascular navigation: vessel trees, guidewire and catheter
//! mechanics, fluoroscopic tracking, reinforcement-learning environments and
//! an evaluation harness for three navigation benchmarks.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// 3.14 rad/s is the benchmark rotation limit, not an approximation of π.
#![allow(clippy::approx_constant)]

pub mod bench;
pub mod cli;
pub mod controllers;
pub mod device;
pub mod env;
pub mod eval;
pub mod error;
pub mod geom;
pub mod imaging;
pub mod physics;
pub mod vessel;

pub use error::{Error, Result};
