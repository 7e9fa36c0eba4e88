#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod backtransform;
pub mod cli;
pub mod config;
pub mod error;
pub mod extension;
pub mod grid;
pub mod linalg;
pub mod linear;
pub mod multiplier;
pub mod nonlinear;
pub mod oracles;
pub mod quadrature;
pub mod report;
pub mod scenarios;
pub mod symbol;

pub use error::{Error, Result};
