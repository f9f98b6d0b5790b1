//! Spatial bioeconomic fishery model: patch population dynamics with
//! migration, a multi-port fleet choosing fishing grounds by random utility,
//! a synthetic data generator, and a two-stage estimator that recovers
//! biomass from the fleet's revealed choices and then the growth, capacity and
//! dispersion parameters from the recovered biomass.

#![no_std]
// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod econ;
pub mod error;
pub mod fleet;
pub mod linalg;
mod math;
pub mod panel;
pub mod patch_model;
pub mod period;
pub mod pipeline;
pub mod simulator;
pub mod stage1;
pub mod stage2;

pub use error::{Error, ErrorClass, Result};
pub use period::Period;
