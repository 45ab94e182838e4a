//! Settingless two-terminal line protection.
//!
//! Each short window of synchronized terminal measurements is tested against
//! `M + 2` hypotheses: healthy line, fully post-fault line, and `M` mixtures
//! with the fault inception confined to one sub-interval. Every faulted
//! hypothesis is a five-variable box-constrained convex QP in
//! `[R_a, R_b, R_c, R_g, α]`; the hypothesis with the smallest mean squared
//! model residual wins, which yields the trip decision together with the
//! fault location, resistances, and inception interval.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decision;
pub mod emt_sim;
pub mod error;
pub mod grid_model;
pub mod harness;
pub mod hypothesis_engine;
pub mod preprocess;
pub mod qp_solver;

pub use error::{Error, Result};
