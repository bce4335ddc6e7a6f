//! Offline reinforcement learning in finite-horizon MDPs.
//!
//! Estimators (IS, step-IS, SMIS, TMIS, linear FQE), pessimistic learners
//! (PVI, PFVI, VW-PFVI) and low-adaptive exploration (APEVE, LARFE), each paired
//! with exact dynamic-programming quantities so statistical behavior can be
//! checked against ground truth.

// `!(x > 0.0)` rejects NaN; index loops mirror the (h, s, a) layouts.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod linalg;
pub mod low_adaptive;
pub mod mdp;
pub mod ope_linear;
pub mod ope_tabular;
pub mod opl_linear;
pub mod opl_tabular;
pub mod util;

pub use error::{Error, Result};
