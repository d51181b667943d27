//! Double machine learning for average, group and individualized treatment
//! effects of a first-mover advantage, plus a two-player contest simulator
//! whose treatment effects are known in closed form.
//!
//! Pipeline: [`dataset`] → [`dml`] (cross-fitted [`forest`] nuisances and
//! AIPW scores) → [`blp`], [`kernel_cate`], [`sorted_clan`]. The
//! [`contest`] module generates data with known truth for all of them.

pub mod blp;
pub mod contest;
pub mod dataset;
pub mod dml;
pub mod error;
pub mod forest;
pub mod kernel_cate;
pub mod matrix;
pub mod sorted_clan;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
