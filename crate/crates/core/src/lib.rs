//! Numerical quaternionic-contact geometry.
//!
//! Pointwise quaternionic linear algebra, finite-difference tensor calculus,
//! the flat, positive and Alexandrov model geometries, hypersurface frames and
//! QC data, second fundamental forms, and a sampled verification harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod models;
pub mod qcstruct;
pub mod quatlin;
pub mod secondform;
pub mod tensorfield;
pub mod verify;

pub use error::{QcError, Result};
