//! Compression toolkit for plain ViT encoders: coupled head-dimension pruning
//! of attention, token channel selection for FFNs, FFN redundancy diagnostics
//! and analytic cost accounting, on top of a small deterministic forward
//! engine.

// `!(x >= 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod archive;
pub mod engine;
pub mod fixture;
pub mod error;
pub mod linalg;
pub mod par;
pub mod prune;
pub mod select;
pub mod tcs;

pub use error::{Result, ToastError};
pub use linalg::{Matrix, Vector};
