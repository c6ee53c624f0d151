//! Superhyperfine coupling between an anisotropic Kramers ion and ligand
//! nuclear spins: effective fields, branching contrast, angular atlases, and
//! a forward/inverse model of the modulated two-pulse photon echo.
//!
//! Units at the API boundary: Å, mT, kHz, GHz/T, MHz/T, µs. Internals are SI.

// `!(x > 0.0)` is how NaN gets rejected throughout; keep it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod cli;
pub mod dataset;
pub mod echo;
pub mod error;
pub mod fitkit;
pub mod lattice;
pub mod oracle;
pub mod output;
pub mod spincore;
pub mod units;

pub use error::{Result, ShfError};
