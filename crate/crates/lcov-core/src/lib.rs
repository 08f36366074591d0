//! Local covariance representations of natural images.
//!
//! The crate learns linear filter banks that minimize the nuclear norm of
//! their local response matrices, represents images as spatial maps of local
//! filter-response covariances, and reconstructs or edits images from those
//! maps by subgradient descent.

pub mod analysis;
pub mod covmap;
pub mod error;
pub mod filterbank;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod signal;
pub mod synthesis;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
