//! Coordinate-MLP signal fitting with learnable super-Gaussian positional
//! embeddings.
//!
//! The per-coordinate widths of the embedding are trained by minimizing a
//! graph-Laplacian objective over the embedded training coordinates
//! ([`graphlap`]), then predicted for new signals from the signal's gradient
//! norm with a polynomial ([`sigma_model`]). [`net`] holds the ReLU MLP and
//! its optimizer; [`harness`] runs the comparison experiments.

pub mod embedders;
pub mod graphlap;
pub mod harness;
pub mod error;
pub mod kv;
pub mod linalg;
pub mod net;
pub mod par;
pub mod sigma_model;
pub mod signals;

pub use error::{Error, Result};
