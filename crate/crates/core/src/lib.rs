//! Scan-specific parallel MRI reconstruction toolkit.
//!
//! Implements GRAPPA, per-coil RAKI and the single-model coil-combined eRAKI
//! reconstruction (including joint multi-echo and ky–t variants) on synthetic
//! multi-coil phantoms, together with ESPIRiT sensitivity estimation,
//! T2/T2* fitting and a timing harness.

pub mod bench;
pub mod bundle;
pub mod config;
pub mod error;
pub mod espirit;
pub mod fft;
pub mod grappa;
pub mod layout;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod quantmap;
pub mod recon;
pub mod sampling;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{Axis, CTensor, C64};
