//! Closed-form nonlinear interference model for ultra-wideband WDM links
//! with inter-channel stimulated Raman scattering.

// Range checks are written as `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfm;
pub mod error;
pub mod fit;
pub mod link;
pub mod ode;
pub mod oracle;
pub mod pipeline;
pub mod special;
pub mod srs;
pub mod units;

pub use error::{Error, Result};
