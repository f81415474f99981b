//! Sigma-delta phase-quantized precoding over a reflecting surface.
//!
//! Modules build on each other bottom-up: [`quantizer`] and [`scene`] model
//! the phase alphabet and the cascaded channel, [`sigma_delta`] is the
//! spatial modulator, [`precoder`] assembles the ZF-family schemes, [`link`]
//! handles symbols, transmission and detection, and [`harness`] runs the
//! Monte-Carlo BER sweeps.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod link;
pub mod precoder;
pub mod presets;
pub mod quantizer;
pub mod scene;
pub mod seeds;
pub mod sigma_delta;

pub use error::{Error, Result};
