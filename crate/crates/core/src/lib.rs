//! Chromatic dispersion compensation laboratory.
//!
//! The crate models a single-channel dual-polarization 16-QAM coherent link
//! and the receiver-side equalizers that undo fiber chromatic dispersion:
//!
//! * [`equalizers`]: the direct time-domain FIR (TDE) and the clustered
//!   time-domain equalizer (TDCE), which sums the samples that share a
//!   quantized tap before multiplying once per cluster.
//! * [`fde`]: the overlap-save frequency-domain equalizer and its
//!   FFT-size cost model.
//! * [`design`]: tap generation, size bounds, truncation and cluster-count
//!   searches driven by measured BER.
//! * [`channel`]: split-step Manakov propagation with lumped EDFA noise and
//!   an analytic dispersion-only channel.
//! * [`signal`]: bit/symbol mapping, pulse shaping and BER measurement.
//! * [`fixed_point`]: Q-format quantization used to emulate FPGA datapaths.
//! * [`link`]: the receiver chain tying the pieces together for BER probes.
//! * [`experiment`]: the end-to-end reproduction pipeline and its results
//!   table.
//!
//! Data-parallel loops go through [`par::Exec`], which falls back to
//! sequential execution when the `parallel` feature is disabled.

pub mod channel;
pub mod design;
pub mod equalizers;
mod error;
pub mod experiment;
pub mod fde;
pub mod fixed_point;
pub mod frame_io;
pub mod link;
pub mod par;
pub mod signal;

pub use error::{CdcError, Result};
pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
