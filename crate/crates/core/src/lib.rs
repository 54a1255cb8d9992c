//! Desk-scale EM side-channel analysis of the PRESENT-80 block cipher.
//!
//! The crate covers the full pipeline: a bit-exact cipher with instrumented
//! intermediates ([`cipher`]), Hamming leakage models and hypothesis
//! matrices ([`leakage`]), trace simulation ([`simulate`]) and persistence
//! ([`traceio`]), Pearson-correlation and difference-of-means machinery
//! ([`stats`]), frequency-domain diagnostics ([`spectral`]), and attack
//! orchestration with key-rank evaluation ([`attack`]).
//!
//! Numeric code is generic over the sample scalar via [`Real`]; `f32`
//! matches the on-disk trace payload, `f64` is the usual analysis
//! precision.

pub mod attack;
pub mod cipher;
pub mod leakage;
pub mod real;
pub mod simulate;
pub mod spectral;
pub mod stats;
pub mod traceio;

pub use cipher::{Block, KeyRegister80, State64};
pub use real::Real;

/// Trace set in storage precision (the payload format is 32-bit floats).
pub type TraceSet32 = traceio::TraceSet<f32>;
/// Trace set widened to analysis precision.
pub type TraceSet64 = traceio::TraceSet<f64>;
/// Correlation surface in analysis precision.
pub type Surface64 = stats::CorrelationSurface<f64>;
/// Attack report in analysis precision.
pub type AttackReport64 = attack::AttackReport<f64>;
