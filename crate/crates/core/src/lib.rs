//! Streaming, memory-bounded exemplar-based video colorization.
//!
//! A grayscale video is colorized from a single color exemplar by propagating
//! chrominance features through two attention paths:
//!
//! - a long-range key/value [memory bank](membank) that stores every γ-th
//!   frame, tracks how often each stored feature is attended to, and compacts
//!   the oldest frames down to their most-used columns so memory stays bounded;
//! - a [local attention](localattn) window over the previous `d` frames.
//!
//! Per-frame features come from pluggable [extractors](featex) fused with a
//! cross-channel attention step, and the propagated features are decoded to
//! CIE LAB chrominance by an analytic head plus bilinear upsampling
//! ([render]). The [pipeline] module ties these stages into a streaming
//! propagator, provides stacking/recurrent baselines for memory and latency
//! comparisons, and generates deterministic synthetic videos.
//!
//! The runnable programs under `examples/` walk through each capability; the
//! `chromaprop` binary exposes the `colorize`, `bench`, `synth` and `metrics`
//! commands.

pub mod error;
pub mod featex;
pub mod localattn;
pub mod membank;
pub mod metrics;
pub mod numkernel;
pub mod pipeline;
pub mod render;

pub use error::{Error, Result};

/// Floating point type used by every kernel.
#[cfg(not(feature = "single"))]
pub type Real = f64;

/// Floating point type used by every kernel.
#[cfg(feature = "single")]
pub type Real = f32;

/// Scales a tolerance written for `f64` to the active precision.
#[cfg(test)]
#[allow(clippy::unnecessary_cast)]
pub(crate) fn tol(f64_tol: f64) -> Real {
    (f64_tol * (Real::EPSILON as f64 / f64::EPSILON)) as Real
}
