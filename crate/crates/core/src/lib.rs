//! Zero-shot 3D anomaly detection from multi-view renderings.
//!
//! Point clouds are rendered from several rotations, encoded into global and
//! patch features, mapped into an RGB-like feature space by a learned aligner,
//! and scored against learned normal/anomalous prompt embeddings. Per-view
//! score maps are back-projected onto the points and fused across branches.

pub mod aligner;
pub mod autodiff;
mod binio;
pub mod config;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod synth;

pub use error::{Error, Result};
