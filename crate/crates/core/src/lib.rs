//! 3D prior construction for multi-view novel view synthesis.
//!
//! This crate builds the geometric conditioning inputs consumed by multi-view
//! generators: it aligns monocular depth maps to metric scale against sparse
//! SfM observations, forward-warps RGB and canonical coordinate maps into
//! arbitrary target views with z-buffer fusion, produces Plücker ray
//! embeddings, and assembles per-view conditioning stacks at the two scales
//! the downstream model expects. A standalone key-rescaled attention kernel
//! with attention-mass diagnostics is included for studying reference-mass
//! dilution over long token sequences.
//!
//! The main entry points are:
//!
//! - [`depth::align_depth`] / [`depth::apply_alignment`] — RANSAC scale/shift
//!   recovery with a minimal-slope constraint.
//! - [`camera`] — pinhole projection, relative poses, Plücker maps, and
//!   global scene-scale normalization.
//! - [`warp`] — canonical coordinate maps, the contract function, forward
//!   warping with deterministic z-buffer fusion, Fourier embedding.
//! - [`conditioning`] — resolution buckets and conditioning-stack assembly.
//! - [`attention`] — exact scaled dot-product attention with reference-key
//!   rescaling and dilution diagnostics.
//! - [`pipeline::run_pipeline`] — the full align → normalize → warp → fuse →
//!   stack → evaluate chain behind the CLI.

pub mod attention;
pub mod camera;
pub mod conditioning;
pub mod depth;
mod error;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
