//! Heterogeneous source model for the MEG inverse problem: simultaneous,
//! separable recovery of a parametric cortical patch source and a
//! distributed Gaussian background from a single time-shot of synthetic
//! magnetometer data, with imaging (L1+TV) and patch-only baselines.
//!
//! The pipeline runs on a synthetic wrinkled-sphere cortex whose
//! sphere↔cortex parameterization is exact, with a closed-form
//! spherical-conductor forward model, so every stage is reproducible and
//! testable end to end.

pub mod baselines;
pub mod forward;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod optimizer;
pub mod solver;
pub mod source_model;
