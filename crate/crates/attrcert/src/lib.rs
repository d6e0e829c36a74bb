//! Certified upper bounds on attribution deviations under norm-bounded input
//! perturbations, with attack campaigns that validate the certificates.
//!
//! The crate is organized around a small pipeline:
//! - [`numkit`]: dense linear-algebra primitives (power iteration, norms).
//! - [`net`]: softplus feedforward classifiers with exact first and second
//!   derivatives, plus deterministic trainers.
//! - [`attrib`]: gradient-based attribution methods (saliency map,
//!   input*gradient, integrated gradients) and their input-Jacobians.
//! - [`bounds`]: the certification math: spectral and abs-sum bounds,
//!   label-constraint feasibility, cosine conversion, adaptive scale.
//! - [`attack`]: PGD and feature-importance attacks plus the validation
//!   campaign runner.
//! - [`metrics`]: dissimilarity measures and report statistics.
//! - [`data`]: dataset generation and IDX ingestion.
//! - [`cli`]: the end-to-end harness behind the `attrcert` binary.

pub mod attack;
pub mod attrib;
pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod numkit;

pub use error::{Error, Result};
