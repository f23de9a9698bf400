//! Spectral learning and Baum-Welch EM for discrete hidden Markov models,
//! together with the metrics and experiment plumbing used to compare them.
//!
//! * [`hmm`]: parameters, sampling, exact inference and population moments.
//! * [`spectral`]: moment estimation and observable-operator learning.
//! * [`em`]: scaled forward-backward and Baum-Welch with restarts.
//! * [`evaluation`]: test-set L1, negative-probability rate, corrections.
//! * [`likelihood`]: likelihood curves for the symmetric two-state model.
//! * [`experiment`] and [`charts`]: sweeps, CSV tables and SVG figures.

pub mod charts;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod format;
pub mod hmm;
pub mod likelihood;
pub mod linalg;
pub mod seed;
pub mod spectral;

pub use error::{Error, Result};
pub use hmm::{Dataset, HmmParams};
