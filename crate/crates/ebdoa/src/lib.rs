//! Localization of a direct sound source and its first-order wall reflections
//! from higher-order Ambisonics (HOA) recordings.
//!
//! The crate covers the full pipeline:
//!
//! * [`sphharm`] — real N3D spherical harmonics, steering vectors, and the
//!   60x120 output direction grid;
//! * [`roomsim`] — shoebox image-source simulation and plane-wave HOA
//!   encoding of the direct path and reflections;
//! * [`ebdsp`] — broadband covariance estimation and the classical
//!   eigen-beam spectra (EB-MVDR, EB-MUSIC);
//! * [`sps`] — spatial pseudo-spectrum grids: Gaussian training labels,
//!   normalization, and peak extraction;
//! * [`nn`] — minimal differentiable kernels (dense, transposed
//!   convolution, sigmoid cross-entropy, Adam) with finite-difference
//!   verification;
//! * [`dcnn`] — the covariance-to-pseudo-spectrum network: assembly,
//!   training, inference, and checkpointing;
//! * [`dataset`] — simulated dataset generation, feature extraction, binary
//!   record files, and WAV ingestion;
//! * [`eval`] — DOA matching, precision/recall/error metrics, experiment
//!   orchestration, and heatmap emission.
//!
//! A narrative guide with runnable snippets lives in `book/`; the snippets
//! are compiled and run as doc-tests of this crate.

pub mod dataset;
pub mod dcnn;
pub mod ebdsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod roomsim;
pub mod sphharm;
pub mod sps;

#[doc(hidden)]
pub mod book;

pub use error::{Error, Result};
pub use sphharm::{Direction, Grid, GridSpec, ManifoldVector, angular_distance, build_grid};
