//! Self-supervised artefact detection for quasi-periodic physiological
//! waveforms.
//!
//! A small convolutional variational autoencoder is trained on windows of
//! "clean" signal selected by simple marking heuristics. Windows whose
//! reconstruction error exceeds a percentile of the training errors are
//! flagged as artefacts, localized with a short sliding window and imputed
//! with the model reconstruction. A PCA reconstructor serves as baseline.

pub mod cli;
pub mod detect;
pub mod error;
pub mod eval;
pub mod kv;
pub mod model_io;
pub mod nn;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod signal_io;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
