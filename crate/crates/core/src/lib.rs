//! Null space analysis (NuSA) for fully-connected neural networks.
//!
//! A network trained with the NuSA regularizer classifies and detects
//! outliers with one model: at test time, the fraction of each layer input
//! that lies in the row space of the layer's weight matrix is used as an
//! inlier score. Samples whose score falls below a threshold are rejected.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: dense matrices, pivoted Householder QR, row/null space bases
//!   and orthogonal projectors.
//! * [`network`]: dense feedforward networks, backpropagation and Adam.
//! * [`nusa`]: the score, its gradient, threshold calibration and detection.
//! * [`baselines`]: KNN and PCA outlier detectors used for comparison.
//! * [`eval`]: ROC / PR curves, AUC, curve averaging and histograms.
//! * [`data`]: synthetic datasets, CSV ingestion and known/unknown splits.
//! * [`cli`]: configuration and the commands behind the `nusa` binary.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
mod io;
pub mod linalg;
pub mod network;
pub mod nusa;
pub mod rng;

pub use error::{NusaError, Result};
pub use linalg::{DenseMatrix, DenseVector, OrthonormalBasis, Projector};
pub use network::{Activation, DenseLayer, ForwardTrace, Network, TrainConfig};
pub use nusa::{NusaConfig, NusaReport};
