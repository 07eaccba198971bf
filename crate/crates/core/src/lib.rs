//! Reconstruction-error intrusion detection over KDD-format connection records.
//!
//! The crate covers the whole batch experiment: ingest ([`dataset`]), feature
//! transforms and declarative preprocessing plans ([`transforms`]), PCA
//! ([`pca`]), statistics-driven plan advice ([`advisor`]), a from-scratch
//! sigmoid autoencoder ([`autoencoder`]), thresholding and metrics
//! ([`detection`]), a chat-completion client ([`llm`]) and anomaly
//! explanations ([`explainer`]). [`pipeline`] wires them into the two
//! preprocessing pipelines that get compared.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! pin the `f64` instantiation the pipelines use.

pub mod advisor;
pub mod autoencoder;
pub mod dataset;
pub mod detection;
mod error;
pub mod explainer;
pub mod linalg;
pub mod llm;
pub mod pca;
pub mod pipeline;
mod scalar;
pub mod synthetic;
pub mod transforms;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub use dataset::{DatasetSchema, FeatureKind, Label, LabeledDataset};
pub use transforms::{PreprocessPlan, Provenance, TransformStep};

/// Feature matrix in double precision.
pub type Matrix = transforms::FeatureMatrix<f64>;
/// Single-precision feature matrix.
pub type Matrix32 = transforms::FeatureMatrix<f32>;
pub type MinMaxScaler = transforms::MinMaxScaler<f64>;
pub type FittedPlan = transforms::FittedPlan<f64>;
pub type PcaModel = pca::PcaModel<f64>;
pub type PcaModel32 = pca::PcaModel<f32>;
pub type Autoencoder = autoencoder::AutoencoderModel<f64>;
pub type Autoencoder32 = autoencoder::AutoencoderModel<f32>;
pub type Gradients = autoencoder::Gradients<f64>;
pub type ThresholdModel = detection::ThresholdModel<f64>;
pub type ErrorHistogram = detection::ErrorHistogram<f64>;
