//! Explainability and contestability toolkit for tabular morbidity
//! recognition from neonatal vital signs.
//!
//! The pipeline runs bottom-up:
//!
//! * [`signals`] turns 1 Hz HR/SpO2 epochs into seven dynamic features.
//! * [`cohort`] and [`vif`] assemble episode records, prune collinear
//!   features and split train/test.
//! * [`models`] trains random-forest and RBF-SVM classifiers behind one
//!   probabilistic contract.
//! * [`global_explain`] computes permutation importance and partial
//!   dependence.
//! * [`local_explain`] retrieves latent-space (maturity + gender) neighbours
//!   by weighted Gower distance and issues justify/contest verdicts.
//! * [`synth`] generates seeded cohorts carrying a known illness pattern.

pub mod cohort;
pub mod extract;
pub mod global_explain;
pub mod io;
pub mod local_explain;
pub mod models;
pub mod pipeline;
pub mod seed;
pub mod signals;
pub mod synth;
pub mod vif;

use thiserror::Error;

pub use cohort::{Cohort, CohortError, Demographics, EpisodeRecord, Feature, Gender, Label};
pub use global_explain::ExplainError;
pub use local_explain::LocalExplainError;
pub use models::{Classifier, ModelError, TrainedModel};
pub use signals::{DynamicFeatures, SignalError, Slot, VitalSignEpoch};
pub use synth::SynthError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    LocalExplain(#[from] LocalExplainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code naming the underlying error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Signal(e) => e.code(),
            Error::Cohort(e) => e.code(),
            Error::Model(e) => e.code(),
            Error::Explain(e) => e.code(),
            Error::LocalExplain(e) => e.code(),
            Error::Synth(e) => e.code(),
            Error::Format { .. } => "InvalidFormat",
            Error::Json(_) => "InvalidJson",
            Error::Io(_) => "Io",
        }
    }

    /// True for errors caused by bad input rather than the runtime.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
