//! Classifier training, tuning and scoring.
//!
//! Both algorithms sit behind [`Classifier`], which maps a feature vector in
//! the model's feature order to the probability of LosNec. Explainers only
//! see that contract.

pub mod forest;
pub mod metrics;
pub mod search;
pub mod svm;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, EpisodeRecord, Feature, Label};
pub use forest::{Forest, ForestParams};
pub use metrics::{auc, EvalReport};
pub use search::{fit, fit_with_hypers, SearchEntry};
pub use svm::{Sigmoid, Svm, SvmParams};

/// Version written into serialized model artifacts.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training set holds a single class")]
    SingleClassTrainingSet,
    #[error("class {label} has {count} training records, fewer than {folds} CV folds")]
    CvFoldTooSmall { label: Label, count: usize, folds: usize },
    #[error("test set holds a single class; AUC is undefined")]
    SingleClassTestSet,
    #[error("record lacks feature '{0}'")]
    MissingFeature(Feature),
    #[error("invalid classifier spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported model artifact version {0}")]
    UnsupportedVersion(u32),
    #[error("test set is empty")]
    EmptyTestSet,
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::SingleClassTrainingSet => "SingleClassTrainingSet",
            ModelError::CvFoldTooSmall { .. } => "CvFoldTooSmall",
            ModelError::SingleClassTestSet => "SingleClassTestSet",
            ModelError::MissingFeature(_) => "MissingFeature",
            ModelError::InvalidSpec(_) => "InvalidSpec",
            ModelError::UnsupportedVersion(_) => "UnsupportedVersion",
            ModelError::EmptyTestSet => "EmptyTestSet",
        }
    }
}

/// Uniform scoring contract used by the explainers.
pub trait Classifier: Send + Sync {
    /// Feature order expected by [`Classifier::score`].
    fn features(&self) -> &[Feature];
    /// Probability of LosNec for a vector in `features()` order.
    fn score(&self, x: &[f64]) -> f64;

    fn score_record(&self, record: &EpisodeRecord) -> f64 {
        self.score(&record.vector(self.features()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    RandomForest,
    RbfSvm,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rf" | "random_forest" | "randomforest" => Ok(Algorithm::RandomForest),
            "svm" | "rbf_svm" | "rbfsvm" => Ok(Algorithm::RbfSvm),
            other => Err(format!("unknown algorithm '{other}' (expected rf or svm)")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::RandomForest => "rf",
            Algorithm::RbfSvm => "svm",
        })
    }
}

/// Random-search ranges. `rf_mtry: None` means `1..=p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSpace {
    pub rf_trees: (usize, usize),
    pub rf_mtry: Option<(usize, usize)>,
    pub rf_min_leaf: (usize, usize),
    pub svm_log2_c: (f64, f64),
    pub svm_log2_gamma: (f64, f64),
}

impl Default for HyperSpace {
    fn default() -> Self {
        Self {
            rf_trees: (200, 500),
            rf_mtry: None,
            rf_min_leaf: (1, 5),
            svm_log2_c: (-5.0, 10.0),
            svm_log2_gamma: (-10.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub hyper_space: HyperSpace,
    #[serde(default = "ClassifierSpec::default_repeats")]
    pub cv_repeats: usize,
    #[serde(default = "ClassifierSpec::default_folds")]
    pub cv_folds: usize,
    #[serde(default = "ClassifierSpec::default_draws")]
    pub search_draws: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifierSpec {
    fn default_repeats() -> usize {
        2
    }

    fn default_folds() -> usize {
        10
    }

    fn default_draws() -> usize {
        25
    }

    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            algorithm,
            hyper_space: HyperSpace::default(),
            cv_repeats: Self::default_repeats(),
            cv_folds: Self::default_folds(),
            search_draws: Self::default_draws(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if self.cv_repeats < 1 {
            return bad("cv_repeats must be at least 1");
        }
        if self.search_draws < 1 {
            return bad("search_draws must be at least 1");
        }
        let h = &self.hyper_space;
        if h.rf_trees.0 < 1 || h.rf_trees.0 > h.rf_trees.1 {
            return bad("rf_trees range is empty");
        }
        if h.rf_min_leaf.0 < 1 || h.rf_min_leaf.0 > h.rf_min_leaf.1 {
            return bad("rf_min_leaf range is empty");
        }
        if let Some((lo, hi)) = h.rf_mtry {
            if lo < 1 || lo > hi {
                return bad("rf_mtry range is empty");
            }
        }
        if !(h.svm_log2_c.0 <= h.svm_log2_c.1) || !(h.svm_log2_gamma.0 <= h.svm_log2_gamma.1) {
            return bad("svm ranges are empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Hypers {
    RandomForest(ForestParams),
    RbfSvm(SvmParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    /// Population statistics; constant columns get unit scale.
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let n = x.len() as f64;
        let p = x[0].len();
        let mut mean = vec![0.0; p];
        let mut sd = vec![0.0; p];
        for j in 0..p {
            mean[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            sd[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedState {
    Forest(Forest),
    Svm {
        svm: Svm,
        standardization: Standardization,
        calibration: Sigmoid,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ClassifierSpec,
    pub chosen_hypers: Hypers,
    pub feature_names: Vec<Feature>,
    pub selection_metric: String,
    pub search: Vec<SearchEntry>,
    pub state: FittedState,
}

impl TrainedModel {
    pub fn algorithm(&self) -> Algorithm {
        self.spec.algorithm
    }

    pub fn predict_proba(&self, record: &EpisodeRecord) -> f64 {
        self.score_record(record)
    }

    /// Scores a vector given by name; every model feature must be present.
    pub fn predict_proba_named(&self, values: &HashMap<Feature, f64>) -> Result<f64, ModelError> {
        let x = self
            .feature_names
            .iter()
            .map(|f| values.get(f).copied().ok_or(ModelError::MissingFeature(*f)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.score(&x))
    }

    /// Raw SVM decision value (None for forests).
    pub fn decision_value(&self, x: &[f64]) -> Option<f64> {
        match &self.state {
            FittedState::Svm { svm, standardization, .. } => Some(svm.decision(&standardization.apply(x))),
            FittedState::Forest(_) => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, crate::Error> {
        let model: TrainedModel = serde_json::from_str(s)?;
        if model.format_version != ARTIFACT_VERSION {
            return Err(ModelError::UnsupportedVersion(model.format_version).into());
        }
        Ok(model)
    }
}

impl Classifier for TrainedModel {
    fn features(&self) -> &[Feature] {
        &self.feature_names
    }

    fn score(&self, x: &[f64]) -> f64 {
        match &self.state {
            FittedState::Forest(f) => f.predict_proba(x),
            FittedState::Svm {
                svm,
                standardization,
                calibration,
            } => calibration.apply(svm.decision(&standardization.apply(x))),
        }
    }
}

/// Confusion metrics and AUC on `test` with LosNec as the positive class.
pub fn evaluate(model: &dyn Classifier, test: &Cohort, threshold: f64) -> Result<EvalReport, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    let scores: Vec<f64> = test.records().iter().map(|r| model.score_record(r)).collect();
    Ok(metrics::report(&scores, &test.labels(), threshold))
}
