//! One training run: split, fit, evaluate and explain a pruned cohort, with
//! every random stage seeded from a single run seed.

use serde::{Deserialize, Serialize};

use crate::cohort::{stratified_split, Cohort};
use crate::global_explain::{permutation_importance, ImportanceReport, DEFAULT_PERMUTATIONS};
use crate::local_explain::{contest, ContestReport, LatentSpaceConfig};
use crate::models::metrics::DEFAULT_THRESHOLD;
use crate::models::{evaluate, fit, fit_with_hypers, Algorithm, ClassifierSpec, EvalReport, ForestParams, Hypers, TrainedModel};
use crate::seed::{derive_seed, stage_seed, Stage};
use crate::synth::{plant_misclassification_probe, Probe, ProbeMode, SynthTruth};
use crate::Result;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub train_fraction: f64,
    pub permutations: usize,
    pub threshold: f64,
    /// Overrides the default spec; its seed is replaced by the run's
    /// training-stage seed.
    pub spec: Option<ClassifierSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::RandomForest,
            seed: 0,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            permutations: DEFAULT_PERMUTATIONS,
            threshold: DEFAULT_THRESHOLD,
            spec: None,
        }
    }
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            algorithm,
            seed,
            ..Self::default()
        }
    }

    pub fn split_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Split)
    }

    pub fn importance_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Importance)
    }

    /// The classifier spec actually fitted.
    pub fn effective_spec(&self) -> ClassifierSpec {
        let seed = stage_seed(self.seed, Stage::Train);
        match &self.spec {
            Some(s) => ClassifierSpec {
                algorithm: self.algorithm,
                seed,
                ..s.clone()
            },
            None => ClassifierSpec::new(self.algorithm, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub config: RunConfig,
    pub split: SplitIds,
    pub model: TrainedModel,
    /// Held-out test set.
    pub evaluation: EvalReport,
    /// Computed on the whole cohort.
    pub importance: ImportanceReport,
}

fn ids(c: &Cohort) -> Vec<String> {
    c.records().iter().map(|r| r.record_id.clone()).collect()
}

pub fn split(cohort: &Cohort, config: &RunConfig) -> Result<(Cohort, Cohort)> {
    Ok(stratified_split(cohort, config.train_fraction, config.split_seed())?)
}

pub fn run(cohort: &Cohort, config: &RunConfig) -> Result<TrainingRun> {
    let (train, test) = split(cohort, config)?;
    let model = fit(&config.effective_spec(), &train)?;
    let evaluation = evaluate(&model, &test, config.threshold)?;
    let importance = permutation_importance(&model, cohort, config.permutations, config.importance_seed())?;
    Ok(TrainingRun {
        config: config.clone(),
        split: SplitIds {
            train: ids(&train),
            test: ids(&test),
        },
        model,
        evaluation,
        importance,
    })
}

/// How a probe is planted into a model before it is contested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Copies of the probe, carrying the training label, added to training.
    pub copies: usize,
    pub forest: ForestParams,
    pub permutations: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            copies: 3,
            forest: ForestParams {
                n_trees: 300,
                mtry: 3,
                min_leaf: 1,
            },
            permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probe: Probe,
    pub report: ContestReport,
}

impl ProbeOutcome {
    /// Whether the planted model predicts the probe as trained.
    pub fn planted(&self) -> bool {
        self.report.prediction == self.probe.training_label
    }

    pub fn matches_expectation(&self) -> bool {
        self.report.verdict == self.probe.expected
    }
}

/// Plants a probe next to `cohort`, trains a forest on the cohort plus the
/// probe's relabelled copies, and contests the probe against that training
/// data with panels on the model's two most important dynamic features.
pub fn probe_contest(
    cohort: &Cohort,
    truth: &SynthTruth,
    mode: ProbeMode,
    seed: u64,
    config: &ProbeConfig,
) -> Result<ProbeOutcome> {
    let probe = plant_misclassification_probe(cohort, truth, mode, seed)?;
    let training = cohort.extended(probe.training_copies(config.copies))?;
    let spec = ClassifierSpec::new(Algorithm::RandomForest, derive_seed(seed, &[Stage::Train as u64]));
    let model = fit_with_hypers(&spec, Hypers::RandomForest(config.forest), &training)?;
    let importance = permutation_importance(&model, &training, config.permutations, derive_seed(seed, &[Stage::Importance as u64]))?;
    let report = contest(&probe.record, &model, "probe-forest", &training, &LatentSpaceConfig::from_importance(&importance))?;
    Ok(ProbeOutcome { probe, report })
}
