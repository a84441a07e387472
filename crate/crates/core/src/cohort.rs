//! Episode records, cohorts and stratified splitting.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;
use crate::signals::DynamicFeatures;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("duplicate record id '{0}'")]
    DuplicateRecord(String),
    #[error("invalid demographics for '{record_id}': {reason}")]
    InvalidDemographics { record_id: String, reason: String },
    #[error("class {label} has {count} records, need at least {needed}")]
    ClassTooSmall { label: Label, count: usize, needed: usize },
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("feature '{0}' is constant")]
    ConstantColumn(Feature),
    #[error("{records} records for {features} features; regression is underdetermined")]
    Underdetermined { records: usize, features: usize },
    #[error("need at least {needed} features, got {got}")]
    TooFewFeatures { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cohort is empty")]
    Empty,
}

impl CohortError {
    pub fn code(&self) -> &'static str {
        match self {
            CohortError::DuplicateRecord(_) => "DuplicateRecord",
            CohortError::InvalidDemographics { .. } => "InvalidDemographics",
            CohortError::ClassTooSmall { .. } => "ClassTooSmall",
            CohortError::UnknownFeature(_) => "UnknownFeature",
            CohortError::ConstantColumn(_) => "ConstantColumn",
            CohortError::Underdetermined { .. } => "Underdetermined",
            CohortError::TooFewFeatures { .. } => "TooFewFeatures",
            CohortError::InvalidParameter(_) => "InvalidParameter",
            CohortError::Empty => "EmptyCohort",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// Numeric encoding used by the classifiers.
    pub fn as_f64(self) -> f64 {
        match self {
            Gender::Female => 0.0,
            Gender::Male => 1.0,
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v >= 0.5 {
            Gender::Male
        } else {
            Gender::Female
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            other => Err(format!("unknown gender '{other}'")),
        }
    }
}

impl std::fmt::Display for Gender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Gender::Female => "F",
            Gender::Male => "M",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Healthy,
    LosNec,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::LosNec
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Healthy => Label::LosNec,
            Label::LosNec => Label::Healthy,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Healthy => "Healthy",
            Label::LosNec => "LosNec",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" | "0" => Ok(Label::Healthy),
            "losnec" | "los-nec" | "los_nec" | "1" => Ok(Label::LosNec),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

/// Every feature in canonical order (demographics first, then vital signs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Gen,
    Ga,
    Bw,
    W,
    Pna,
    XcHrSpo2,
    SaHr,
    Hrm,
    Spo2m,
    Hs,
    Brs,
    Ts,
}

impl Feature {
    pub const ALL: [Feature; 12] = [
        Feature::Gen,
        Feature::Ga,
        Feature::Bw,
        Feature::W,
        Feature::Pna,
        Feature::XcHrSpo2,
        Feature::SaHr,
        Feature::Hrm,
        Feature::Spo2m,
        Feature::Hs,
        Feature::Brs,
        Feature::Ts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Gen => "gen",
            Feature::Ga => "ga",
            Feature::Bw => "bw",
            Feature::W => "w",
            Feature::Pna => "pna",
            Feature::XcHrSpo2 => "xc_hr_spo2",
            Feature::SaHr => "sa_hr",
            Feature::Hrm => "hrm",
            Feature::Spo2m => "spo2m",
            Feature::Hs => "hs",
            Feature::Brs => "brs",
            Feature::Ts => "ts",
        }
    }

    /// Position in canonical order; later features lose VIF ties.
    pub fn order(self) -> usize {
        Feature::ALL.iter().position(|&f| f == self).unwrap()
    }

    pub fn is_dynamic(self) -> bool {
        self.order() >= Feature::XcHrSpo2.order()
    }

    pub fn is_static(self) -> bool {
        !self.is_dynamic()
    }

    pub fn is_numeric(self) -> bool {
        self != Feature::Gen
    }

    pub fn value(self, r: &EpisodeRecord) -> f64 {
        let d = &r.demographics;
        let x = &r.features;
        match self {
            Feature::Gen => d.gen.as_f64(),
            Feature::Ga => d.ga,
            Feature::Bw => d.bw,
            Feature::W => d.w,
            Feature::Pna => d.pna,
            Feature::XcHrSpo2 => x.xc_hr_spo2,
            Feature::SaHr => x.sa_hr,
            Feature::Hrm => x.hrm,
            Feature::Spo2m => x.spo2m,
            Feature::Hs => x.hs,
            Feature::Brs => x.brs,
            Feature::Ts => x.ts,
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Feature {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let alias = match key.as_str() {
            "xc" | "xc-hr-spo2" => "xc_hr_spo2",
            "sa" | "sa-hr" => "sa_hr",
            other => other,
        };
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == alias)
            .ok_or_else(|| CohortError::UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub gen: Gender,
    /// Gestational age, weeks.
    pub ga: f64,
    /// Birth weight, grams.
    pub bw: f64,
    /// Current weight, grams.
    pub w: f64,
    /// Postnatal age, weeks.
    pub pna: f64,
}

impl Demographics {
    pub fn validate(&self) -> Result<(), String> {
        if !(20.0..=45.0).contains(&self.ga) {
            return Err(format!("ga {} outside [20, 45]", self.ga));
        }
        if !(self.bw > 0.0 && self.bw < 6000.0) {
            return Err(format!("bw {} outside (0, 6000)", self.bw));
        }
        if !(self.w > 0.0 && self.w < 6000.0) {
            return Err(format!("w {} outside (0, 6000)", self.w));
        }
        if !(self.pna >= 0.0) {
            return Err(format!("pna {} negative", self.pna));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub record_id: String,
    pub demographics: Demographics,
    pub features: DynamicFeatures,
    pub label: Label,
}

impl EpisodeRecord {
    pub fn vector(&self, features: &[Feature]) -> Vec<f64> {
        features.iter().map(|f| f.value(self)).collect()
    }
}

/// An immutable set of records with its active feature list and the
/// per-feature ranges frozen when it was assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<EpisodeRecord>,
    active_features: Vec<Feature>,
    feature_ranges: BTreeMap<Feature, (f64, f64)>,
}

impl Cohort {
    pub fn new(records: Vec<EpisodeRecord>) -> Result<Self, CohortError> {
        Self::with_features(records, Feature::ALL.to_vec())
    }

    pub fn with_features(records: Vec<EpisodeRecord>, active_features: Vec<Feature>) -> Result<Self, CohortError> {
        if records.is_empty() {
            return Err(CohortError::Empty);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(CohortError::DuplicateRecord(r.record_id.clone()));
            }
            r.demographics
                .validate()
                .map_err(|reason| CohortError::InvalidDemographics {
                    record_id: r.record_id.clone(),
                    reason,
                })?;
        }
        let mut feature_ranges = BTreeMap::new();
        for f in Feature::ALL {
            let (lo, hi) = records.iter().map(|r| f.value(r)).fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), v| (lo.min(v), hi.max(v)),
            );
            feature_ranges.insert(f, (lo, hi));
        }
        let mut active_features = active_features;
        active_features.sort();
        active_features.dedup();
        Ok(Self {
            records,
            active_features,
            feature_ranges,
        })
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn active_features(&self) -> &[Feature] {
        &self.active_features
    }

    pub fn active_dynamic_features(&self) -> Vec<Feature> {
        self.active_features.iter().copied().filter(|f| f.is_dynamic()).collect()
    }

    pub fn feature_ranges(&self) -> &BTreeMap<Feature, (f64, f64)> {
        &self.feature_ranges
    }

    pub fn range(&self, feature: Feature) -> (f64, f64) {
        self.feature_ranges[&feature]
    }

    pub fn get(&self, record_id: &str) -> Option<&EpisodeRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Same records, new active feature list; ranges stay frozen.
    pub fn with_active_features(&self, features: Vec<Feature>) -> Self {
        let mut features = features;
        features.sort();
        features.dedup();
        Self {
            records: self.records.clone(),
            active_features: features,
            feature_ranges: self.feature_ranges.clone(),
        }
    }

    /// A subset that keeps this cohort's active features and frozen ranges.
    pub fn subset<F: Fn(&EpisodeRecord) -> bool>(&self, keep: F) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            active_features: self.active_features.clone(),
            feature_ranges: self.feature_ranges.clone(),
        }
    }

    pub fn without(&self, record_id: &str) -> Self {
        self.subset(|r| r.record_id != record_id)
    }

    /// Appends records (e.g. probes) without refreezing ranges.
    pub fn extended(&self, extra: impl IntoIterator<Item = EpisodeRecord>) -> Result<Self, CohortError> {
        let mut out = self.clone();
        for r in extra {
            if out.get(&r.record_id).is_some() {
                return Err(CohortError::DuplicateRecord(r.record_id));
            }
            out.records.push(r);
        }
        Ok(out)
    }

    /// Record-major matrix over the given features.
    pub fn matrix(&self, features: &[Feature]) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.vector(features)).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// Per-class split: `round(n * train_fraction)` records of each class go to
/// training, with at least one record of each class left for testing.
pub fn stratified_split(cohort: &Cohort, train_fraction: f64, seed: u64) -> Result<(Cohort, Cohort), CohortError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CohortError::InvalidParameter(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut train_ids = HashSet::new();
    for (ci, label) in [Label::Healthy, Label::LosNec].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..cohort.len())
            .filter(|&i| cohort.records[i].label == label)
            .collect();
        if idx.len() < 2 {
            return Err(CohortError::ClassTooSmall {
                label,
                count: idx.len(),
                needed: 2,
            });
        }
        let n = idx.len();
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5711, ci as u64]));
        idx.shuffle(&mut rng);
        train_ids.extend(idx[..n_train].iter().map(|&i| cohort.records[i].record_id.clone()));
    }
    let train = cohort.subset(|r| train_ids.contains(&r.record_id));
    let test = cohort.subset(|r| !train_ids.contains(&r.record_id));
    Ok((train, test))
}
