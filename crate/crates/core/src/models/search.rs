//! Random hyperparameter search scored by repeated stratified k-fold CV.
//!
//! Every (draw, repeat, fold) task has its own random stream derived from the
//! spec seed, and results are reduced in index order, so the search is
//! reproducible regardless of how rayon schedules the tasks.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{Forest, ForestParams};
use super::metrics::auc;
use super::svm::{Sigmoid, Svm, SvmParams};
use super::{Algorithm, ClassifierSpec, FittedState, Hypers, ModelError, Standardization, TrainedModel, ARTIFACT_VERSION};
use crate::cohort::{Cohort, Label};
use crate::seed::derive_seed;

const STREAM_DRAWS: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_TASK: u64 = 3;
const STREAM_FINAL: u64 = 4;

pub const SELECTION_METRIC: &str = "cv_mean_auc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub draw: usize,
    pub hypers: Hypers,
    pub cv_auc: f64,
}

/// Fold index per record; each class is dealt round-robin after a shuffle so
/// per-class fold counts differ by at most one.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let mut assignment = vec![0; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    for label in [Label::Healthy, Label::LosNec] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = (k + offset) % folds;
        }
        // continue dealing where the previous class stopped to balance fold sizes
        offset = (offset + idx.len()) % folds;
    }
    assignment
}

fn draw_hypers(spec: &ClassifierSpec, p: usize, rng: &mut ChaCha8Rng) -> Hypers {
    let h = &spec.hyper_space;
    match spec.algorithm {
        Algorithm::RandomForest => {
            let (mlo, mhi) = h.rf_mtry.unwrap_or((1, p));
            let mhi = mhi.min(p).max(1);
            let mlo = mlo.min(mhi);
            Hypers::RandomForest(ForestParams {
                n_trees: rng.random_range(h.rf_trees.0..=h.rf_trees.1),
                mtry: rng.random_range(mlo..=mhi),
                min_leaf: rng.random_range(h.rf_min_leaf.0..=h.rf_min_leaf.1),
            })
        }
        Algorithm::RbfSvm => {
            let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
                let e = if hi > lo { rng.random_range(lo..hi) } else { lo };
                2f64.powf(e)
            };
            Hypers::RbfSvm(SvmParams {
                c: log_uniform(rng, h.svm_log2_c),
                gamma: log_uniform(rng, h.svm_log2_gamma),
            })
        }
    }
}

enum Fitted {
    Forest(Forest),
    Svm(Svm, Standardization),
}

impl Fitted {
    fn train(x: &[Vec<f64>], y: &[bool], hypers: Hypers, seed: u64) -> Self {
        match hypers {
            Hypers::RandomForest(p) => Fitted::Forest(Forest::fit(x, y, p, seed)),
            Hypers::RbfSvm(p) => {
                let st = Standardization::fit(x);
                let xs: Vec<Vec<f64>> = x.iter().map(|r| st.apply(r)).collect();
                Fitted::Svm(Svm::fit(&xs, y, p), st)
            }
        }
    }

    /// Ranking score: vote fraction or raw decision value.
    fn raw_score(&self, x: &[f64]) -> f64 {
        match self {
            Fitted::Forest(f) => f.predict_proba(x),
            Fitted::Svm(s, st) => s.decision(&st.apply(x)),
        }
    }
}

struct FoldResult {
    auc: f64,
    /// (record index, raw score) for the held-out records.
    held_out: Vec<(usize, f64)>,
}

fn cv_fold(
    x: &[Vec<f64>],
    y: &[bool],
    labels: &[Label],
    folds: &[usize],
    fold: usize,
    hypers: Hypers,
    seed: u64,
) -> FoldResult {
    let (mut tx, mut ty) = (Vec::new(), Vec::new());
    let mut test_idx = Vec::new();
    for i in 0..x.len() {
        if folds[i] == fold {
            test_idx.push(i);
        } else {
            tx.push(x[i].clone());
            ty.push(y[i]);
        }
    }
    let model = Fitted::train(&tx, &ty, hypers, seed);
    let held_out: Vec<(usize, f64)> = test_idx.iter().map(|&i| (i, model.raw_score(&x[i]))).collect();
    let scores: Vec<f64> = held_out.iter().map(|&(_, s)| s).collect();
    let labs: Vec<Label> = test_idx.iter().map(|&i| labels[i]).collect();
    FoldResult {
        auc: auc(&scores, &labs).expect("stratified folds hold both classes"),
        held_out,
    }
}

fn check_training_set(spec: &ClassifierSpec, train: &Cohort) -> Result<(), ModelError> {
    spec.validate()?;
    let pos = train.count(Label::LosNec);
    let neg = train.count(Label::Healthy);
    if pos == 0 || neg == 0 {
        return Err(ModelError::SingleClassTrainingSet);
    }
    for (label, count) in [(Label::Healthy, neg), (Label::LosNec, pos)] {
        if count < spec.cv_folds {
            return Err(ModelError::CvFoldTooSmall {
                label,
                count,
                folds: spec.cv_folds,
            });
        }
    }
    if train.active_features().is_empty() {
        return Err(ModelError::InvalidSpec("no active features".into()));
    }
    Ok(())
}

/// Random search over `spec.hyper_space`, selecting the draw with the best
/// mean AUC over `cv_repeats x cv_folds` stratified folds (ties go to the
/// earliest draw), then refitting it on the whole training set.
pub fn fit(spec: &ClassifierSpec, train: &Cohort) -> Result<TrainedModel, ModelError> {
    check_training_set(spec, train)?;
    let features = train.active_features().to_vec();
    let x = train.matrix(&features);
    let labels = train.labels();
    let y: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_DRAWS]));
    let candidates: Vec<Hypers> = (0..spec.search_draws)
        .map(|_| draw_hypers(spec, features.len(), &mut rng))
        .collect();
    let fold_sets: Vec<Vec<usize>> = (0..spec.cv_repeats)
        .map(|r| stratified_folds(&labels, spec.cv_folds, derive_seed(spec.seed, &[STREAM_FOLDS, r as u64])))
        .collect();

    let tasks: Vec<(usize, usize, usize)> = (0..candidates.len())
        .flat_map(|d| (0..spec.cv_repeats).flat_map(move |r| (0..spec.cv_folds).map(move |f| (d, r, f))))
        .collect();
    let results: Vec<FoldResult> = tasks
        .par_iter()
        .map(|&(d, r, f)| {
            let seed = derive_seed(spec.seed, &[STREAM_TASK, d as u64, r as u64, f as u64]);
            cv_fold(&x, &y, &labels, &fold_sets[r], f, candidates[d], seed)
        })
        .collect();

    let per_draw = spec.cv_repeats * spec.cv_folds;
    let search: Vec<SearchEntry> = candidates
        .iter()
        .enumerate()
        .map(|(d, &hypers)| {
            let chunk = &results[d * per_draw..(d + 1) * per_draw];
            SearchEntry {
                draw: d,
                hypers,
                cv_auc: chunk.iter().map(|r| r.auc).sum::<f64>() / per_draw as f64,
            }
        })
        .collect();
    let best = search
        .iter()
        .fold(&search[0], |b, e| if e.cv_auc > b.cv_auc { e } else { b })
        .draw;

    // out-of-fold decision values of the first repeat calibrate the SVM
    let oof: Vec<f64> = {
        let mut v = vec![0.0; x.len()];
        for r in &results[best * per_draw..best * per_draw + spec.cv_folds] {
            for &(i, s) in &r.held_out {
                v[i] = s;
            }
        }
        v
    };
    Ok(finish(spec, features, candidates[best], search, &x, &y, &oof))
}

/// Fits fixed hyperparameters without a search. SVM calibration still uses
/// out-of-fold decision values from one stratified CV pass.
pub fn fit_with_hypers(spec: &ClassifierSpec, hypers: Hypers, train: &Cohort) -> Result<TrainedModel, ModelError> {
    let algo_matches = matches!(
        (spec.algorithm, hypers),
        (Algorithm::RandomForest, Hypers::RandomForest(_)) | (Algorithm::RbfSvm, Hypers::RbfSvm(_))
    );
    if !algo_matches {
        return Err(ModelError::InvalidSpec("hyperparameters do not match algorithm".into()));
    }
    let features = train.active_features().to_vec();
    let x = train.matrix(&features);
    let labels = train.labels();
    let y: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    let mut oof = vec![0.0; x.len()];
    if let Hypers::RbfSvm(_) = hypers {
        check_training_set(spec, train)?;
        let folds = stratified_folds(&labels, spec.cv_folds, derive_seed(spec.seed, &[STREAM_FOLDS, 0]));
        for f in 0..spec.cv_folds {
            let seed = derive_seed(spec.seed, &[STREAM_TASK, 0, 0, f as u64]);
            for (i, s) in cv_fold(&x, &y, &labels, &folds, f, hypers, seed).held_out {
                oof[i] = s;
            }
        }
    } else if train.count(Label::LosNec) == 0 || train.count(Label::Healthy) == 0 {
        return Err(ModelError::SingleClassTrainingSet);
    }
    Ok(finish(spec, features, hypers, Vec::new(), &x, &y, &oof))
}

fn finish(
    spec: &ClassifierSpec,
    features: Vec<crate::cohort::Feature>,
    hypers: Hypers,
    search: Vec<SearchEntry>,
    x: &[Vec<f64>],
    y: &[bool],
    oof: &[f64],
) -> TrainedModel {
    let seed = derive_seed(spec.seed, &[STREAM_FINAL]);
    let state = match Fitted::train(x, y, hypers, seed) {
        Fitted::Forest(f) => FittedState::Forest(f),
        Fitted::Svm(svm, standardization) => FittedState::Svm {
            svm,
            standardization,
            calibration: Sigmoid::fit(oof, y),
        },
    };
    TrainedModel {
        format_version: ARTIFACT_VERSION,
        spec: spec.clone(),
        chosen_hypers: hypers,
        feature_names: features,
        selection_metric: SELECTION_METRIC.to_string(),
        search,
        state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_partitions() {
        let labels: Vec<Label> = (0..37)
            .map(|i| if i % 3 == 0 { Label::LosNec } else { Label::Healthy })
            .collect();
        let folds = stratified_folds(&labels, 10, 5);
        for label in [Label::Healthy, Label::LosNec] {
            let counts: Vec<usize> = (0..10)
                .map(|f| (0..labels.len()).filter(|&i| folds[i] == f && labels[i] == label).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{label}: {counts:?}");
        }
        let sizes: Vec<usize> = (0..10).map(|f| folds.iter().filter(|&&x| x == f).count()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 37);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn draws_respect_space() {
        let spec = ClassifierSpec::new(Algorithm::RandomForest, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            match draw_hypers(&spec, 9, &mut rng) {
                Hypers::RandomForest(p) => {
                    assert!((200..=500).contains(&p.n_trees));
                    assert!((1..=9).contains(&p.mtry));
                    assert!((1..=5).contains(&p.min_leaf));
                }
                Hypers::RbfSvm(_) => unreachable!(),
            }
        }
        let spec = ClassifierSpec::new(Algorithm::RbfSvm, 1);
        for _ in 0..200 {
            if let Hypers::RbfSvm(p) = draw_hypers(&spec, 9, &mut rng) {
                assert!((2f64.powi(-5)..=2f64.powi(10)).contains(&p.c));
                assert!((2f64.powi(-10)..=2f64.powi(2)).contains(&p.gamma));
            }
        }
    }
}
