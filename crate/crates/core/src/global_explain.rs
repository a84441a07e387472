//! Dataset-level explanations: permutation importance with 1 - AUC loss and
//! one/two-dimensional partial dependence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Feature, Label};
use crate::models::{auc, Classifier};
use crate::seed::derive_seed;

pub const DEFAULT_PERMUTATIONS: usize = 10;
pub const DEFAULT_GRID_1D: usize = 51;
pub const DEFAULT_GRID_2D: usize = 21;
/// Static features allowed on the first axis of a 2-D PDP.
pub const PDP_STATIC: [Feature; 3] = [Feature::Ga, Feature::W, Feature::Pna];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("feature '{0}' is not used by the model")]
    UnknownFeature(Feature),
    #[error("1-D partial dependence is restricted to dynamic features; '{0}' is static")]
    StaticFeatureRejected(Feature),
    #[error("'{0}' cannot be the static axis of a 2-D PDP (expected ga, w or pna)")]
    InvalidStaticAxis(Feature),
    #[error("feature '{0}' is constant over the data; no grid to span")]
    DegenerateFeature(Feature),
    #[error("permutation count must be at least 1")]
    ZeroPermutations,
    #[error("grid needs at least 2 points")]
    GridTooSmall,
    #[error("data holds a single class; AUC loss is undefined")]
    AucUndefined,
    #[error("data is empty")]
    EmptyData,
}

impl ExplainError {
    pub fn code(&self) -> &'static str {
        match self {
            ExplainError::UnknownFeature(_) => "UnknownFeature",
            ExplainError::StaticFeatureRejected(_) => "StaticFeatureRejected",
            ExplainError::InvalidStaticAxis(_) => "InvalidStaticAxis",
            ExplainError::DegenerateFeature(_) => "DegenerateFeature",
            ExplainError::ZeroPermutations => "ZeroPermutations",
            ExplainError::GridTooSmall => "GridTooSmall",
            ExplainError::AucUndefined => "SingleClassTestSet",
            ExplainError::EmptyData => "EmptyData",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: Feature,
    pub baseline_loss: f64,
    pub permuted_loss: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub loss: String,
    pub permutations: usize,
    pub seed: u64,
    /// In the model's feature order.
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    /// Features by decreasing importance; ties keep model order.
    pub fn ranked(&self) -> Vec<Feature> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by(|a, b| b.importance.total_cmp(&a.importance));
        v.into_iter().map(|f| f.feature).collect()
    }

    pub fn top(&self, n: usize) -> Vec<Feature> {
        self.ranked().into_iter().take(n).collect()
    }

    pub fn top_dynamic(&self, n: usize) -> Vec<Feature> {
        self.ranked().into_iter().filter(|f| f.is_dynamic()).take(n).collect()
    }

    pub fn get(&self, feature: Feature) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.feature == feature)
    }
}

fn loss(model: &dyn Classifier, x: &[Vec<f64>], labels: &[Label]) -> Result<f64, ExplainError> {
    let scores: Vec<f64> = x.iter().map(|r| model.score(r)).collect();
    auc(&scores, labels).map(|a| 1.0 - a).ok_or(ExplainError::AucUndefined)
}

/// Loss increase when one column is shuffled, averaged over `permutations`
/// independent shuffles per feature.
pub fn permutation_importance(
    model: &dyn Classifier,
    data: &Cohort,
    permutations: usize,
    seed: u64,
) -> Result<ImportanceReport, ExplainError> {
    permutation_importance_with(model, data, permutations, seed, |feature, b, n| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[feature as u64, b as u64]));
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        p
    })
}

/// Same as [`permutation_importance`] with a caller-supplied permutation
/// source `(feature index, repetition, n) -> permutation`.
pub fn permutation_importance_with<P>(
    model: &dyn Classifier,
    data: &Cohort,
    permutations: usize,
    seed: u64,
    permutation: P,
) -> Result<ImportanceReport, ExplainError>
where
    P: Fn(usize, usize, usize) -> Vec<usize>,
{
    if permutations == 0 {
        return Err(ExplainError::ZeroPermutations);
    }
    if data.is_empty() {
        return Err(ExplainError::EmptyData);
    }
    let features = model.features().to_vec();
    let x = data.matrix(&features);
    let labels = data.labels();
    let baseline = loss(model, &x, &labels)?;
    let n = x.len();

    let mut out = Vec::with_capacity(features.len());
    for (j, &feature) in features.iter().enumerate() {
        let mut total = 0.0;
        for b in 0..permutations {
            let perm = permutation(j, b, n);
            let mut xp = x.clone();
            for (i, &src) in perm.iter().enumerate() {
                xp[i][j] = x[src][j];
            }
            total += loss(model, &xp, &labels)?;
        }
        let permuted = total / permutations as f64;
        out.push(FeatureImportance {
            feature,
            baseline_loss: baseline,
            permuted_loss: permuted,
            importance: permuted - baseline,
        });
    }
    Ok(ImportanceReport {
        loss: "1 - auc".to_string(),
        permutations,
        seed,
        features: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: Feature,
    pub grid: Vec<f64>,
    pub pd: Vec<f64>,
    /// Observed values of the feature, in data order.
    pub rug: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpSurface {
    pub static_feature: Feature,
    pub dynamic_feature: Feature,
    pub static_grid: Vec<f64>,
    pub dynamic_grid: Vec<f64>,
    /// `pd[i][j]` at `(static_grid[i], dynamic_grid[j])`.
    pub pd: Vec<Vec<f64>>,
}

/// `points` equidistant values from the observed minimum to maximum; the
/// endpoints are the observed values exactly.
pub fn grid(data: &Cohort, feature: Feature, points: usize) -> Result<Vec<f64>, ExplainError> {
    if points < 2 {
        return Err(ExplainError::GridTooSmall);
    }
    if data.is_empty() {
        return Err(ExplainError::EmptyData);
    }
    let values: Vec<f64> = data.records().iter().map(|r| feature.value(r)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(ExplainError::DegenerateFeature(feature));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    g[points - 1] = hi;
    Ok(g)
}

fn column(model: &dyn Classifier, feature: Feature) -> Result<usize, ExplainError> {
    model
        .features()
        .iter()
        .position(|&f| f == feature)
        .ok_or(ExplainError::UnknownFeature(feature))
}

pub fn pdp_1d(model: &dyn Classifier, feature: Feature, data: &Cohort, grid_points: usize) -> Result<PdpCurve, ExplainError> {
    if feature.is_static() {
        return Err(ExplainError::StaticFeatureRejected(feature));
    }
    let j = column(model, feature)?;
    let g = grid(data, feature, grid_points)?;
    let mut x = data.matrix(model.features());
    let n = x.len() as f64;
    let pd = g
        .iter()
        .map(|&v| {
            x.iter_mut().map(|r| {
                r[j] = v;
                model.score(r)
            })
            .sum::<f64>()
                / n
        })
        .collect();
    Ok(PdpCurve {
        feature,
        grid: g,
        pd,
        rug: data.records().iter().map(|r| feature.value(r)).collect(),
    })
}

pub fn pdp_2d(
    model: &dyn Classifier,
    static_feature: Feature,
    dynamic_feature: Feature,
    data: &Cohort,
    grid_points: (usize, usize),
) -> Result<PdpSurface, ExplainError> {
    if !PDP_STATIC.contains(&static_feature) {
        return Err(ExplainError::InvalidStaticAxis(static_feature));
    }
    if dynamic_feature.is_static() {
        return Err(ExplainError::StaticFeatureRejected(dynamic_feature));
    }
    let js = column(model, static_feature)?;
    let jd = column(model, dynamic_feature)?;
    let gs = grid(data, static_feature, grid_points.0)?;
    let gd = grid(data, dynamic_feature, grid_points.1)?;
    let mut x = data.matrix(model.features());
    let n = x.len() as f64;
    let pd = gs
        .iter()
        .map(|&u| {
            gd.iter()
                .map(|&v| {
                    x.iter_mut().map(|r| {
                        r[js] = u;
                        r[jd] = v;
                        model.score(r)
                    })
                    .sum::<f64>()
                        / n
                })
                .collect()
        })
        .collect();
    Ok(PdpSurface {
        static_feature,
        dynamic_feature,
        static_grid: gs,
        dynamic_grid: gd,
        pd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub importance: ImportanceReport,
    pub pdp_1d: Vec<PdpCurve>,
    pub pdp_2d: Vec<PdpSurface>,
}

/// Importance, a 1-D PDP for every dynamic model feature, and 2-D PDPs of
/// weight against the two most important dynamic features.
pub fn explain(model: &dyn Classifier, data: &Cohort, permutations: usize, seed: u64) -> Result<ExplanationBundle, ExplainError> {
    let importance = permutation_importance(model, data, permutations, seed)?;
    let mut curves = Vec::new();
    for &f in model.features().iter().filter(|f| f.is_dynamic()) {
        match pdp_1d(model, f, data, DEFAULT_GRID_1D) {
            Ok(c) => curves.push(c),
            Err(ExplainError::DegenerateFeature(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut surfaces = Vec::new();
    if model.features().contains(&Feature::W) {
        for f in importance.top_dynamic(2) {
            match pdp_2d(model, Feature::W, f, data, (DEFAULT_GRID_2D, DEFAULT_GRID_2D)) {
                Ok(s) => surfaces.push(s),
                Err(ExplainError::DegenerateFeature(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ExplanationBundle {
        importance,
        pdp_1d: curves,
        pdp_2d: surfaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::tests::balanced;

    struct Fixed {
        features: Vec<Feature>,
        f: fn(&[f64]) -> f64,
    }

    impl Classifier for Fixed {
        fn features(&self) -> &[Feature] {
            &self.features
        }
        fn score(&self, x: &[f64]) -> f64 {
            (self.f)(x)
        }
    }

    #[test]
    fn ignored_feature_has_zero_importance() {
        let m = Fixed {
            features: vec![Feature::W, Feature::XcHrSpo2],
            f: |x| x[1],
        };
        let r = permutation_importance(&m, &balanced(10), 5, 1).unwrap();
        assert_eq!(r.get(Feature::W).unwrap().importance, 0.0);
        assert!(r.get(Feature::XcHrSpo2).unwrap().importance > 0.0);
        assert_eq!(r.top(1), vec![Feature::XcHrSpo2]);
    }

    #[test]
    fn identity_permutation_gives_zero() {
        let m = Fixed {
            features: vec![Feature::W, Feature::XcHrSpo2],
            f: |x| x[1] + x[0] * 1e-4,
        };
        let r = permutation_importance_with(&m, &balanced(6), 4, 0, |_, _, n| (0..n).collect()).unwrap();
        assert!(r.features.iter().all(|f| f.importance == 0.0));
    }

    #[test]
    fn zero_permutations_rejected() {
        let m = Fixed {
            features: vec![Feature::XcHrSpo2],
            f: |x| x[0],
        };
        assert_eq!(
            permutation_importance(&m, &balanced(3), 0, 0).unwrap_err(),
            ExplainError::ZeroPermutations
        );
    }

    #[test]
    fn pdp_of_identity_model() {
        let m = Fixed {
            features: vec![Feature::W, Feature::XcHrSpo2],
            f: |x| x[1].clamp(0.0, 1.0),
        };
        let c = pdp_1d(&m, Feature::XcHrSpo2, &balanced(5), 6).unwrap();
        assert_eq!(c.grid[0], 0.1);
        assert_eq!(*c.grid.last().unwrap(), 0.6);
        for (g, p) in c.grid.iter().zip(&c.pd) {
            assert!((g - p).abs() < 1e-12);
        }
        assert_eq!(c.rug.len(), 10);
    }

    #[test]
    fn pdp_rejections() {
        let m = Fixed {
            features: vec![Feature::W, Feature::XcHrSpo2],
            f: |x| x[1],
        };
        let c = balanced(4);
        assert_eq!(
            pdp_1d(&m, Feature::W, &c, 5).unwrap_err(),
            ExplainError::StaticFeatureRejected(Feature::W)
        );
        assert_eq!(
            pdp_1d(&m, Feature::SaHr, &c, 5).unwrap_err(),
            ExplainError::UnknownFeature(Feature::SaHr)
        );
        assert_eq!(
            pdp_2d(&m, Feature::Gen, Feature::XcHrSpo2, &c, (3, 3)).unwrap_err(),
            ExplainError::InvalidStaticAxis(Feature::Gen)
        );
        assert_eq!(pdp_1d(&m, Feature::XcHrSpo2, &c, 1).unwrap_err(), ExplainError::GridTooSmall);
    }

    #[test]
    fn ignoring_model_has_flat_pdp() {
        let m = Fixed {
            features: vec![Feature::W, Feature::XcHrSpo2],
            f: |x| (x[0] - 1000.0) / 10.0,
        };
        let data = balanced(5);
        let c = pdp_1d(&m, Feature::XcHrSpo2, &data, 4).unwrap();
        let mean: f64 = data.records().iter().map(|r| m.score_record(r)).sum::<f64>() / data.len() as f64;
        for p in &c.pd {
            assert!((p - mean).abs() < 1e-12);
        }
    }
}
