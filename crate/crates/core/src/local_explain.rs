//! Latent-space-similarity local explanations.
//!
//! Neighbours of a case are retrieved in the maturity/gender sub-space
//! (ga, w, pna, gen) by weighted Gower distance. For each panel feature the
//! neighbours' values and ground-truth labels give an approximate class
//! boundary; the side of the boundary the case falls on implies a class,
//! which either justifies or contests the model's decision.

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::cohort::{Cohort, Demographics, EpisodeRecord, Feature, Label};
use crate::global_explain::ImportanceReport;
use crate::models::metrics::{classify, DEFAULT_THRESHOLD};
use crate::models::Classifier;

pub const DEFAULT_K: usize = 10;
/// Largest fraction of misclassified neighbours for a conclusive boundary.
pub const DEFAULT_OVERLAP_CUTOFF: f64 = 0.30;
pub const COMBINATION_RULE: &str = "all conclusive panels agree on class C -> implied class C; \
    panels disagree or none conclusive -> Inconclusive; implied class equal to the model \
    prediction -> Justify, otherwise Contest";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalExplainError {
    #[error("range of '{0}' is degenerate (max = min)")]
    DegenerateRange(Feature),
    #[error("reference holds {available} records besides the query, need {needed}")]
    InsufficientReference { needed: usize, available: usize },
    #[error("invalid latent-space config: {0}")]
    InvalidConfig(String),
}

impl LocalExplainError {
    pub fn code(&self) -> &'static str {
        match self {
            LocalExplainError::DegenerateRange(_) => "DegenerateRange",
            LocalExplainError::InsufficientReference { .. } => "InsufficientReference",
            LocalExplainError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentWeights {
    pub ga: f64,
    pub w: f64,
    pub pna: f64,
    pub gen: f64,
}

impl Default for LatentWeights {
    fn default() -> Self {
        Self {
            ga: 2.0,
            w: 2.0,
            pna: 2.0,
            gen: 1.0,
        }
    }
}

impl LatentWeights {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            ga: self.ga * c,
            w: self.w * c,
            pna: self.pna * c,
            gen: self.gen * c,
        }
    }

    fn total(&self) -> f64 {
        self.ga + self.w + self.pna + self.gen
    }
}

/// (min, max) of each numeric latent dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentRanges {
    pub ga: (f64, f64),
    pub w: (f64, f64),
    pub pna: (f64, f64),
}

impl LatentRanges {
    pub fn from_cohort(cohort: &Cohort) -> Self {
        Self {
            ga: cohort.range(Feature::Ga),
            w: cohort.range(Feature::W),
            pna: cohort.range(Feature::Pna),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpaceConfig {
    pub weights: LatentWeights,
    pub k: usize,
    pub panel_features: Vec<Feature>,
    pub overlap_cutoff: f64,
}

impl LatentSpaceConfig {
    pub fn new(panel_features: Vec<Feature>) -> Self {
        Self {
            weights: LatentWeights::default(),
            k: DEFAULT_K,
            panel_features,
            overlap_cutoff: DEFAULT_OVERLAP_CUTOFF,
        }
    }

    /// Panels on the two most important dynamic features.
    pub fn from_importance(report: &ImportanceReport) -> Self {
        Self::new(report.top_dynamic(2))
    }

    pub fn validate(&self) -> Result<(), LocalExplainError> {
        let w = &self.weights;
        if ![w.ga, w.w, w.pna, w.gen].iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(LocalExplainError::InvalidConfig("weights must be positive".into()));
        }
        if self.k < 1 {
            return Err(LocalExplainError::InvalidConfig("k must be at least 1".into()));
        }
        if let Some(f) = self.panel_features.iter().find(|f| f.is_static()) {
            return Err(LocalExplainError::InvalidConfig(format!(
                "panel feature '{f}' is not dynamic"
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_cutoff) {
            return Err(LocalExplainError::InvalidConfig("overlap cutoff outside [0, 1)".into()));
        }
        Ok(())
    }
}

fn numeric_delta(a: f64, b: f64, (lo, hi): (f64, f64), f: Feature) -> Result<f64, LocalExplainError> {
    if !(hi > lo) {
        return Err(LocalExplainError::DegenerateRange(f));
    }
    Ok(((a - b).abs() / (hi - lo)).min(1.0))
}

/// Weighted Gower dissimilarity in [0, 1]. Numeric contributions are
/// range-normalized and clamped at 1; gender contributes 0 or 1.
pub fn gower_distance(
    a: &Demographics,
    b: &Demographics,
    ranges: &LatentRanges,
    weights: &LatentWeights,
) -> Result<f64, LocalExplainError> {
    let d_ga = numeric_delta(a.ga, b.ga, ranges.ga, Feature::Ga)?;
    let d_w = numeric_delta(a.w, b.w, ranges.w, Feature::W)?;
    let d_pna = numeric_delta(a.pna, b.pna, ranges.pna, Feature::Pna)?;
    let d_gen = if a.gen == b.gen { 0.0 } else { 1.0 };
    let num = weights.ga * d_ga + weights.w * d_w + weights.pna * d_pna + weights.gen * d_gen;
    Ok(num / weights.total())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub record: &'a EpisodeRecord,
    pub distance: f64,
}

/// Record id with any augmentation suffix (`id#n`) removed.
pub fn base_record_id(id: &str) -> &str {
    id.split_once('#').map_or(id, |(base, _)| base)
}

/// The `k` nearest reference records by ascending distance, ties broken by
/// ascending record id. The query and augmented copies of it (`id#n`) are
/// excluded. Distances use the reference cohort's frozen ranges.
pub fn nearest_neighbors<'a>(
    query: &EpisodeRecord,
    reference: &'a Cohort,
    config: &LatentSpaceConfig,
) -> Result<Vec<Neighbor<'a>>, LocalExplainError> {
    config.validate()?;
    let ranges = LatentRanges::from_cohort(reference);
    let mut all = reference
        .records()
        .iter()
        .filter(|r| base_record_id(&r.record_id) != base_record_id(&query.record_id))
        .map(|r| {
            gower_distance(&query.demographics, &r.demographics, &ranges, &config.weights)
                .map(|distance| Neighbor { record: r, distance })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if all.len() < config.k {
        return Err(LocalExplainError::InsufficientReference {
            needed: config.k,
            available: all.len(),
        });
    }
    all.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.record.record_id.cmp(&b.record.record_id))
    });
    all.truncate(config.k);
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryEstimate {
    Conclusive {
        boundary: f64,
        /// True when values above the boundary map to LosNec.
        losnec_above: bool,
        misclassified: usize,
    },
    Inconclusive {
        /// Best achievable misclassification count, when both classes occur.
        misclassified: Option<usize>,
    },
}

impl BoundaryEstimate {
    /// Class implied for a value; `None` for inconclusive boundaries and
    /// values exactly on the boundary.
    pub fn implied(&self, value: f64) -> Option<Label> {
        match *self {
            BoundaryEstimate::Conclusive {
                boundary, losnec_above, ..
            } => {
                if value == boundary {
                    None
                } else if (value > boundary) == losnec_above {
                    Some(Label::LosNec)
                } else {
                    Some(Label::Healthy)
                }
            }
            BoundaryEstimate::Inconclusive { .. } => None,
        }
    }
}

/// Best single threshold separating the labelled values. Every midpoint
/// between adjacent distinct values is tried in both orientations; fewest
/// misclassifications wins, ties go to the smallest threshold (then to
/// LosNec-above). More than `overlap_cutoff` misclassified is inconclusive.
pub fn estimate_boundary(points: &[(f64, Label)], overlap_cutoff: f64) -> BoundaryEstimate {
    let has = |l: Label| points.iter().any(|p| p.1 == l);
    if !has(Label::LosNec) || !has(Label::Healthy) {
        return BoundaryEstimate::Inconclusive { misclassified: None };
    }
    let mut sorted: Vec<(f64, Label)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = sorted.len();
    let total_pos = sorted.iter().filter(|p| p.1.is_positive()).count();

    let mut best: Option<(usize, f64, bool)> = None;
    let mut below_pos = 0;
    for i in 1..k {
        if sorted[i - 1].1.is_positive() {
            below_pos += 1;
        }
        if sorted[i - 1].0 == sorted[i].0 {
            continue;
        }
        let t = 0.5 * (sorted[i - 1].0 + sorted[i].0);
        let below_neg = i - below_pos;
        let above_pos = total_pos - below_pos;
        let above_neg = (k - i) - above_pos;
        // LosNec above: errors are positives below and negatives above
        for (errors, losnec_above) in [(below_pos + above_neg, true), (below_neg + above_pos, false)] {
            if best.is_none_or(|(e, _, _)| errors < e) {
                best = Some((errors, t, losnec_above));
            }
        }
    }
    let Some((errors, boundary, losnec_above)) = best else {
        return BoundaryEstimate::Inconclusive {
            misclassified: Some(total_pos.min(k - total_pos)),
        };
    };
    if errors as f64 > overlap_cutoff * k as f64 + 1e-9 {
        BoundaryEstimate::Inconclusive {
            misclassified: Some(errors),
        }
    } else {
        BoundaryEstimate::Conclusive {
            boundary,
            losnec_above,
            misclassified: errors,
        }
    }
}

fn round4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelPoint {
    pub record_id: String,
    #[serde(serialize_with = "round4")]
    pub distance: f64,
    pub value: f64,
    pub label: Label,
    pub demographics: Demographics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborPanel {
    pub feature: Feature,
    pub points: Vec<PanelPoint>,
    pub query_value: f64,
    pub boundary: BoundaryEstimate,
    pub implied_class: Option<Label>,
    pub conclusive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Justify,
    Contest,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Justify => "Justify",
            Verdict::Contest => "Contest",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestReport {
    pub query_id: String,
    pub query_demographics: Demographics,
    pub model: String,
    pub prediction: Label,
    pub score: f64,
    pub k: usize,
    pub weights: LatentWeights,
    pub overlap_cutoff: f64,
    pub panels: Vec<NeighborPanel>,
    pub implied_class: Option<Label>,
    pub verdict: Verdict,
    pub combination_rule: String,
    pub narrative: Vec<String>,
}

/// Combines panel implications with the model prediction.
pub fn combine(implied: &[Option<Label>], prediction: Label) -> (Option<Label>, Verdict) {
    let conclusive: Vec<Label> = implied.iter().flatten().copied().collect();
    let Some(&first) = conclusive.first() else {
        return (None, Verdict::Inconclusive);
    };
    if conclusive.iter().any(|&c| c != first) {
        return (None, Verdict::Inconclusive);
    }
    let verdict = if first == prediction {
        Verdict::Justify
    } else {
        Verdict::Contest
    };
    (Some(first), verdict)
}

pub fn contest(
    query: &EpisodeRecord,
    model: &dyn Classifier,
    model_name: &str,
    reference: &Cohort,
    config: &LatentSpaceConfig,
) -> Result<ContestReport, LocalExplainError> {
    config.validate()?;
    if config.panel_features.is_empty() {
        return Err(LocalExplainError::InvalidConfig("no panel features".into()));
    }
    let neighbors = nearest_neighbors(query, reference, config)?;
    let score = model.score_record(query);
    let prediction = classify(score, DEFAULT_THRESHOLD);

    let mut panels = Vec::with_capacity(config.panel_features.len());
    let mut narrative = vec![format!(
        "model {model_name} predicts {prediction} (score {score:.3}) for {}",
        query.record_id
    )];
    for &feature in &config.panel_features {
        let points: Vec<PanelPoint> = neighbors
            .iter()
            .map(|n| PanelPoint {
                record_id: n.record.record_id.clone(),
                distance: n.distance,
                value: feature.value(n.record),
                label: n.record.label,
                demographics: n.record.demographics,
            })
            .collect();
        let labelled: Vec<(f64, Label)> = points.iter().map(|p| (p.value, p.label)).collect();
        let boundary = estimate_boundary(&labelled, config.overlap_cutoff);
        let query_value = feature.value(query);
        let implied_class = boundary.implied(query_value);
        narrative.push(match (boundary, implied_class) {
            (BoundaryEstimate::Conclusive { boundary: b, losnec_above, .. }, Some(c)) => format!(
                "{feature}: case value {query_value:.4} is {} the neighbourhood boundary {b:.4} (LosNec {}), suggesting {c}",
                if query_value > b { "above" } else { "below" },
                if losnec_above { "above" } else { "below" },
            ),
            (BoundaryEstimate::Conclusive { boundary: b, .. }, None) => {
                format!("{feature}: case value lies on the boundary {b:.4}")
            }
            (BoundaryEstimate::Inconclusive { .. }, _) => {
                format!("{feature}: neighbour classes overlap; no boundary")
            }
        });
        panels.push(NeighborPanel {
            feature,
            points,
            query_value,
            boundary,
            implied_class,
            conclusive: implied_class.is_some(),
        });
    }
    let implied: Vec<Option<Label>> = panels.iter().map(|p| p.implied_class).collect();
    let (implied_class, verdict) = combine(&implied, prediction);
    narrative.push(format!("verdict: {verdict}"));
    Ok(ContestReport {
        query_id: query.record_id.clone(),
        query_demographics: query.demographics,
        model: model_name.to_string(),
        prediction,
        score,
        k: config.k,
        weights: config.weights,
        overlap_cutoff: config.overlap_cutoff,
        panels,
        implied_class,
        verdict,
        combination_rule: COMBINATION_RULE.to_string(),
        narrative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Gender;
    use Label::*;

    fn demo(gen: Gender, ga: f64, w: f64, pna: f64) -> Demographics {
        Demographics {
            gen,
            ga,
            bw: w,
            w,
            pna,
        }
    }

    fn ranges() -> LatentRanges {
        LatentRanges {
            ga: (24.0, 32.0),
            w: (500.0, 1800.0),
            pna: (4.0, 40.0),
        }
    }

    #[test]
    fn gower_examples() {
        let w = LatentWeights::default();
        let a = demo(Gender::Female, 28.0, 1000.0, 10.0);
        assert_eq!(gower_distance(&a, &a, &ranges(), &w).unwrap(), 0.0);
        let lo = demo(Gender::Female, 24.0, 500.0, 4.0);
        let hi = demo(Gender::Male, 32.0, 1800.0, 40.0);
        assert_eq!(gower_distance(&lo, &hi, &ranges(), &w).unwrap(), 1.0);
        // deltas 0.5, 0.2, 0.1, same gender
        let b = demo(Gender::Female, 28.0 + 4.0, 1000.0 + 260.0, 10.0 + 3.6);
        let d = gower_distance(&a, &b, &ranges(), &w).unwrap();
        assert!((d - 1.6 / 7.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn out_of_range_delta_clamped() {
        let a = demo(Gender::Female, 24.0, 500.0, 4.0);
        let b = demo(Gender::Female, 44.0, 500.0, 4.0);
        let d = gower_distance(&a, &b, &ranges(), &LatentWeights::default()).unwrap();
        assert!((d - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_range() {
        let mut r = ranges();
        r.pna = (5.0, 5.0);
        let a = demo(Gender::Female, 28.0, 1000.0, 5.0);
        assert_eq!(
            gower_distance(&a, &a, &r, &LatentWeights::default()),
            Err(LocalExplainError::DegenerateRange(Feature::Pna))
        );
    }

    #[test]
    fn boundary_examples() {
        let pts = [(0.5, LosNec), (0.6, LosNec), (0.1, Healthy), (0.2, Healthy)];
        match estimate_boundary(&pts, 0.3) {
            BoundaryEstimate::Conclusive {
                boundary,
                losnec_above,
                misclassified,
            } => {
                assert!((boundary - 0.35).abs() < 1e-15);
                assert!(losnec_above);
                assert_eq!(misclassified, 0);
            }
            other => panic!("{other:?}"),
        }
        let healthy: Vec<(f64, Label)> = (0..10).map(|i| (i as f64, Healthy)).collect();
        assert_eq!(
            estimate_boundary(&healthy, 0.3),
            BoundaryEstimate::Inconclusive { misclassified: None }
        );
        let interleaved: Vec<(f64, Label)> = (0..10)
            .map(|i| (i as f64, if i % 2 == 0 { Healthy } else { LosNec }))
            .collect();
        assert_eq!(
            estimate_boundary(&interleaved, 0.3),
            BoundaryEstimate::Inconclusive { misclassified: Some(4) }
        );
    }

    #[test]
    fn boundary_cutoff_is_inclusive() {
        // best split misclassifies exactly 3 of 10
        let labels = [Healthy, Healthy, LosNec, Healthy, Healthy, LosNec, LosNec, Healthy, LosNec, LosNec];
        let pts: Vec<(f64, Label)> = labels.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect();
        let est = estimate_boundary(&pts, 0.3);
        assert!(matches!(est, BoundaryEstimate::Conclusive { misclassified: 2, .. }), "{est:?}");
        let labels = [Healthy, Healthy, LosNec, Healthy, LosNec, Healthy, LosNec, Healthy, LosNec, LosNec];
        let pts: Vec<(f64, Label)> = labels.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect();
        let est = estimate_boundary(&pts, 0.3);
        assert!(matches!(est, BoundaryEstimate::Conclusive { misclassified: 3, .. }), "{est:?}");
    }

    #[test]
    fn equal_values_cannot_split() {
        let pts = [(1.0, LosNec), (1.0, Healthy), (1.0, Healthy)];
        assert!(matches!(
            estimate_boundary(&pts, 0.3),
            BoundaryEstimate::Inconclusive { .. }
        ));
    }

    #[test]
    fn implied_class_sides() {
        let b = BoundaryEstimate::Conclusive {
            boundary: 0.35,
            losnec_above: true,
            misclassified: 0,
        };
        assert_eq!(b.implied(0.2), Some(Healthy));
        assert_eq!(b.implied(0.5), Some(LosNec));
        assert_eq!(b.implied(0.35), None);
    }

    #[test]
    fn combination_rule() {
        assert_eq!(combine(&[Some(Healthy), Some(Healthy)], LosNec), (Some(Healthy), Verdict::Contest));
        assert_eq!(combine(&[Some(LosNec), Some(LosNec)], LosNec), (Some(LosNec), Verdict::Justify));
        assert_eq!(combine(&[Some(Healthy), Some(LosNec)], LosNec), (None, Verdict::Inconclusive));
        assert_eq!(combine(&[None, None], Healthy), (None, Verdict::Inconclusive));
        assert_eq!(combine(&[None, Some(Healthy)], Healthy), (Some(Healthy), Verdict::Justify));
    }

    #[test]
    fn neighbors_skip_query_and_its_copies() {
        use crate::cohort::tests::record;
        let mut records = vec![record("q", LosNec, 28.0, 1000.0, 0.3), record("q#0", Healthy, 28.0, 1000.0, 0.3)];
        for i in 0..4 {
            let label = if i % 2 == 0 { Healthy } else { LosNec };
            let mut r = record(&format!("n{i}"), label, 26.0 + i as f64, 900.0 + 50.0 * i as f64, 0.2);
            r.demographics.pna += i as f64;
            records.push(r);
        }
        let cohort = Cohort::new(records).unwrap();
        let cfg = LatentSpaceConfig {
            k: 4,
            ..LatentSpaceConfig::new(vec![Feature::XcHrSpo2])
        };
        let n = nearest_neighbors(cohort.get("q").unwrap(), &cohort, &cfg).unwrap();
        let ids: Vec<&str> = n.iter().map(|n| n.record.record_id.as_str()).collect();
        assert_eq!(ids, ["n2", "n1", "n0", "n3"]);
        assert_eq!(base_record_id("q#12"), "q");
        let cfg = LatentSpaceConfig { k: 5, ..cfg };
        assert!(matches!(
            nearest_neighbors(cohort.get("q").unwrap(), &cohort, &cfg),
            Err(LocalExplainError::InsufficientReference { needed: 5, available: 4 })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = LatentSpaceConfig::new(vec![Feature::XcHrSpo2]);
        assert!(c.validate().is_ok());
        c.k = 0;
        assert!(c.validate().is_err());
        let mut c = LatentSpaceConfig::new(vec![Feature::W]);
        assert!(c.validate().is_err());
        c.panel_features = vec![Feature::SaHr];
        c.weights.gen = 0.0;
        assert!(c.validate().is_err());
    }
}
