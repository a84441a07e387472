//! Variance inflation factors and iterative multicollinearity pruning.
//!
//! VIF_k = 1 / (1 - R²_k), where R²_k comes from regressing column k on all
//! other columns plus an intercept. The regression is solved by centering
//! (which absorbs the intercept) and modified Gram-Schmidt on the remaining
//! columns, so rank-deficient designs are handled without forming X'X.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortError, Feature};

/// Recommended maximum VIF.
pub const DEFAULT_VIF_THRESHOLD: f64 = 2.5;

const DEPENDENT_TOL: f64 = 1e-10;
const COLLINEAR_TOL: f64 = 1e-12;
const TIE_RTOL: f64 = 1e-9;

/// `columns[k][i]` is the value of feature k for record i.
pub fn vif(columns: &[Vec<f64>]) -> Result<Vec<f64>, VifInputError> {
    let p = columns.len();
    if p < 2 {
        return Err(VifInputError::TooFewFeatures(p));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(VifInputError::Ragged);
    }
    if n <= p {
        return Err(VifInputError::Underdetermined { records: n, features: p });
    }
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let m = c.iter().sum::<f64>() / n as f64;
            let out: Vec<f64> = c.iter().map(|x| x - m).collect();
            if out.iter().all(|&x| x == 0.0) {
                Err(VifInputError::ConstantColumn(k))
            } else {
                Ok(out)
            }
        })
        .collect::<Result<_, _>>()?;

    Ok((0..p)
        .map(|k| {
            let others: Vec<&[f64]> = (0..p).filter(|&j| j != k).map(|j| centered[j].as_slice()).collect();
            let unexplained = unexplained_fraction(&centered[k], &others);
            if unexplained < COLLINEAR_TOL {
                f64::INFINITY
            } else {
                1.0 / unexplained
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum VifInputError {
    TooFewFeatures(usize),
    Ragged,
    Underdetermined { records: usize, features: usize },
    ConstantColumn(usize),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 1 - R² of the centered response on the span of the centered regressors.
fn unexplained_fraction(y: &[f64], regressors: &[&[f64]]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(regressors.len());
    for x in regressors {
        let norm0 = dot(x, x).sqrt();
        let mut v = x.to_vec();
        // two passes of MGS keep the basis orthogonal to working precision
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > DEPENDENT_TOL * norm0 {
            v.iter_mut().for_each(|vi| *vi /= norm);
            basis.push(v);
        }
    }
    let total = dot(y, y);
    let mut r = y.to_vec();
    for _ in 0..2 {
        for q in &basis {
            let c = dot(q, &r);
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
    }
    (dot(&r, &r) / total).clamp(0.0, 1.0)
}

mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("Infinity")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "Infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad VIF value '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub feature: Feature,
    #[serde(with = "inf_f64")]
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub iteration: usize,
    pub vif: Vec<VifEntry>,
    pub removed: Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalLog {
    pub threshold: f64,
    /// Active features left out of the VIF computation (non-numeric).
    pub excluded: Vec<Feature>,
    pub steps: Vec<RemovalStep>,
    pub final_vif: Vec<VifEntry>,
}

impl RemovalLog {
    pub fn removed(&self) -> Vec<Feature> {
        self.steps.iter().map(|s| s.removed).collect()
    }
}

pub fn cohort_vif(cohort: &Cohort, features: &[Feature]) -> Result<Vec<VifEntry>, CohortError> {
    let columns: Vec<Vec<f64>> = features
        .iter()
        .map(|f| cohort.records().iter().map(|r| f.value(r)).collect())
        .collect();
    let values = vif(&columns).map_err(|e| match e {
        VifInputError::TooFewFeatures(got) => CohortError::TooFewFeatures { needed: 2, got },
        VifInputError::Ragged => CohortError::InvalidParameter("ragged matrix".into()),
        VifInputError::Underdetermined { records, features } => CohortError::Underdetermined { records, features },
        VifInputError::ConstantColumn(k) => CohortError::ConstantColumn(features[k]),
    })?;
    Ok(features
        .iter()
        .zip(values)
        .map(|(&feature, vif)| VifEntry { feature, vif })
        .collect())
}

/// Repeatedly drops the feature with the largest VIF until every remaining
/// numeric feature is at or below `threshold`. Equal maxima drop the feature
/// that comes later in canonical order.
pub fn prune_multicollinearity(cohort: &Cohort, threshold: f64) -> Result<(Cohort, RemovalLog), CohortError> {
    if !(threshold > 1.0) {
        return Err(CohortError::InvalidParameter(format!(
            "VIF threshold {threshold} must exceed 1"
        )));
    }
    let excluded: Vec<Feature> = cohort
        .active_features()
        .iter()
        .copied()
        .filter(|f| !f.is_numeric())
        .collect();
    let mut numeric: Vec<Feature> = cohort
        .active_features()
        .iter()
        .copied()
        .filter(|f| f.is_numeric())
        .collect();
    let mut steps = Vec::new();
    let final_vif = loop {
        if numeric.len() < 2 {
            break numeric.iter().map(|&feature| VifEntry { feature, vif: 1.0 }).collect();
        }
        let table = cohort_vif(cohort, &numeric)?;
        let worst = table.iter().fold(None::<&VifEntry>, |best, e| match best {
            None => Some(e),
            Some(b) if ties(e.vif, b.vif) => Some(if e.feature.order() > b.feature.order() { e } else { b }),
            Some(b) if e.vif > b.vif => Some(e),
            Some(b) => Some(b),
        });
        let worst = worst.expect("non-empty table");
        if worst.vif <= threshold {
            break table;
        }
        let removed = worst.feature;
        numeric.retain(|&f| f != removed);
        steps.push(RemovalStep {
            iteration: steps.len() + 1,
            vif: table,
            removed,
        });
    };
    let mut active = excluded.clone();
    active.extend(numeric);
    let log = RemovalLog {
        threshold,
        excluded,
        steps,
        final_vif,
    };
    Ok((cohort.with_active_features(active), log))
}

fn ties(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs())
}
