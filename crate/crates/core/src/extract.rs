//! Epoch manifest to daily episode records.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::cohort::{Cohort, EpisodeRecord};
use crate::io::{read_demographics, read_epoch, read_manifest, record_id, DemographicsRow, ManifestEntry};
use crate::signals::{daily_features, epoch_features, DynamicFeatures, SignalError, Slot};
use crate::{Error, Result};

/// Computes per-epoch features for every manifest entry (in parallel) and
/// averages the two slots of each infant-day.
pub fn extract_features(
    manifest: &[ManifestEntry],
    base_dir: &Path,
    max_lag_s: usize,
) -> Result<BTreeMap<(String, NaiveDate), DynamicFeatures>> {
    let per_epoch: Vec<((String, NaiveDate), Slot, DynamicFeatures)> = manifest
        .par_iter()
        .map(|e| {
            let path = if e.path.is_absolute() { e.path.clone() } else { base_dir.join(&e.path) };
            let epoch = read_epoch(&path, &e.infant_id, e.date, e.slot)?;
            let f = epoch_features(&epoch, max_lag_s)?;
            Ok(((e.infant_id.clone(), e.date), e.slot, f))
        })
        .collect::<Result<_>>()?;

    let mut days: BTreeMap<(String, NaiveDate), HashMap<Slot, DynamicFeatures>> = BTreeMap::new();
    for (key, slot, f) in per_epoch {
        if days.entry(key.clone()).or_default().insert(slot, f).is_some() {
            return Err(Error::Format {
                path: "manifest".into(),
                message: format!("duplicate {slot} epoch for {} on {}", key.0, key.1),
            });
        }
    }
    days.into_iter()
        .map(|(key, slots)| {
            let daily = daily_features(slots.get(&Slot::Morning), slots.get(&Slot::Afternoon)).map_err(|e| {
                SignalError::InEpoch {
                    infant_id: key.0.clone(),
                    date: key.1,
                    slot: match e {
                        SignalError::MissingEpoch(s) => s,
                        _ => Slot::Morning,
                    },
                    source: Box::new(e),
                }
            })?;
            Ok((key, daily))
        })
        .collect()
}

/// Joins daily features with demographics rows into a cohort. Every
/// demographics row needs both epochs and vice versa.
pub fn assemble(
    daily: &BTreeMap<(String, NaiveDate), DynamicFeatures>,
    demographics: &[DemographicsRow],
) -> Result<Cohort> {
    let mut records = Vec::with_capacity(demographics.len());
    let mut seen = 0;
    for row in demographics {
        let key = (row.infant_id.clone(), row.date);
        let features = *daily.get(&key).ok_or_else(|| Error::Format {
            path: "demographics".into(),
            message: format!("no epochs for {} on {}", row.infant_id, row.date),
        })?;
        seen += 1;
        let (demographics, label) = row.parse().map_err(|m| Error::Format {
            path: "demographics".into(),
            message: format!("{}: {m}", row.record_id()),
        })?;
        records.push(EpisodeRecord {
            record_id: record_id(&row.infant_id, row.date),
            demographics,
            features,
            label,
        });
    }
    if seen < daily.len() {
        let missing = daily
            .keys()
            .find(|k| !demographics.iter().any(|r| r.infant_id == k.0 && r.date == k.1))
            .expect("some day lacks demographics");
        return Err(Error::Format {
            path: "demographics".into(),
            message: format!("no demographics row for {} on {}", missing.0, missing.1),
        });
    }
    Ok(Cohort::new(records)?)
}

/// Default demographics location: `demographics.csv` beside the manifest.
pub fn default_demographics_path(manifest: &Path) -> std::path::PathBuf {
    manifest.with_file_name("demographics.csv")
}

pub fn extract_cohort(manifest_path: &Path, demographics_path: &Path, max_lag_s: usize) -> Result<Cohort> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let daily = extract_features(&manifest, base, max_lag_s)?;
    let demographics = read_demographics(demographics_path)?;
    assemble(&daily, &demographics)
}
