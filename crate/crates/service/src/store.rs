//! File-backed persistence under the data directory:
//!
//! ```text
//! cohorts/<name>.csv[.features.json]
//! models/<id>/{meta,model,evaluation,importance}.json + cohort.csv snapshot
//! jobs/<id>.json
//! verdicts.jsonl
//! ```

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use contesta_core::cohort::{Cohort, Label};
use contesta_core::global_explain::ImportanceReport;
use contesta_core::io::{read_cohort, read_json, write_cohort, write_json};
use contesta_core::local_explain::Verdict;
use contesta_core::models::{EvalReport, TrainedModel};
use contesta_core::pipeline::{RunConfig, SplitIds, TrainingRun};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub id: String,
    pub cohort: String,
    pub config: RunConfig,
    pub split: SplitIds,
    pub features: Vec<contesta_core::Feature>,
    pub completed_at: String,
}

/// Clinician feedback on one case; appended once, never rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub timestamp: String,
    pub case_id: String,
    pub model_id: String,
    pub machine_verdict: Verdict,
    pub clinician_verdict: ClinicianVerdict,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClinicianVerdict {
    Justify,
    Contest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub name: String,
    pub records: usize,
    pub losnec: usize,
    pub healthy: usize,
    pub active_features: Vec<contesta_core::Feature>,
}

impl CohortSummary {
    pub fn of(name: &str, c: &Cohort) -> Self {
        Self {
            name: name.to_string(),
            records: c.len(),
            losnec: c.count(Label::LosNec),
            healthy: c.count(Label::Healthy),
            active_features: c.active_features().to_vec(),
        }
    }
}

/// Names of cohorts and models: 1-64 of `[A-Za-z0-9_.-]`, not starting with '.'.
pub fn check_name(kind: &str, name: &str) -> ApiResult<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::invalid("InvalidName", format!("invalid {kind} name '{name}'")))
    }
}

pub struct Store {
    root: PathBuf,
    verdict_lock: Mutex<()>,
}

impl Store {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        for d in ["cohorts", "models", "jobs"] {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            verdict_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn cohort_path(&self, name: &str) -> PathBuf {
        self.root.join("cohorts").join(format!("{name}.csv"))
    }

    fn model_dir(&self, id: &str) -> PathBuf {
        self.root.join("models").join(id)
    }

    pub fn job_path(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(format!("{id}.json"))
    }

    fn verdict_path(&self) -> PathBuf {
        self.root.join("verdicts.jsonl")
    }

    pub fn cohort_names(&self) -> ApiResult<Vec<String>> {
        let mut names: Vec<String> = fs::read_dir(self.root.join("cohorts"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".csv")).map(str::to_string))
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn read_cohort(&self, name: &str) -> ApiResult<Cohort> {
        check_name("cohort", name)?;
        let path = self.cohort_path(name);
        if !path.exists() {
            return Err(ApiError::not_found("cohort", name));
        }
        Ok(read_cohort(&path)?)
    }

    pub fn write_cohort(&self, name: &str, cohort: &Cohort) -> ApiResult<()> {
        check_name("cohort", name)?;
        Ok(write_cohort(&self.cohort_path(name), cohort)?)
    }

    pub fn model_ids(&self) -> ApiResult<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("models"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("meta.json").exists())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .filter(|n| !n.starts_with('.'))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn model_exists(&self, id: &str) -> bool {
        self.model_dir(id).join("meta.json").exists()
    }

    /// Writes the run into a staging directory and swaps it into place, so
    /// readers see either the old artifacts or the complete new set.
    pub fn write_model(&self, meta: &ModelMeta, run: &TrainingRun, cohort: &Cohort) -> ApiResult<()> {
        let models = self.root.join("models");
        let staging = models.join(format!(".staging-{}", meta.id));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        write_json(&staging.join("model.json"), &run.model)?;
        write_json(&staging.join("evaluation.json"), &run.evaluation)?;
        write_json(&staging.join("importance.json"), &run.importance)?;
        write_cohort(&staging.join("cohort.csv"), cohort)?;
        write_json(&staging.join("meta.json"), meta)?;
        let target = self.model_dir(&meta.id);
        let retired = models.join(format!(".retired-{}", meta.id));
        if target.exists() {
            if retired.exists() {
                fs::remove_dir_all(&retired)?;
            }
            fs::rename(&target, &retired)?;
        }
        fs::rename(&staging, &target)?;
        if retired.exists() {
            fs::remove_dir_all(&retired)?;
        }
        Ok(())
    }

    pub fn read_model(&self, id: &str) -> ApiResult<StoredModel> {
        check_name("model", id)?;
        let dir = self.model_dir(id);
        if !dir.join("meta.json").exists() {
            return Err(ApiError::not_found("model", id));
        }
        let model = TrainedModel::from_json(&fs::read_to_string(dir.join("model.json"))?)?;
        Ok(StoredModel {
            meta: read_json(&dir.join("meta.json"))?,
            model,
            evaluation: read_json(&dir.join("evaluation.json"))?,
            importance: read_json(&dir.join("importance.json"))?,
            cohort: read_cohort(&dir.join("cohort.csv"))?,
        })
    }

    pub fn read_meta(&self, id: &str) -> ApiResult<ModelMeta> {
        check_name("model", id)?;
        let path = self.model_dir(id).join("meta.json");
        if !path.exists() {
            return Err(ApiError::not_found("model", id));
        }
        Ok(read_json(&path)?)
    }

    /// Appends one JSON line and syncs it to disk before returning.
    pub fn append_verdict(&self, entry: &VerdictEntry) -> ApiResult<()> {
        let line = serde_json::to_string(entry).map_err(|e| ApiError::internal(e.to_string()))?;
        let _guard = self.verdict_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut f = OpenOptions::new().create(true).append(true).open(self.verdict_path())?;
        f.write_all(format!("{line}\n").as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn read_verdicts(&self) -> ApiResult<Vec<VerdictEntry>> {
        let path = self.verdict_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let _guard = self.verdict_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = Vec::new();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| {
                ApiError::internal(format!("verdicts.jsonl line {}: {e}", i + 1))
            })?);
        }
        Ok(out)
    }
}

/// A completed model with its artifacts and training-cohort snapshot.
pub struct StoredModel {
    pub meta: ModelMeta,
    pub model: TrainedModel,
    pub evaluation: EvalReport,
    pub importance: ImportanceReport,
    pub cohort: Cohort,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_restricted() {
        for ok in ["rf", "cohort_v2", "a.b-c"] {
            assert!(check_name("x", ok).is_ok());
        }
        for bad in ["", "../x", ".hidden", "a/b", "sp ace", &"x".repeat(65)] {
            assert!(check_name("x", bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn verdict_log_appends_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let entry = |n: usize| VerdictEntry {
            timestamp: format!("t{n}"),
            case_id: format!("c{n}"),
            model_id: "m".into(),
            machine_verdict: Verdict::Inconclusive,
            clinician_verdict: ClinicianVerdict::Justify,
            note: "line\nbreak".into(),
        };
        for n in 0..3 {
            store.append_verdict(&entry(n)).unwrap();
        }
        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.read_verdicts().unwrap(), (0..3).map(entry).collect::<Vec<_>>());
    }
}
