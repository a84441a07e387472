//! Python bindings. Structured results cross the boundary as plain dicts
//! and lists decoded from the core crate's JSON forms.

use std::path::PathBuf;

use contesta_core::global_explain::{self, DEFAULT_PERMUTATIONS};
use contesta_core::local_explain::{self, LatentSpaceConfig};
use contesta_core::models::{self, Algorithm, Classifier, TrainedModel};
use contesta_core::pipeline::{self, RunConfig};
use contesta_core::signals::{self, DEFAULT_MAX_LAG_S};
use contesta_core::synth::{generate_cohort, SynthConfig};
use contesta_core::{io, vif, Feature, Label};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_error(e: contesta_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(format!("{}: {e}", e.code()))
    } else {
        PyOSError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn feature(name: &str) -> PyResult<Feature> {
    name.parse().map_err(value_error)
}

fn features(names: &[String]) -> PyResult<Vec<Feature>> {
    names.iter().map(|n| feature(n)).collect()
}

/// Records with extracted features, as read from a cohort CSV or generated.
#[pyclass(name = "Cohort", module = "contesta")]
#[derive(Clone)]
pub struct PyCohort {
    inner: contesta_core::Cohort,
}

#[pymethods]
impl PyCohort {
    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_cohort(&path).map_err(core_error)?,
        })
    }

    /// A seeded synthetic cohort, already extracted.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, n_per_class = 24, contrast = 1.0, max_lag_s = DEFAULT_MAX_LAG_S))]
    fn synthetic(seed: u64, n_per_class: usize, contrast: f64, max_lag_s: usize) -> PyResult<Self> {
        let config = SynthConfig {
            seed,
            n_per_class,
            illness_contrast: contrast,
            ..SynthConfig::default()
        };
        let synth = generate_cohort(&config).map_err(value_error)?;
        Ok(Self {
            inner: synth.to_cohort(max_lag_s).map_err(core_error)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        io::write_cohort(&path, &self.inner).map_err(core_error)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.active_features().iter().map(|f| f.name().to_string()).collect()
    }

    fn record_ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.record_id.clone()).collect()
    }

    /// 1 for LosNec, 0 for Healthy.
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().iter().map(|l| u8::from(*l == Label::LosNec)).collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let f = feature(name)?;
        Ok(self.inner.records().iter().map(|r| f.value(r)).collect())
    }

    /// Returns the pruned cohort and the removal log.
    #[pyo3(signature = (threshold = vif::DEFAULT_VIF_THRESHOLD))]
    fn prune(&self, py: Python<'_>, threshold: f64) -> PyResult<(Self, PyObject)> {
        let (pruned, log) = vif::prune_multicollinearity(&self.inner, threshold).map_err(value_error)?;
        Ok((Self { inner: pruned }, to_py(py, &log)?))
    }

    /// Stratified train/test split.
    #[pyo3(signature = (seed = 0, train_fraction = pipeline::DEFAULT_TRAIN_FRACTION))]
    fn split(&self, seed: u64, train_fraction: f64) -> PyResult<(Self, Self)> {
        let config = RunConfig {
            seed,
            train_fraction,
            ..RunConfig::default()
        };
        let (train, test) = pipeline::split(&self.inner, &config).map_err(core_error)?;
        Ok((Self { inner: train }, Self { inner: test }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Cohort({} records, {} LosNec, features={:?})",
            self.inner.len(),
            self.inner.count(Label::LosNec),
            self.features()
        )
    }
}

/// A trained classifier artifact.
#[pyclass(name = "Model", module = "contesta")]
pub struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    /// Cross-validated random search, then a refit on all of `train`.
    #[staticmethod]
    #[pyo3(signature = (train, algorithm = "rf", seed = 0))]
    fn train(py: Python<'_>, train: &PyCohort, algorithm: &str, seed: u64) -> PyResult<Self> {
        let algorithm: Algorithm = algorithm.parse().map_err(PyValueError::new_err)?;
        let spec = RunConfig::new(algorithm, seed).effective_spec();
        let data = train.inner.clone();
        let inner = py.allow_threads(|| models::fit(&spec, &data)).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::from_json(text).map_err(core_error)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn algorithm(&self) -> String {
        self.inner.spec.algorithm.to_string()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features().iter().map(|f| f.name().to_string()).collect()
    }

    /// Probability of LosNec per record.
    fn predict_proba(&self, cohort: &PyCohort) -> Vec<f64> {
        cohort.inner.records().iter().map(|r| self.inner.predict_proba(r)).collect()
    }

    #[pyo3(signature = (test, threshold = models::metrics::DEFAULT_THRESHOLD))]
    fn evaluate(&self, py: Python<'_>, test: &PyCohort, threshold: f64) -> PyResult<PyObject> {
        let report = models::evaluate(&self.inner, &test.inner, threshold).map_err(value_error)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (cohort, permutations = DEFAULT_PERMUTATIONS, seed = 0))]
    fn importance(&self, py: Python<'_>, cohort: &PyCohort, permutations: usize, seed: u64) -> PyResult<PyObject> {
        let report = global_explain::permutation_importance(&self.inner, &cohort.inner, permutations, seed).map_err(value_error)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (feature_name, cohort, grid_points = global_explain::DEFAULT_GRID_1D))]
    fn pdp(&self, py: Python<'_>, feature_name: &str, cohort: &PyCohort, grid_points: usize) -> PyResult<PyObject> {
        let curve = global_explain::pdp_1d(&self.inner, feature(feature_name)?, &cohort.inner, grid_points).map_err(value_error)?;
        to_py(py, &curve)
    }

    #[pyo3(signature = (static_feature, dynamic_feature, cohort, grid_points = global_explain::DEFAULT_GRID_2D))]
    fn pdp2d(
        &self,
        py: Python<'_>,
        static_feature: &str,
        dynamic_feature: &str,
        cohort: &PyCohort,
        grid_points: usize,
    ) -> PyResult<PyObject> {
        let surface = global_explain::pdp_2d(
            &self.inner,
            feature(static_feature)?,
            feature(dynamic_feature)?,
            &cohort.inner,
            (grid_points, grid_points),
        )
        .map_err(value_error)?;
        to_py(py, &surface)
    }

    /// Neighbour panels and a justify/contest/inconclusive verdict for one
    /// record of `cohort`, against the rest of it. Without `features` the
    /// panels use the two most important dynamic features.
    #[pyo3(signature = (cohort, record_id, features = None, k = local_explain::DEFAULT_K, overlap_cutoff = local_explain::DEFAULT_OVERLAP_CUTOFF, seed = 0))]
    fn contest(
        &self,
        py: Python<'_>,
        cohort: &PyCohort,
        record_id: &str,
        features: Option<Vec<String>>,
        k: usize,
        overlap_cutoff: f64,
        seed: u64,
    ) -> PyResult<PyObject> {
        let query = cohort
            .inner
            .get(record_id)
            .ok_or_else(|| PyValueError::new_err(format!("no record '{record_id}' in cohort")))?;
        let mut config = match features {
            Some(names) => LatentSpaceConfig::new(self::features(&names)?),
            None => {
                let report = global_explain::permutation_importance(&self.inner, &cohort.inner, DEFAULT_PERMUTATIONS, seed)
                    .map_err(value_error)?;
                LatentSpaceConfig::from_importance(&report)
            }
        };
        config.k = k;
        config.overlap_cutoff = overlap_cutoff;
        let name = self.algorithm();
        let report = local_explain::contest(query, &self.inner, &name, &cohort.inner, &config).map_err(value_error)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Model({}, features={:?})", self.algorithm(), self.features())
    }
}

/// Maximum signed lagged cross-correlation of z-scored HR and SpO2.
#[pyfunction]
#[pyo3(signature = (hr, spo2, max_lag_s = DEFAULT_MAX_LAG_S))]
fn max_cross_correlation(hr: Vec<f64>, spo2: Vec<f64>, max_lag_s: usize) -> PyResult<f64> {
    signals::max_cross_correlation(&hr, &spo2, max_lag_s).map_err(value_error)
}

/// Ratio of deceleration to acceleration mass of an HR series.
#[pyfunction]
fn sample_asymmetry(hr: Vec<f64>) -> PyResult<f64> {
    signals::sample_asymmetry(&hr).map_err(value_error)
}

/// Rank AUC with ties at half credit; labels are 1 for LosNec.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let labels: Vec<Label> = labels.iter().map(|&l| if l == 0 { Label::Healthy } else { Label::LosNec }).collect();
    Ok(models::auc(&scores, &labels))
}

/// Extract a cohort from an epoch manifest and demographics CSV.
#[pyfunction]
#[pyo3(signature = (manifest, demographics = None, max_lag_s = DEFAULT_MAX_LAG_S))]
fn extract(manifest: PathBuf, demographics: Option<PathBuf>, max_lag_s: usize) -> PyResult<PyCohort> {
    let demographics = demographics.unwrap_or_else(|| contesta_core::extract::default_demographics_path(&manifest));
    Ok(PyCohort {
        inner: contesta_core::extract::extract_cohort(&manifest, &demographics, max_lag_s).map_err(core_error)?,
    })
}

#[pymodule]
pub fn contesta(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCohort>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(max_cross_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(sample_asymmetry, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    Ok(())
}
