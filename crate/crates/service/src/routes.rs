use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{SecondsFormat, Utc};
use contesta_core::cohort::{Cohort, Demographics, EpisodeRecord, Feature, Label};
use contesta_core::global_explain::{pdp_1d, pdp_2d, DEFAULT_GRID_1D, DEFAULT_GRID_2D};
use contesta_core::io::parse_cohort_csv;
use contesta_core::local_explain::{contest, ContestReport, LatentSpaceConfig};
use contesta_core::models::metrics::{classify, DEFAULT_THRESHOLD};
use contesta_core::models::Classifier;
use contesta_core::pipeline::{run, RunConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::store::{check_name, ClinicianVerdict, CohortSummary, ModelMeta, StoredModel, VerdictEntry};
use crate::{AppState, JobState, JobStatus};

type AppRef = State<Arc<AppState>>;
type Params = Query<HashMap<String, String>>;

pub fn api() -> Router<Arc<AppState>> {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/cohorts", get(list_cohorts))
        .route("/cohorts/{name}", get(get_cohort).post(put_cohort))
        .route("/cases", get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/verdict", post(post_verdict))
        .route("/verdicts", get(list_verdicts))
        .route("/models", get(list_models).post(train_model))
        .route("/models/{id}", get(get_model_meta))
        .route("/models/{id}/status", get(job_status))
        .route("/models/{id}/evaluation", get(evaluation))
        .route("/models/{id}/importance", get(importance))
        .route("/models/{id}/pdp", get(pdp))
        .route("/models/{id}/contest/{case_id}", get(contest_case))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid("InvalidPayload", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    q.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| ApiError::invalid("InvalidParameter", format!("{key}='{v}': {e}")))
        })
        .transpose()
}

fn parse_feature(name: &str) -> ApiResult<Feature> {
    name.parse::<Feature>().map_err(ApiError::from)
}

async fn model(state: &Arc<AppState>, id: &str) -> ApiResult<Arc<StoredModel>> {
    if let Some(m) = state.models.read().unwrap_or_else(|p| p.into_inner()).get(id) {
        return Ok(m.clone());
    }
    let st = state.clone();
    let key = id.to_string();
    let loaded = Arc::new(blocking(move || st.store.read_model(&key)).await?);
    state
        .models
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id.to_string(), loaded.clone());
    Ok(loaded)
}

// ---- cohorts ----

async fn list_cohorts(State(state): AppRef) -> ApiResult<Json<Vec<CohortSummary>>> {
    blocking(move || {
        let store = &state.store;
        store
            .cohort_names()?
            .iter()
            .map(|n| Ok(CohortSummary::of(n, &store.read_cohort(n)?)))
            .collect::<ApiResult<Vec<_>>>()
            .map(Json)
    })
    .await
}

async fn get_cohort(State(state): AppRef, Path(name): Path<String>) -> ApiResult<Json<CohortSummary>> {
    blocking(move || Ok(Json(CohortSummary::of(&name, &state.store.read_cohort(&name)?)))).await
}

/// Stores a cohort CSV body; `?features=a,b,...` sets the active features.
async fn put_cohort(
    State(state): AppRef,
    Path(name): Path<String>,
    Query(q): Params,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<CohortSummary>)> {
    check_name("cohort", &name)?;
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::invalid("InvalidPayload", "body is not UTF-8"))?;
    let records = parse_cohort_csv(std::path::Path::new(&name), &text)?;
    let cohort = match q.get("features") {
        Some(list) => {
            let features = list
                .split(',')
                .filter(|s| !s.is_empty())
                .map(parse_feature)
                .collect::<ApiResult<Vec<_>>>()?;
            Cohort::with_features(records, features)?
        }
        None => Cohort::new(records)?,
    };
    blocking(move || {
        state.store.write_cohort(&name, &cohort)?;
        Ok((StatusCode::CREATED, Json(CohortSummary::of(&name, &cohort))))
    })
    .await
}

// ---- cases ----

#[derive(Debug, Serialize)]
struct Prediction {
    model: String,
    score: f64,
    label: Label,
}

#[derive(Debug, Serialize)]
struct CaseSummary {
    id: String,
    cohort: String,
    demographics: Demographics,
    label: Label,
    prediction: Option<Prediction>,
}

/// Every stored record once, the first cohort (by name) holding an id wins.
fn all_cases(state: &AppState) -> ApiResult<Vec<(String, EpisodeRecord)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for name in state.store.cohort_names()? {
        for r in state.store.read_cohort(&name)?.records() {
            if seen.insert(r.record_id.clone()) {
                out.push((name.clone(), r.clone()));
            }
        }
    }
    Ok(out)
}

fn find_case(state: &AppState, id: &str) -> ApiResult<(String, EpisodeRecord)> {
    all_cases(state)?
        .into_iter()
        .find(|(_, r)| r.record_id == id)
        .ok_or_else(|| ApiError::not_found("case", id))
}

fn latest_model_id(state: &AppState) -> ApiResult<Option<String>> {
    let mut best: Option<ModelMeta> = None;
    for id in state.store.model_ids()? {
        let meta = state.store.read_meta(&id)?;
        if best.as_ref().is_none_or(|b| (&meta.completed_at, &meta.id) > (&b.completed_at, &b.id)) {
            best = Some(meta);
        }
    }
    Ok(best.map(|m| m.id))
}

/// `?model=ID` picks the scoring model (default: most recently trained).
async fn list_cases(State(state): AppRef, Query(q): Params) -> ApiResult<Json<Vec<CaseSummary>>> {
    let st = state.clone();
    let requested = q.get("model").cloned();
    let (cases, model_id) = blocking(move || {
        let id = match requested {
            Some(id) => Some(id),
            None => latest_model_id(&st)?,
        };
        Ok((all_cases(&st)?, id))
    })
    .await?;
    let scorer = match &model_id {
        Some(id) => Some(model(&state, id).await?),
        None => None,
    };
    Ok(Json(
        cases
            .into_iter()
            .map(|(cohort, r)| CaseSummary {
                prediction: scorer.as_ref().map(|m| {
                    let score = m.model.score_record(&r);
                    Prediction {
                        model: m.meta.id.clone(),
                        score,
                        label: classify(score, DEFAULT_THRESHOLD),
                    }
                }),
                id: r.record_id,
                cohort,
                demographics: r.demographics,
                label: r.label,
            })
            .collect(),
    ))
}

async fn get_case(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let (cohort, record) = find_case(&state, &id)?;
        let features: BTreeMap<&str, f64> = Feature::ALL.iter().map(|f| (f.name(), f.value(&record))).collect();
        Ok(Json(json!({ "cohort": cohort, "record": record, "features": features })))
    })
    .await
}

// ---- models ----

#[derive(Debug, Deserialize)]
struct TrainRequest {
    name: String,
    cohort: String,
    #[serde(flatten)]
    config: RunConfig,
}

async fn train_model(State(state): AppRef, body: Bytes) -> ApiResult<(StatusCode, Json<JobStatus>)> {
    let req: TrainRequest = parse_json(&body)?;
    check_name("model", &req.name)?;
    check_name("cohort", &req.cohort)?;
    req.config.effective_spec().validate()?;
    if !(req.config.train_fraction > 0.0 && req.config.train_fraction < 1.0) {
        return Err(ApiError::invalid("InvalidParameter", "train_fraction must lie in (0, 1)"));
    }
    let st = state.clone();
    let cohort_name = req.cohort.clone();
    let cohort = blocking(move || st.store.read_cohort(&cohort_name)).await?;

    let status = {
        let mut jobs = state.jobs.lock().unwrap_or_else(|p| p.into_inner());
        if jobs.get(&req.name).is_some_and(|j| j.state == JobState::Running) {
            return Err(ApiError::conflict(format!("model '{}' is already training", req.name)));
        }
        let status = JobStatus {
            id: req.name.clone(),
            cohort: req.cohort.clone(),
            state: JobState::Running,
            submitted_at: now(),
            finished_at: None,
            error: None,
        };
        jobs.insert(req.name.clone(), status.clone());
        status
    };
    let _ = contesta_core::io::write_json(&state.store.job_path(&status.id), &status);

    let st = state.clone();
    let job = status.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = run(&cohort, &req.config).map_err(ApiError::from).and_then(|trained| {
            let meta = ModelMeta {
                id: req.name.clone(),
                cohort: req.cohort.clone(),
                config: req.config.clone(),
                split: trained.split.clone(),
                features: trained.model.feature_names.clone(),
                completed_at: now(),
            };
            st.store.write_model(&meta, &trained, &cohort)
        });
        st.models.write().unwrap_or_else(|p| p.into_inner()).remove(&job.id);
        let finished = JobStatus {
            state: if outcome.is_ok() { JobState::Succeeded } else { JobState::Failed },
            finished_at: Some(now()),
            error: outcome.err().map(|e| e.body),
            ..job
        };
        let _ = contesta_core::io::write_json(&st.store.job_path(&finished.id), &finished);
        st.jobs
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(finished.id.clone(), finished);
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn job_status(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    check_name("model", &id)?;
    if let Some(s) = state.jobs.lock().unwrap_or_else(|p| p.into_inner()).get(&id) {
        return Ok(Json(s.clone()));
    }
    blocking(move || {
        let path = state.store.job_path(&id);
        if path.exists() {
            let mut s: JobStatus = contesta_core::io::read_json(&path)?;
            // a job still marked running did not survive a restart
            if s.state == JobState::Running {
                s.state = if state.store.model_exists(&id) { JobState::Succeeded } else { JobState::Failed };
            }
            return Ok(Json(s));
        }
        Err(ApiError::not_found("model", &id))
    })
    .await
}

async fn list_models(State(state): AppRef) -> ApiResult<Json<Vec<ModelMeta>>> {
    blocking(move || {
        let store = &state.store;
        store.model_ids()?.iter().map(|id| store.read_meta(id)).collect::<ApiResult<Vec<_>>>().map(Json)
    })
    .await
}

async fn get_model_meta(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<ModelMeta>> {
    Ok(Json(model(&state, &id).await?.meta.clone()))
}

async fn evaluation(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let m = model(&state, &id).await?;
    Ok(Json(serde_json::to_value(&m.evaluation).map_err(|e| ApiError::internal(e.to_string()))?))
}

async fn importance(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let m = model(&state, &id).await?;
    Ok(Json(serde_json::to_value(&m.importance).map_err(|e| ApiError::internal(e.to_string()))?))
}

/// `?feature=F` gives a 1-D curve; adding `&static=S` gives the 2-D surface
/// of S against F. `&points=N` overrides the grid size.
async fn pdp(State(state): AppRef, Path(id): Path<String>, Query(q): Params) -> ApiResult<Json<Value>> {
    let feature = parse_feature(
        q.get("feature")
            .ok_or_else(|| ApiError::invalid("MissingParameter", "query parameter 'feature' is required"))?,
    )?;
    let static_feature = q.get("static").map(|s| parse_feature(s)).transpose()?;
    let points: Option<usize> = param(&q, "points")?;
    let m = model(&state, &id).await?;
    blocking(move || {
        let value = match static_feature {
            None => serde_json::to_value(pdp_1d(&m.model, feature, &m.cohort, points.unwrap_or(DEFAULT_GRID_1D))?),
            Some(s) => {
                let n = points.unwrap_or(DEFAULT_GRID_2D);
                serde_json::to_value(pdp_2d(&m.model, s, feature, &m.cohort, (n, n))?)
            }
        };
        value.map(Json).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await
}

/// Contest configuration from query parameters `k`, `w_ga`, `w_w`, `w_pna`,
/// `w_gen`, `cutoff` and `features` (comma list); defaults otherwise, with
/// panels on the model's two most important dynamic features.
fn contest_config(m: &StoredModel, q: &HashMap<String, String>) -> ApiResult<LatentSpaceConfig> {
    let mut cfg = LatentSpaceConfig::from_importance(&m.importance);
    if let Some(list) = q.get("features") {
        cfg.panel_features = list.split(',').filter(|s| !s.is_empty()).map(parse_feature).collect::<ApiResult<_>>()?;
    }
    if let Some(k) = param(q, "k")? {
        cfg.k = k;
    }
    if let Some(c) = param(q, "cutoff")? {
        cfg.overlap_cutoff = c;
    }
    for (key, slot) in [
        ("w_ga", &mut cfg.weights.ga),
        ("w_w", &mut cfg.weights.w),
        ("w_pna", &mut cfg.weights.pna),
        ("w_gen", &mut cfg.weights.gen),
    ] {
        if let Some(v) = param(q, key)? {
            *slot = v;
        }
    }
    Ok(cfg)
}

fn contest_report(state: &AppState, m: &StoredModel, case_id: &str, q: &HashMap<String, String>) -> ApiResult<ContestReport> {
    let query = match m.cohort.get(case_id) {
        Some(r) => r.clone(),
        None => find_case(state, case_id)?.1,
    };
    let cfg = contest_config(m, q)?;
    Ok(contest(&query, &m.model, &m.meta.id, &m.cohort, &cfg)?)
}

async fn contest_case(
    State(state): AppRef,
    Path((id, case_id)): Path<(String, String)>,
    Query(q): Params,
) -> ApiResult<Json<ContestReport>> {
    let m = model(&state, &id).await?;
    blocking(move || contest_report(&state, &m, &case_id, &q).map(Json)).await
}

// ---- verdicts ----

#[derive(Debug, Deserialize)]
struct VerdictRequest {
    model: String,
    verdict: ClinicianVerdict,
    #[serde(default)]
    note: String,
}

async fn post_verdict(
    State(state): AppRef,
    Path(case_id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<VerdictEntry>)> {
    let req: VerdictRequest = parse_json(&body)?;
    let m = model(&state, &req.model).await?;
    blocking(move || {
        let report = contest_report(&state, &m, &case_id, &HashMap::new())?;
        let entry = VerdictEntry {
            timestamp: now(),
            case_id,
            model_id: m.meta.id.clone(),
            machine_verdict: report.verdict,
            clinician_verdict: req.verdict,
            note: req.note,
        };
        state.store.append_verdict(&entry)?;
        Ok((StatusCode::CREATED, Json(entry)))
    })
    .await
}

async fn list_verdicts(State(state): AppRef) -> ApiResult<Json<Vec<VerdictEntry>>> {
    blocking(move || state.store.read_verdicts().map(Json)).await
}
