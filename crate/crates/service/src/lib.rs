//! HTTP service over the contesta pipeline.
//!
//! All routes live under `/api/v1`. Cohorts, models and explanations are
//! files under a data directory; clinician verdicts go to an append-only
//! JSON-lines log that is synced before each append is acknowledged.

pub mod error;
mod routes;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::Router;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::error::ErrorBody;
use crate::store::{Store, StoredModel};

pub const DEFAULT_PORT: u16 = 8080;
pub const API_BASE: &str = "/api/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Built UI assets served at `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("data"),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub cohort: String,
    pub state: JobState,
    pub submitted_at: String,
    pub finished_at: Option<String>,
    pub error: Option<ErrorBody>,
}

pub struct AppState {
    store: Store,
    jobs: Mutex<HashMap<String, JobStatus>>,
    models: RwLock<HashMap<String, Arc<StoredModel>>>,
}

impl AppState {
    pub fn open(config: &ServiceConfig) -> std::io::Result<Arc<Self>> {
        Ok(Arc::new(Self {
            store: Store::open(&config.data_dir)?,
            jobs: Mutex::new(HashMap::new()),
            models: RwLock::new(HashMap::new()),
        }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    let mut app = Router::new().nest(API_BASE, routes::api()).with_state(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::open(&config)?;
    let app = router(state, config.static_dir.clone());
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("contesta service listening on http://{}{API_BASE}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
