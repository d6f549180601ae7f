//! The network face of layerloom: a REST API for importing and exporting
//! models, a WebSocket endpoint per shared model, export jobs on worker
//! threads, and durable storage.

pub mod config;
pub mod fetch;
pub mod file_store;
pub mod http;
pub mod jobs;

use std::sync::Arc;

use layerloom_collab::{Hub, MemoryStore, ModelStore, StoreError};
use layerloom_core::frontends::{export, ExportOptions};
use layerloom_core::layout::LayoutConfig;

pub use config::{ConfigError, ServiceConfig};
pub use file_store::FileStore;
pub use http::router;
pub use jobs::{ExportJob, ExportRequest, JobError, JobQueue, JobState, WorkerPool};

/// Shared server state.
pub struct App {
    pub hub: Arc<Hub>,
    pub jobs: Arc<dyn JobQueue>,
    pub config: ServiceConfig,
    pub layout: LayoutConfig,
}

impl App {
    /// Opens the configured store and starts the export workers.
    pub fn new(config: ServiceConfig) -> Result<Arc<App>, StoreError> {
        let store: Arc<dyn ModelStore> = match &config.store_path {
            Some(path) => Arc::new(FileStore::open(path)?),
            None => Arc::new(MemoryStore::new()),
        };
        Ok(Self::with_store(config, store))
    }

    pub fn with_store(config: ServiceConfig, store: Arc<dyn ModelStore>) -> Arc<App> {
        let hub = Arc::new(Hub::new(store));
        let exec_hub = hub.clone();
        let executor: jobs::Executor = Arc::new(move |r: &ExportRequest| {
            let model = exec_hub.replay(&r.model_id, r.version).map_err(|e| JobError {
                code: e.code().to_string(),
                message: e.to_string(),
                layer_id: None,
            })?;
            let options = if r.custom_layers { ExportOptions::with_custom_layers() } else { ExportOptions::default() };
            export(&model, r.target, &options).map_err(|e| JobError {
                code: e.code().to_string(),
                message: e.to_string(),
                layer_id: e.layer_id().map(str::to_string),
            })
        });
        let notify_hub = hub.clone();
        let notifier: jobs::Notifier = Arc::new(move |job: &ExportJob| {
            let view = serde_json::to_value(job).expect("job serializes");
            let _ = notify_hub.notify_job(&job.model_id, view);
        });
        let pool = WorkerPool::new(config.workers, config.job_retention, executor, notifier);
        Arc::new(App { hub, jobs: Arc::new(pool), config, layout: LayoutConfig::default() })
    }
}

/// Binds the configured address and serves until Ctrl-C. The bound
/// address is printed once listening, which matters when port 0 is
/// requested.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let app = App::new(config.clone()).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    println!("layerloom listening on http://{addr}");
    tracing::info!(%addr, workers = config.workers, store = ?config.store_path, "serving");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
