use std::env;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid value for {var}: {message}")]
pub struct ConfigError {
    pub var: &'static str,
    pub message: String,
}

/// Server settings. [`ServiceConfig::from_env`] reads them from
/// `LAYERLOOM_BIND`, `LAYERLOOM_WORKERS`, `LAYERLOOM_STORE` and
/// `LAYERLOOM_FETCH_LIMIT`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Export worker threads.
    pub workers: usize,
    /// Directory for the file store; in-memory when absent.
    pub store_path: Option<PathBuf>,
    /// Largest accepted model source, inline or fetched, in bytes.
    pub fetch_limit: u64,
    pub fetch_timeout: Duration,
    /// How long finished export jobs stay queryable.
    pub job_retention: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2).min(8),
            store_path: None,
            fetch_limit: 10 * 1024 * 1024,
            fetch_timeout: Duration::from_secs(20),
            job_retention: Duration::from_secs(24 * 3600),
        }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = ServiceConfig::default();
        if let Some(v) = get("LAYERLOOM_BIND") {
            config.bind = v.parse().map_err(|e| ConfigError { var: "LAYERLOOM_BIND", message: format!("{e}") })?;
        }
        if let Some(v) = get("LAYERLOOM_WORKERS") {
            config.workers = match v.parse::<usize>() {
                Ok(n) if n > 0 => n,
                _ => {
                    return Err(ConfigError {
                        var: "LAYERLOOM_WORKERS",
                        message: format!("expected a positive integer, got {v:?}"),
                    })
                }
            };
        }
        if let Some(v) = get("LAYERLOOM_STORE").filter(|v| !v.is_empty()) {
            config.store_path = Some(PathBuf::from(v));
        }
        if let Some(v) = get("LAYERLOOM_FETCH_LIMIT") {
            config.fetch_limit = v.parse().map_err(|_| ConfigError {
                var: "LAYERLOOM_FETCH_LIMIT",
                message: format!("expected a byte count, got {v:?}"),
            })?;
        }
        Ok(config)
    }
}
