use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use layerloom_core::ir::{Framework, IrModel};
use serde::{Deserialize, Serialize};

use crate::event::UpdateEvent;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O failed: {0}")]
    Io(String),
    #[error("stored data is corrupt: {0}")]
    Corrupt(String),
    #[error("model '{0}' is not in the store")]
    Missing(String),
    #[error("model '{0}' is already in the store")]
    Exists(String),
}

/// Metadata kept alongside each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    /// Format the model was imported from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Framework>,
    pub created_at: DateTime<Utc>,
}

/// Comment anchor meaning the model as a whole rather than one layer.
pub const WHOLE_MODEL: &str = "whole-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: u64,
    /// A layer id, or [`WHOLE_MODEL`].
    pub anchor: String,
    pub text: String,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    /// Set when listing: the anchored layer no longer exists.
    #[serde(default)]
    pub orphaned: bool,
}

/// Everything needed to bring a model back after a restart.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub record: ModelRecord,
    pub initial: IrModel,
    pub events: Vec<UpdateEvent>,
    pub checkpoints: BTreeMap<u64, IrModel>,
}

/// Persistence for shared models, their logs, comments and share links.
/// An `append` that returned `Ok` must survive a crash.
pub trait ModelStore: Send + Sync {
    fn create(&self, record: &ModelRecord, initial: &IrModel) -> Result<(), StoreError>;
    fn append(&self, model_id: &str, event: &UpdateEvent) -> Result<(), StoreError>;
    fn checkpoint(&self, model_id: &str, version: u64, model: &IrModel) -> Result<(), StoreError>;
    fn load(&self, model_id: &str) -> Result<Option<StoredModel>, StoreError>;
    fn list(&self) -> Result<Vec<String>, StoreError>;
    fn add_comment(&self, model_id: &str, comment: &Comment) -> Result<(), StoreError>;
    fn comments(&self, model_id: &str) -> Result<Vec<Comment>, StoreError>;
    /// Stores `token` for the model unless it already has one, and
    /// returns whichever token is now on record.
    fn put_share(&self, model_id: &str, token: &str) -> Result<String, StoreError>;
    fn share_of(&self, model_id: &str) -> Result<Option<String>, StoreError>;
    fn resolve_share(&self, token: &str) -> Result<Option<String>, StoreError>;
}

#[derive(Default)]
struct MemoryInner {
    models: BTreeMap<String, StoredModel>,
    comments: HashMap<String, Vec<Comment>>,
    shares: HashMap<String, String>,
    tokens: HashMap<String, String>,
}

/// Keeps everything in process memory; for tests and throwaway servers.
#[derive(Default)]
pub struct MemoryStore {
    inner: Mutex<MemoryInner>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ModelStore for MemoryStore {
    fn create(&self, record: &ModelRecord, initial: &IrModel) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.models.contains_key(&record.model_id) {
            return Err(StoreError::Exists(record.model_id.clone()));
        }
        inner.models.insert(
            record.model_id.clone(),
            StoredModel {
                record: record.clone(),
                initial: initial.clone(),
                events: Vec::new(),
                checkpoints: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn append(&self, model_id: &str, event: &UpdateEvent) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let stored = inner.models.get_mut(model_id).ok_or_else(|| StoreError::Missing(model_id.into()))?;
        stored.events.push(event.clone());
        Ok(())
    }

    fn checkpoint(&self, model_id: &str, version: u64, model: &IrModel) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let stored = inner.models.get_mut(model_id).ok_or_else(|| StoreError::Missing(model_id.into()))?;
        stored.checkpoints.insert(version, model.clone());
        Ok(())
    }

    fn load(&self, model_id: &str) -> Result<Option<StoredModel>, StoreError> {
        Ok(self.inner.lock().unwrap().models.get(model_id).cloned())
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.inner.lock().unwrap().models.keys().cloned().collect())
    }

    fn add_comment(&self, model_id: &str, comment: &Comment) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        if !inner.models.contains_key(model_id) {
            return Err(StoreError::Missing(model_id.into()));
        }
        inner.comments.entry(model_id.to_string()).or_default().push(comment.clone());
        Ok(())
    }

    fn comments(&self, model_id: &str) -> Result<Vec<Comment>, StoreError> {
        Ok(self.inner.lock().unwrap().comments.get(model_id).cloned().unwrap_or_default())
    }

    fn put_share(&self, model_id: &str, token: &str) -> Result<String, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(existing) = inner.shares.get(model_id) {
            return Ok(existing.clone());
        }
        if inner.tokens.contains_key(token) {
            return Err(StoreError::Exists(format!("share token {token}")));
        }
        inner.shares.insert(model_id.to_string(), token.to_string());
        inner.tokens.insert(token.to_string(), model_id.to_string());
        Ok(token.to_string())
    }

    fn share_of(&self, model_id: &str) -> Result<Option<String>, StoreError> {
        Ok(self.inner.lock().unwrap().shares.get(model_id).cloned())
    }

    fn resolve_share(&self, token: &str) -> Result<Option<String>, StoreError> {
        Ok(self.inner.lock().unwrap().tokens.get(token).cloned())
    }
}
