//! Shared editing of one model by many sessions. The server holds the
//! only authoritative copy, orders every edit into a dense per-model log
//! and broadcasts each accepted event to all sessions. Any version can be
//! rebuilt by folding the log, which is what history and revert use.

pub mod event;
pub mod hub;
pub mod protocol;
pub mod session;
pub mod shared;
pub mod sim;
pub mod store;

pub use event::{apply, EventDraft, EventKind, Payload, UpdateEvent};
pub use hub::{Hub, Outbox, SessionId};
pub use protocol::{ClientMessage, ServerMessage, ServerMessageType};
pub use session::{Reassembler, Replica, Sequencer};
pub use shared::{HistoryEntry, Prepared, ReplayPlan, SharedModel, CHECKPOINT_INTERVAL};
pub use store::{Comment, MemoryStore, ModelRecord, ModelStore, StoreError, StoredModel, WHOLE_MODEL};

use layerloom_core::ir::IrError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CollabError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("InvalidPayload: {0}")]
    InvalidPayload(String),
    #[error("VersionOutOfRange: {requested} (current version is {current})")]
    VersionOutOfRange { requested: u64, current: u64 },
    #[error("NotFound: model '{0}'")]
    UnknownModel(String),
    #[error("model '{0}' already exists")]
    ModelExists(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl CollabError {
    /// Short machine-readable name sent to clients.
    pub fn code(&self) -> &'static str {
        match self {
            CollabError::Ir(IrError::NotFound(_)) | CollabError::UnknownModel(_) => "NotFound",
            CollabError::Ir(IrError::SchemaViolation { .. }) => "SchemaViolation",
            CollabError::Ir(IrError::DuplicateConnection { .. }) => "DuplicateConnection",
            CollabError::Ir(IrError::DuplicateLayer(_)) => "DuplicateLayer",
            CollabError::Ir(_) | CollabError::InvalidPayload(_) => "InvalidPayload",
            CollabError::VersionOutOfRange { .. } => "VersionOutOfRange",
            CollabError::ModelExists(_) => "ModelExists",
            CollabError::Store(_) => "StoreError",
        }
    }
}
