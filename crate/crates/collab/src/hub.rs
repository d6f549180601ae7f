//! The server side: one serialization point per model, fan-out to the
//! model's sessions, and persistence through a [`ModelStore`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::Utc;
use layerloom_core::ir::IrModel;
use serde_json::Value;

use crate::event::{EventDraft, Payload, UpdateEvent};
use crate::protocol::{ClientMessage, ServerMessage};
use crate::session::Sequencer;
use crate::shared::{HistoryEntry, SharedModel, CHECKPOINT_INTERVAL};
use crate::store::{Comment, ModelRecord, ModelStore, WHOLE_MODEL};
use crate::CollabError;

pub type SessionId = u64;

/// Delivers a message to one session without blocking. Returns false once
/// the session is gone, which removes it from the model.
pub type Outbox = Box<dyn Fn(ServerMessage) -> bool + Send + Sync>;

struct Session {
    id: SessionId,
    user: String,
    sequencer: Sequencer,
    outbox: Outbox,
}

struct Room {
    record: ModelRecord,
    shared: SharedModel,
    sessions: Vec<Session>,
    next_comment: u64,
}

impl Room {
    fn send_all(&mut self, message: &ServerMessage) {
        self.sessions.retain_mut(|s| (s.outbox)(s.sequencer.stamp(message.clone())));
    }

    fn send_to(&mut self, session: SessionId, message: ServerMessage) {
        if let Some(i) = self.sessions.iter().position(|s| s.id == session) {
            let s = &mut self.sessions[i];
            if !(s.outbox)(s.sequencer.stamp(message)) {
                self.sessions.remove(i);
            }
        }
    }

    fn user(&self, session: SessionId) -> String {
        self.sessions.iter().find(|s| s.id == session).map(|s| s.user.clone()).unwrap_or_default()
    }
}

/// Owns every open shared model. Edits to one model are applied one at a
/// time under that model's lock; different models do not contend.
pub struct Hub {
    store: Arc<dyn ModelStore>,
    rooms: Mutex<HashMap<String, Arc<Mutex<Room>>>>,
    next_session: AtomicU64,
}

impl Hub {
    pub fn new(store: Arc<dyn ModelStore>) -> Self {
        Hub { store, rooms: Mutex::new(HashMap::new()), next_session: AtomicU64::new(1) }
    }

    pub fn store(&self) -> &Arc<dyn ModelStore> {
        &self.store
    }

    /// Registers a new model at version 0.
    pub fn create(&self, record: ModelRecord, initial: IrModel) -> Result<(), CollabError> {
        let mut rooms = self.rooms.lock().unwrap();
        if rooms.contains_key(&record.model_id) {
            return Err(CollabError::ModelExists(record.model_id));
        }
        self.store.create(&record, &initial)?;
        let id = record.model_id.clone();
        rooms.insert(
            id,
            Arc::new(Mutex::new(Room {
                record,
                shared: SharedModel::new(initial),
                sessions: Vec::new(),
                next_comment: 1,
            })),
        );
        Ok(())
    }

    /// Finds an open model or brings it back from the store.
    fn room(&self, model_id: &str) -> Result<Arc<Mutex<Room>>, CollabError> {
        let mut rooms = self.rooms.lock().unwrap();
        if let Some(room) = rooms.get(model_id) {
            return Ok(room.clone());
        }
        let stored = self.store.load(model_id)?.ok_or_else(|| CollabError::UnknownModel(model_id.into()))?;
        let shared = SharedModel::restore(stored.initial, stored.events, stored.checkpoints)?;
        let next_comment = self.store.comments(model_id)?.iter().map(|c| c.comment_id).max().unwrap_or(0) + 1;
        let room = Arc::new(Mutex::new(Room { record: stored.record, shared, sessions: Vec::new(), next_comment }));
        rooms.insert(model_id.to_string(), room.clone());
        Ok(room)
    }

    fn with_room<T>(&self, model_id: &str, f: impl FnOnce(&mut MutexGuard<'_, Room>) -> T) -> Result<T, CollabError> {
        let room = self.room(model_id)?;
        let mut guard = room.lock().unwrap();
        Ok(f(&mut guard))
    }

    pub fn exists(&self, model_id: &str) -> bool {
        self.room(model_id).is_ok()
    }

    pub fn record(&self, model_id: &str) -> Result<ModelRecord, CollabError> {
        self.with_room(model_id, |r| r.record.clone())
    }

    pub fn version(&self, model_id: &str) -> Result<u64, CollabError> {
        self.with_room(model_id, |r| r.shared.version())
    }

    /// Current model and version.
    pub fn snapshot(&self, model_id: &str) -> Result<(IrModel, u64), CollabError> {
        self.with_room(model_id, |r| (r.shared.current().clone(), r.shared.version()))
    }

    /// Adds a session and sends it a live snapshot.
    pub fn join(&self, model_id: &str, user: &str, outbox: Outbox) -> Result<SessionId, CollabError> {
        let id = self.next_session.fetch_add(1, Ordering::Relaxed);
        self.with_room(model_id, |r| {
            let mut session = Session { id, user: user.to_string(), sequencer: Sequencer::default(), outbox };
            let hello = ServerMessage::snapshot(r.shared.current(), r.shared.version(), true);
            if (session.outbox)(session.sequencer.stamp(hello)) {
                r.sessions.push(session);
            }
            id
        })
    }

    pub fn leave(&self, model_id: &str, session: SessionId) {
        let _ = self.with_room(model_id, |r| r.sessions.retain(|s| s.id != session));
    }

    pub fn session_count(&self, model_id: &str) -> usize {
        self.with_room(model_id, |r| r.sessions.len()).unwrap_or(0)
    }

    /// Applies an edit, persists it, then broadcasts it to every session.
    pub fn submit(&self, model_id: &str, draft: EventDraft) -> Result<UpdateEvent, CollabError> {
        let room = self.room(model_id)?;
        let mut r = room.lock().unwrap();
        let prepared = r.shared.prepare(draft, Utc::now())?;
        if prepared.is_logged() {
            self.store.append(model_id, &prepared.event)?;
        }
        let state = match prepared.event.payload {
            Payload::Revert { .. } => prepared.next_model().cloned(),
            _ => None,
        };
        let event = r.shared.commit(prepared);
        let version = r.shared.version();
        if event.event_id.is_some() && version % CHECKPOINT_INTERVAL == 0 {
            // The log already holds the event, so a failed checkpoint
            // costs only replay time.
            let _ = self.store.checkpoint(model_id, version, r.shared.current());
        }
        r.send_all(&ServerMessage::event(&event, version, state.as_ref()));
        Ok(event)
    }

    pub fn revert(&self, model_id: &str, author: &str, to_version: u64) -> Result<UpdateEvent, CollabError> {
        let base_version = self.with_room(model_id, |r| r.shared.version())?;
        let draft = EventDraft { payload: Payload::Revert { to_version }, author: author.to_string(), base_version };
        self.submit(model_id, draft)
    }

    pub fn replay(&self, model_id: &str, upto_version: u64) -> Result<IrModel, CollabError> {
        self.with_room(model_id, |r| r.shared.replay_plan(upto_version))??.run()
    }

    pub fn history(&self, model_id: &str) -> Result<Vec<HistoryEntry>, CollabError> {
        self.with_room(model_id, |r| r.shared.history())
    }

    /// Full ordered log, for tests and diagnostics.
    pub fn log(&self, model_id: &str) -> Result<Vec<UpdateEvent>, CollabError> {
        self.with_room(model_id, |r| r.shared.log().to_vec())
    }

    /// Stores a comment on a layer (or the whole model) and broadcasts
    /// it outside the versioned log.
    pub fn add_comment(&self, model_id: &str, author: &str, anchor: &str, text: &str) -> Result<Comment, CollabError> {
        let room = self.room(model_id)?;
        let mut r = room.lock().unwrap();
        if anchor != WHOLE_MODEL && !r.shared.current().contains(anchor) {
            return Err(CollabError::Ir(layerloom_core::ir::IrError::NotFound(format!("layer '{anchor}'"))));
        }
        let comment = Comment {
            comment_id: r.next_comment,
            anchor: anchor.to_string(),
            text: text.to_string(),
            author: author.to_string(),
            timestamp: Utc::now(),
            orphaned: false,
        };
        self.store.add_comment(model_id, &comment)?;
        r.next_comment += 1;
        let version = r.shared.version();
        r.send_all(&ServerMessage::comment(&comment, version));
        Ok(comment)
    }

    /// All comments, with `orphaned` set on those whose layer is gone.
    pub fn comments(&self, model_id: &str) -> Result<Vec<Comment>, CollabError> {
        let current = self.snapshot(model_id)?.0;
        let mut comments = self.store.comments(model_id)?;
        for c in &mut comments {
            c.orphaned = c.anchor != WHOLE_MODEL && !current.contains(&c.anchor);
        }
        Ok(comments)
    }

    /// Pushes a job notification to every session of a model.
    pub fn notify_job(&self, model_id: &str, job: Value) -> Result<(), CollabError> {
        self.with_room(model_id, |r| {
            let version = r.shared.version();
            r.send_all(&ServerMessage::job(job, version));
        })
    }

    /// Handles one message from a session. Failures are reported to that
    /// session only.
    pub fn handle(&self, model_id: &str, session: SessionId, message: ClientMessage) {
        let Ok(room) = self.room(model_id) else { return };
        let user = room.lock().unwrap().user(session);
        let result = match message {
            ClientMessage::Submit { payload, base_version } => {
                self.submit(model_id, EventDraft { payload, author: user, base_version }).map(drop)
            }
            ClientMessage::Revert { to_version } => self.revert(model_id, &user, to_version).map(drop),
            ClientMessage::Comment { anchor, text } => self.add_comment(model_id, &user, &anchor, &text).map(drop),
            ClientMessage::ReplayRequest { upto_version } => {
                let mut r = room.lock().unwrap();
                let version = r.shared.version();
                let reply = match upto_version {
                    None => Ok(ServerMessage::snapshot(r.shared.current(), version, true)),
                    Some(k) => r.shared.replay(k).map(|m| ServerMessage::snapshot(&m, k, false)),
                };
                reply.map(|m| r.send_to(session, m))
            }
        };
        if let Err(e) = result {
            let mut r = room.lock().unwrap();
            let version = r.shared.version();
            r.send_to(session, ServerMessage::error(&e, version));
        }
    }

    /// Parses and handles a raw text frame from a session.
    pub fn handle_text(&self, model_id: &str, session: SessionId, text: &str) {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(message) => self.handle(model_id, session, message),
            Err(e) => {
                let _ = self.with_room(model_id, |r| {
                    let version = r.shared.version();
                    r.send_to(session, ServerMessage::error(&CollabError::InvalidPayload(e.to_string()), version));
                });
            }
        }
    }
}
