//! Ordering helpers for session streams and a client-side replica.

use std::collections::BTreeMap;

use layerloom_core::ir::IrModel;

use crate::event::{apply, Payload, UpdateEvent};
use crate::protocol::{ServerMessage, ServerMessageType};
use crate::CollabError;

/// Stamps outgoing messages with consecutive sequence numbers.
#[derive(Debug, Default)]
pub struct Sequencer {
    last: u64,
}

impl Sequencer {
    pub fn stamp(&mut self, mut message: ServerMessage) -> ServerMessage {
        self.last += 1;
        message.seq = self.last;
        message
    }
}

/// Restores sequence order on the receiving side of a transport that
/// may reorder or duplicate messages.
#[derive(Debug)]
pub struct Reassembler {
    next: u64,
    pending: BTreeMap<u64, ServerMessage>,
    duplicates: u64,
}

impl Default for Reassembler {
    fn default() -> Self {
        Reassembler { next: 1, pending: BTreeMap::new(), duplicates: 0 }
    }
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts one message and returns every message now deliverable in
    /// order. Anything already delivered or already buffered is dropped.
    pub fn accept(&mut self, message: ServerMessage) -> Vec<ServerMessage> {
        if message.seq < self.next || self.pending.contains_key(&message.seq) {
            self.duplicates += 1;
            return Vec::new();
        }
        self.pending.insert(message.seq, message);
        let mut ready = Vec::new();
        while let Some(m) = self.pending.remove(&self.next) {
            ready.push(m);
            self.next += 1;
        }
        ready
    }

    /// True while a later message is waiting on a missing earlier one.
    pub fn has_gap(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn delivered(&self) -> u64 {
        self.next - 1
    }

    pub fn duplicates_dropped(&self) -> u64 {
        self.duplicates
    }
}

/// A client's copy of the model, kept current by applying server
/// messages in order.
#[derive(Debug, Clone, Default)]
pub struct Replica {
    model: Option<IrModel>,
    version: u64,
    /// Set when an event arrived that does not follow the held version;
    /// the replica then waits for a fresh snapshot.
    stale: bool,
}

impl Replica {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn model(&self) -> Option<&IrModel> {
        self.model.as_ref()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    /// Applies one in-order server message. Returns true if the model
    /// changed.
    pub fn receive(&mut self, message: &ServerMessage) -> Result<bool, CollabError> {
        match message.kind {
            ServerMessageType::Snapshot => {
                if message.payload["live"] == false {
                    return Ok(false);
                }
                let model = IrModel::from_json_value(message.payload["model"].clone())?;
                self.model = Some(model);
                self.version = message.version;
                self.stale = false;
                Ok(true)
            }
            ServerMessageType::Event => {
                let Some(model) = self.model.as_mut() else { return Ok(false) };
                if self.stale {
                    return Ok(false);
                }
                let event: UpdateEvent = serde_json::from_value(message.payload.clone())
                    .map_err(|e| CollabError::InvalidPayload(e.to_string()))?;
                let Some(id) = event.event_id else { return Ok(false) };
                if id <= self.version {
                    return Ok(false);
                }
                if id != self.version + 1 {
                    self.stale = true;
                    return Ok(false);
                }
                match event.payload {
                    Payload::Revert { .. } => {
                        *model = IrModel::from_json_value(message.payload["state"].clone())?;
                    }
                    ref payload => apply(model, payload)?,
                }
                self.version = id;
                Ok(true)
            }
            _ => Ok(false),
        }
    }
}
