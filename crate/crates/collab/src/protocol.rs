//! JSON messages exchanged over a session stream.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::event::{Payload, UpdateEvent};
use crate::store::Comment;
use crate::CollabError;
use layerloom_core::ir::IrModel;

/// Client to server, tagged by `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ClientMessage {
    /// An editing event; the author is the session's user.
    Submit {
        #[serde(flatten)]
        payload: Payload,
        #[serde(default)]
        base_version: u64,
    },
    Comment {
        anchor: String,
        text: String,
    },
    Revert {
        to_version: u64,
    },
    /// Without a version: a fresh live snapshot (used after a detected
    /// gap). With one: a read-only view of that past version.
    ReplayRequest {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upto_version: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerMessageType {
    Event,
    Comment,
    Snapshot,
    Error,
    Job,
}

/// Server to client. `seq` counts messages per session from 1 so the
/// receiver can put them back in order and spot gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    #[serde(rename = "type")]
    pub kind: ServerMessageType,
    pub version: u64,
    #[serde(default)]
    pub seq: u64,
    pub payload: Value,
}

impl ServerMessage {
    pub fn new(kind: ServerMessageType, version: u64, payload: Value) -> Self {
        ServerMessage { kind, version, seq: 0, payload }
    }

    /// A logged event, or a highlight at the unchanged version. Reverts
    /// carry the resulting model under `state` since clients do not keep
    /// the log.
    pub fn event(event: &UpdateEvent, version: u64, state: Option<&IrModel>) -> Self {
        let mut payload = serde_json::to_value(event).expect("event serializes");
        if let Some(model) = state {
            payload["state"] = model.to_json_value();
        }
        Self::new(ServerMessageType::Event, version, payload)
    }

    /// `live` is false for replays of past versions, which a client shows
    /// but does not edit on top of.
    pub fn snapshot(model: &IrModel, version: u64, live: bool) -> Self {
        Self::new(ServerMessageType::Snapshot, version, json!({ "model": model.to_json_value(), "live": live }))
    }

    pub fn comment(comment: &Comment, version: u64) -> Self {
        Self::new(ServerMessageType::Comment, version, serde_json::to_value(comment).expect("comment serializes"))
    }

    pub fn error(error: &CollabError, version: u64) -> Self {
        Self::new(ServerMessageType::Error, version, json!({ "code": error.code(), "message": error.to_string() }))
    }

    pub fn job(job: Value, version: u64) -> Self {
        Self::new(ServerMessageType::Job, version, job)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_value(json!({
            "action": "submit", "kind": "layer_delete", "layer_id": "fc", "base_version": 4
        }))
        .unwrap();
        assert_eq!(
            m,
            ClientMessage::Submit { payload: Payload::LayerDelete { layer_id: "fc".into() }, base_version: 4 }
        );
        let r: ClientMessage = serde_json::from_str(r#"{"action":"replay_request"}"#).unwrap();
        assert_eq!(r, ClientMessage::ReplayRequest { upto_version: None });
        let c: ClientMessage =
            serde_json::from_str(r#"{"action":"comment","anchor":"whole-model","text":"hi"}"#).unwrap();
        assert!(matches!(c, ClientMessage::Comment { .. }));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"action":"shout"}"#).is_err());
    }

    #[test]
    fn server_message_shape() {
        let m = ServerMessage::error(&CollabError::UnknownModel("x".into()), 3);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["version"], 3);
        assert_eq!(v["payload"]["code"], "NotFound");
    }
}
