use chrono::{DateTime, Utc};
use layerloom_core::ir::{Attach, Connection, IrError, IrLayer, IrModel, ParamValue};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CollabError;

/// What an event does. `Revert` is the composite event appended by a
/// revert; the other four are the editing events clients send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Sets `key` on a layer. A null value restores the schema default.
    /// The keys `position` (`[x, y]` or null) and `name` address the
    /// layer's canvas position and display name.
    ParamUpdate {
        layer_id: String,
        key: String,
        value: Value,
    },
    /// Adds a layer. Without `connections` it is wired from the deepest
    /// layer.
    LayerAdd {
        layer: IrLayer,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        connections: Option<Vec<Connection>>,
    },
    LayerDelete {
        layer_id: String,
    },
    /// Presence only: never logged and never changes the model.
    LayerHighlight {
        layer_id: String,
        #[serde(default = "yes")]
        active: bool,
    },
    Revert {
        to_version: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ParamUpdate,
    LayerAdd,
    LayerDelete,
    LayerHighlight,
    Revert,
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::ParamUpdate { .. } => EventKind::ParamUpdate,
            Payload::LayerAdd { .. } => EventKind::LayerAdd,
            Payload::LayerDelete { .. } => EventKind::LayerDelete,
            Payload::LayerHighlight { .. } => EventKind::LayerHighlight,
            Payload::Revert { .. } => EventKind::Revert,
        }
    }

    pub fn is_mutating(&self) -> bool {
        !matches!(self, Payload::LayerHighlight { .. })
    }

    /// One-line description for history listings.
    pub fn summary(&self) -> String {
        match self {
            Payload::ParamUpdate { layer_id, key, value } => format!("set {layer_id}.{key} = {value}"),
            Payload::LayerAdd { layer, .. } => format!("added {} '{}'", layer.layer_type, layer.id),
            Payload::LayerDelete { layer_id } => format!("deleted '{layer_id}'"),
            Payload::LayerHighlight { layer_id, active } => {
                format!("{} '{layer_id}'", if *active { "highlighted" } else { "unhighlighted" })
            }
            Payload::Revert { to_version } => format!("reverted to version {to_version}"),
        }
    }
}

/// An event as a client submits it, before the server orders it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDraft {
    #[serde(flatten)]
    pub payload: Payload,
    pub author: String,
    /// Last version the client had seen.
    #[serde(default)]
    pub base_version: u64,
}

/// An event after the server accepted it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    /// The model version this event produced; absent on highlights,
    /// which leave the version unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<u64>,
    #[serde(flatten)]
    pub payload: Payload,
    pub author: String,
    pub base_version: u64,
    pub timestamp: DateTime<Utc>,
}

fn layer_missing(id: &str) -> CollabError {
    CollabError::Ir(IrError::NotFound(format!("layer '{id}'")))
}

/// Applies an editing event to `model`. Reverts need the log and are
/// handled by the caller. On error `model` may be partly changed, so
/// callers work on a copy.
pub fn apply(model: &mut IrModel, payload: &Payload) -> Result<(), CollabError> {
    match payload {
        Payload::ParamUpdate { layer_id, key, value } => {
            if !model.contains(layer_id) {
                return Err(layer_missing(layer_id));
            }
            match (key.as_str(), value) {
                ("position", Value::Null) => model.set_position(layer_id, None)?,
                ("position", v) => {
                    let (x, y): (f64, f64) = serde_json::from_value(v.clone())
                        .map_err(|_| CollabError::InvalidPayload(format!("position must be [x, y], got {v}")))?;
                    model.set_position(layer_id, Some((x, y)))?;
                }
                ("name", v) => model.set_display_name(layer_id, v.as_str().unwrap_or_default())?,
                (key, Value::Null) => model.reset_param(layer_id, key)?,
                (key, v) => {
                    let value: ParamValue = serde_json::from_value(v.clone())
                        .map_err(|e| CollabError::InvalidPayload(format!("value for '{key}': {e}")))?;
                    model.update_param(layer_id, key, value)?;
                }
            }
        }
        Payload::LayerAdd { layer, connections } => {
            let attach = match connections {
                Some(list) => Attach::Explicit(list.clone()),
                None => Attach::Deepest,
            };
            model.add_layer(layer.clone(), attach)?;
        }
        Payload::LayerDelete { layer_id } => {
            model.delete_layer(layer_id)?;
        }
        Payload::LayerHighlight { layer_id, .. } => {
            if !model.contains(layer_id) {
                return Err(layer_missing(layer_id));
            }
        }
        Payload::Revert { .. } => {
            return Err(CollabError::InvalidPayload("revert is not a client event; send a revert action".into()))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use layerloom_core::ir::LayerType;
    use serde_json::json;

    fn model() -> IrModel {
        let mut m = IrModel::new("m");
        m.add_layer(IrLayer::new("data", LayerType::Input), Attach::Deepest).unwrap();
        m.add_layer(IrLayer::new("fc", LayerType::InnerProduct).with("num_output", 10.0), Attach::Deepest).unwrap();
        m
    }

    #[test]
    fn wire_format() {
        let draft: EventDraft = serde_json::from_value(json!({
            "kind": "param_update", "layer_id": "fc", "key": "num_output", "value": 20,
            "author": "ana", "base_version": 3
        }))
        .unwrap();
        assert_eq!(draft.payload.kind(), EventKind::ParamUpdate);
        let back = serde_json::to_value(&draft).unwrap();
        assert_eq!(back["kind"], "param_update");
        assert_eq!(back["author"], "ana");
    }

    #[test]
    fn param_update_and_reset() {
        let mut m = model();
        let set = Payload::ParamUpdate { layer_id: "fc".into(), key: "num_output".into(), value: json!(20) };
        apply(&mut m, &set).unwrap();
        assert_eq!(m.layer("fc").unwrap().number("num_output"), Some(20.0));
        let reset = Payload::ParamUpdate { layer_id: "fc".into(), key: "bias_term".into(), value: Value::Null };
        apply(&mut m, &reset).unwrap();
        let pos = Payload::ParamUpdate { layer_id: "fc".into(), key: "position".into(), value: json!([3.0, 4.5]) };
        apply(&mut m, &pos).unwrap();
        assert_eq!(m.layer("fc").unwrap().position, Some((3.0, 4.5)));
        let name = Payload::ParamUpdate { layer_id: "fc".into(), key: "name".into(), value: json!("classifier") };
        apply(&mut m, &name).unwrap();
        assert_eq!(m.layer("fc").unwrap().display_name, "classifier");
        assert!(m.has_connection("data", "fc"));
    }

    #[test]
    fn errors() {
        let mut m = model();
        let gone = Payload::ParamUpdate { layer_id: "x".into(), key: "num_output".into(), value: json!(1) };
        assert!(matches!(apply(&mut m, &gone), Err(CollabError::Ir(IrError::NotFound(_)))));
        let bad = Payload::ParamUpdate { layer_id: "fc".into(), key: "nope".into(), value: json!(1) };
        assert!(matches!(apply(&mut m, &bad), Err(CollabError::Ir(IrError::SchemaViolation { .. }))));
        let hl = Payload::LayerHighlight { layer_id: "fc".into(), active: true };
        let before = m.clone();
        apply(&mut m, &hl).unwrap();
        assert_eq!(m, before);
    }
}
