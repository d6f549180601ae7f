use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::catalog::{Arity, LayerSpec, LayerType, ParamKind, ParamSchema};
use super::graph::GraphIndex;
use super::shape::{declared_input_shapes, infer_shapes_lenient};
use super::value::ParamValue;
use super::IrError;

/// Version of the on-disk model document.
pub const FORMAT_VERSION: u32 = 1;

/// A directed edge between two layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct Connection {
    pub from: String,
    pub to: String,
}

impl Connection {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Connection { from: from.into(), to: to.into() }
    }
}

impl From<(String, String)> for Connection {
    fn from((from, to): (String, String)) -> Self {
        Connection { from, to }
    }
}

impl From<Connection> for (String, String) {
    fn from(c: Connection) -> Self {
        (c.from, c.to)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrLayer {
    pub id: String,
    pub layer_type: LayerType,
    pub display_name: String,
    /// Explicitly set parameters; anything absent takes the schema default.
    pub params: BTreeMap<String, ParamValue>,
    pub position: Option<(f64, f64)>,
}

impl IrLayer {
    pub fn new(id: impl Into<String>, layer_type: LayerType) -> Self {
        IrLayer { id: id.into(), layer_type, display_name: String::new(), params: BTreeMap::new(), position: None }
    }

    pub fn with(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn spec(&self) -> &'static LayerSpec {
        self.layer_type.spec()
    }

    /// The explicit value of `key`, falling back to the schema default.
    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.params.get(key).or_else(|| self.spec().param(key).and_then(|p| p.default.as_ref()))
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(ParamValue::as_number)
    }

    pub fn ints(&self, key: &str) -> Option<&[i64]> {
        self.get(key).and_then(ParamValue::as_ints)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(ParamValue::as_text)
    }

    pub fn flag(&self, key: &str) -> bool {
        self.get(key).and_then(ParamValue::as_bool).unwrap_or(false)
    }

    pub fn label(&self) -> &str {
        if self.display_name.is_empty() {
            &self.id
        } else {
            &self.display_name
        }
    }

    /// Number of spatial dimensions implied by the kernel, if any.
    pub fn spatial_rank(&self) -> Option<usize> {
        self.params.get("kernel").and_then(ParamValue::as_ints).map(<[i64]>::len)
    }

    /// Checks `value` against the schema entry for `key` (type, arity,
    /// select options). Ranges are left to [`validate`](super::validate).
    pub fn check_param(&self, key: &str, value: &ParamValue) -> Result<(), String> {
        let Some(schema) = self.spec().param(key) else {
            return Err(format!("{} has no parameter '{key}'", self.layer_type));
        };
        check_type(schema, value)
    }
}

fn check_type(schema: &ParamSchema, value: &ParamValue) -> Result<(), String> {
    let key = schema.key;
    match (schema.kind, schema.arity, value) {
        (ParamKind::Number, Arity::Scalar, ParamValue::Number(x)) => {
            if !x.is_finite() {
                return Err(format!("'{key}' must be finite"));
            }
            if schema.integer && x.fract() != 0.0 {
                return Err(format!("'{key}' must be an integer, got {x}"));
            }
            Ok(())
        }
        (ParamKind::Number, Arity::PerDim, ParamValue::Ints(v)) => {
            if (1..=3).contains(&v.len()) {
                Ok(())
            } else {
                Err(format!("'{key}' needs 1 to 3 entries, got {}", v.len()))
            }
        }
        (ParamKind::Number, Arity::Dims, ParamValue::Ints(v)) => {
            if (1..=4).contains(&v.len()) {
                Ok(())
            } else {
                Err(format!("'{key}' needs 1 to 4 entries, got {}", v.len()))
            }
        }
        (ParamKind::Checkbox, _, ParamValue::Bool(_)) => Ok(()),
        (ParamKind::Text, _, ParamValue::Text(_)) => Ok(()),
        (ParamKind::Select(options), _, ParamValue::Text(s)) => {
            if options.contains(&s.as_str()) {
                Ok(())
            } else {
                Err(format!("'{key}' must be one of {options:?}, got {s:?}"))
            }
        }
        (_, _, v) => Err(format!("'{key}' cannot hold a {}", v.kind_name())),
    }
}

/// Where a newly added layer gets wired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attach {
    /// Connect from the deepest layer of the current graph.
    Deepest,
    /// Add exactly these connections (possibly none).
    Explicit(Vec<Connection>),
}

/// A model graph: named layers in insertion order plus directed connections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IrModel {
    pub name: String,
    layers: IndexMap<String, IrLayer>,
    connections: Vec<Connection>,
}

impl IrModel {
    pub fn new(name: impl Into<String>) -> Self {
        IrModel { name: name.into(), ..Default::default() }
    }

    /// Assembles a model without checking connections; run
    /// [`validate`](super::validate) to find problems.
    pub fn from_parts(
        name: impl Into<String>,
        layers: Vec<IrLayer>,
        connections: Vec<Connection>,
    ) -> Result<Self, IrError> {
        let mut map = IndexMap::with_capacity(layers.len());
        for layer in layers {
            if map.contains_key(&layer.id) {
                return Err(IrError::DuplicateLayer(layer.id));
            }
            map.insert(layer.id.clone(), layer);
        }
        Ok(IrModel { name: name.into(), layers: map, connections })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> impl ExactSizeIterator<Item = &IrLayer> + '_ {
        self.layers.values()
    }

    pub fn layer(&self, id: &str) -> Option<&IrLayer> {
        self.layers.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.layers.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.layers.get_index_of(id)
    }

    pub(crate) fn layer_mut(&mut self, id: &str) -> Option<&mut IrLayer> {
        self.layers.get_mut(id)
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn has_connection(&self, from: &str, to: &str) -> bool {
        self.connections.iter().any(|c| c.from == from && c.to == to)
    }

    /// Parents of `id` in connection declaration order.
    pub fn parents(&self, id: &str) -> Vec<&str> {
        self.connections.iter().filter(|c| c.to == id).map(|c| c.from.as_str()).collect()
    }

    pub fn children(&self, id: &str) -> Vec<&str> {
        self.connections.iter().filter(|c| c.from == id).map(|c| c.to.as_str()).collect()
    }

    /// A fresh id of the form `{prefix}{n}` not yet used in the model.
    pub fn fresh_id(&self, prefix: &str) -> String {
        (1..).map(|n| format!("{prefix}{n}")).find(|id| !self.layers.contains_key(id)).expect("unbounded id space")
    }

    /// The layer of maximum depth that can feed another layer; ties go to
    /// the earliest inserted.
    pub fn deepest_layer(&self) -> Option<&str> {
        let index = GraphIndex::new(self);
        let depths = index.depths();
        let mut best: Option<(usize, usize)> = None;
        for (i, layer) in self.layers.values().enumerate() {
            if !layer.spec().produces_outputs() {
                continue;
            }
            if best.is_none_or(|(_, d)| depths[i] > d) {
                best = Some((i, depths[i]));
            }
        }
        best.map(|(i, _)| self.layers.get_index(i).unwrap().0.as_str())
    }

    pub fn add_layer(&mut self, layer: IrLayer, attach: Attach) -> Result<(), IrError> {
        if layer.id.is_empty() {
            return Err(IrError::SchemaViolation {
                layer_id: String::new(),
                message: "layer id must not be empty".into(),
            });
        }
        if self.layers.contains_key(&layer.id) {
            return Err(IrError::DuplicateLayer(layer.id));
        }
        for (key, value) in &layer.params {
            layer
                .check_param(key, value)
                .map_err(|message| IrError::SchemaViolation { layer_id: layer.id.clone(), message })?;
        }
        let connections = match attach {
            Attach::Deepest => match self.deepest_layer() {
                Some(parent) if layer.spec().accepts_inputs() => {
                    vec![Connection::new(parent, layer.id.clone())]
                }
                _ => Vec::new(),
            },
            Attach::Explicit(list) => list,
        };
        let id = layer.id.clone();
        let mark = self.connections.len();
        self.layers.insert(id.clone(), layer);
        for c in connections {
            if let Err(e) = self.connect(&c.from, &c.to) {
                self.connections.truncate(mark);
                self.layers.shift_remove(&id);
                return Err(e);
            }
        }
        Ok(())
    }

    /// Removes a layer and every connection touching it. Neighbours are
    /// not re-linked.
    pub fn delete_layer(&mut self, id: &str) -> Result<IrLayer, IrError> {
        let layer = self.layers.shift_remove(id).ok_or_else(|| IrError::NotFound(format!("layer '{id}'")))?;
        self.connections.retain(|c| c.from != id && c.to != id);
        Ok(layer)
    }

    pub fn update_param(&mut self, id: &str, key: &str, value: ParamValue) -> Result<(), IrError> {
        let layer = self.layers.get_mut(id).ok_or_else(|| IrError::NotFound(format!("layer '{id}'")))?;
        layer
            .check_param(key, &value)
            .map_err(|message| IrError::SchemaViolation { layer_id: id.to_string(), message })?;
        layer.params.insert(key.to_string(), value);
        Ok(())
    }

    /// Drops an explicit value so the schema default applies again.
    pub fn reset_param(&mut self, id: &str, key: &str) -> Result<(), IrError> {
        let layer = self.layers.get_mut(id).ok_or_else(|| IrError::NotFound(format!("layer '{id}'")))?;
        if layer.spec().param(key).is_none() {
            return Err(IrError::SchemaViolation {
                layer_id: id.to_string(),
                message: format!("{} has no parameter '{key}'", layer.layer_type),
            });
        }
        layer.params.remove(key);
        Ok(())
    }

    pub fn set_display_name(&mut self, id: &str, name: impl Into<String>) -> Result<(), IrError> {
        let layer = self.layers.get_mut(id).ok_or_else(|| IrError::NotFound(format!("layer '{id}'")))?;
        layer.display_name = name.into();
        Ok(())
    }

    pub fn set_position(&mut self, id: &str, position: Option<(f64, f64)>) -> Result<(), IrError> {
        let layer = self.layers.get_mut(id).ok_or_else(|| IrError::NotFound(format!("layer '{id}'")))?;
        if let Some((x, y)) = position {
            if !x.is_finite() || !y.is_finite() {
                return Err(IrError::SchemaViolation {
                    layer_id: id.to_string(),
                    message: "position must be finite".into(),
                });
            }
        }
        layer.position = position;
        Ok(())
    }

    pub fn connect(&mut self, from: &str, to: &str) -> Result<(), IrError> {
        let source = self.layers.get(from).ok_or_else(|| IrError::NotFound(format!("layer '{from}'")))?;
        let target = self.layers.get(to).ok_or_else(|| IrError::NotFound(format!("layer '{to}'")))?;
        if self.has_connection(from, to) {
            return Err(IrError::DuplicateConnection { from: from.into(), to: to.into() });
        }
        if !source.spec().produces_outputs() {
            return Err(IrError::SchemaViolation {
                layer_id: from.into(),
                message: format!("{} layers have no outputs", source.layer_type),
            });
        }
        let spec = target.spec();
        if !spec.accepts_inputs() {
            return Err(IrError::SchemaViolation {
                layer_id: to.into(),
                message: format!("{} layers accept no inputs", target.layer_type),
            });
        }
        if let Some(max) = spec.max_inputs {
            let current = self.connections.iter().filter(|c| c.to == to).count();
            if current >= max {
                return Err(IrError::SchemaViolation {
                    layer_id: to.into(),
                    message: format!("{} layers take at most {max} input(s)", target.layer_type),
                });
            }
        }
        self.connections.push(Connection::new(from, to));
        Ok(())
    }

    pub fn disconnect(&mut self, from: &str, to: &str) -> Result<(), IrError> {
        let pos = self
            .connections
            .iter()
            .position(|c| c.from == from && c.to == to)
            .ok_or_else(|| IrError::NotFound(format!("connection {from} -> {to}")))?;
        self.connections.remove(pos);
        Ok(())
    }

    /// Drops explicit params equal to their defaults and spreads one-entry
    /// per-dimension lists over the kernel rank, so equivalent models
    /// compare equal.
    pub fn canonicalize(&self) -> IrModel {
        let mut out = self.clone();
        // Where the kernel leaves the rank open, the input shape settles it.
        let shapes = infer_shapes_lenient(self, &declared_input_shapes(self));
        let index = GraphIndex::new(self);
        let input_rank = |i: usize| {
            let p = *index.parents_of(i).first()?;
            shapes.get(index.id(p)).and_then(|s| s.rank().checked_sub(1)).filter(|&r| r > 0)
        };
        for (i, layer) in out.layers.values_mut().enumerate() {
            let spec = layer.spec();
            let rank = layer.spatial_rank().filter(|&r| r > 1).or_else(|| input_rank(i)).or(layer.spatial_rank());
            let mut params = BTreeMap::new();
            for (key, value) in std::mem::take(&mut layer.params) {
                let Some(schema) = spec.param(&key) else {
                    params.insert(key, value);
                    continue;
                };
                if schema.is_default(&value) {
                    continue;
                }
                let value = match (schema.arity, value, rank) {
                    (Arity::PerDim, ParamValue::Ints(v), Some(n)) if v.len() == 1 && n > 1 => {
                        ParamValue::Ints(vec![v[0]; n])
                    }
                    (_, v, _) => v,
                };
                params.insert(key, value);
            }
            layer.params = params;
        }
        out
    }

    /// Canonical JSON document (compact).
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Document::from(self)).expect("model serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&Document::from(self)).expect("model serializes")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(Document::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<IrModel, IrError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| IrError::MalformedDocument(e.to_string()))?;
        doc.try_into()
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<IrModel, IrError> {
        let doc: Document = serde_json::from_value(value).map_err(|e| IrError::MalformedDocument(e.to_string()))?;
        doc.try_into()
    }
}

impl Serialize for IrModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        Document::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IrModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = Document::deserialize(deserializer)?;
        doc.try_into().map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    name: String,
    layers: Vec<LayerDocument>,
    connections: Vec<Connection>,
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    id: String,
    #[serde(rename = "type")]
    layer_type: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    #[serde(default)]
    params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    position: Option<[f64; 2]>,
}

impl From<&IrLayer> for LayerDocument {
    fn from(l: &IrLayer) -> Self {
        LayerDocument {
            id: l.id.clone(),
            layer_type: l.layer_type.name().to_string(),
            name: l.display_name.clone(),
            params: l.params.clone(),
            position: l.position.map(|(x, y)| [x, y]),
        }
    }
}

impl TryFrom<LayerDocument> for IrLayer {
    type Error = IrError;

    fn try_from(l: LayerDocument) -> Result<Self, IrError> {
        Ok(IrLayer {
            id: l.id,
            layer_type: l.layer_type.parse()?,
            display_name: l.name,
            params: l.params,
            position: l.position.map(|[x, y]| (x, y)),
        })
    }
}

/// A layer serializes as one entry of a model document's `layers` list.
impl Serialize for IrLayer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LayerDocument::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IrLayer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        LayerDocument::deserialize(deserializer)?.try_into().map_err(serde::de::Error::custom)
    }
}

impl From<&IrModel> for Document {
    fn from(model: &IrModel) -> Self {
        Document {
            format_version: FORMAT_VERSION,
            name: model.name.clone(),
            layers: model.layers().map(LayerDocument::from).collect(),
            connections: model.connections.clone(),
        }
    }
}

impl TryFrom<Document> for IrModel {
    type Error = IrError;

    fn try_from(doc: Document) -> Result<Self, Self::Error> {
        if doc.format_version != FORMAT_VERSION {
            return Err(IrError::MalformedDocument(format!("unsupported format_version {}", doc.format_version)));
        }
        let layers = doc.layers.into_iter().map(IrLayer::try_from).collect::<Result<Vec<_>, IrError>>()?;
        IrModel::from_parts(doc.name, layers, doc.connections)
    }
}
