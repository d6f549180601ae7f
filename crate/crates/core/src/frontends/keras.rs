//! Keras model-config JSON import and export.
//!
//! Keras stores tensors channels-last; the IR is channels-first. Shapes and
//! axes are moved at the boundary: the last Keras dim becomes the IR's
//! first.

use std::collections::{HashMap, HashSet};

use serde_json::{json, Map, Value};

use super::caffe::{ceil_matches_floor, normalize_ceil_mode};
use super::names::{keras_class, parse_keras_spatial};
use super::padding::{per_dim, pool_output_size_ceil, same_total, same_total_transposed};
use super::{check_availability, ensure_valid, ExportOptions, FrontendError, Imported};
use crate::ir::{
    infer_shapes_lenient, resolve_model_padding, Attach, Connection, Framework, GraphIndex, IrLayer, IrModel,
    LayerType, ParamValue, ShapeMap, TensorShape,
};

const KERAS_VERSION: &str = "2.2.4";

fn malformed(message: impl Into<String>) -> FrontendError {
    FrontendError::MalformedDocument(message.into())
}

/// Moves the trailing (channel) dim to the front.
fn to_channels_first(mut dims: Vec<i64>) -> Vec<i64> {
    if dims.len() >= 2 {
        dims.rotate_right(1);
    }
    dims
}

fn to_channels_last(mut dims: Vec<i64>) -> Vec<i64> {
    if dims.len() >= 2 {
        dims.rotate_left(1);
    }
    dims
}

struct RawLayer {
    name: String,
    class: String,
    config: Map<String, Value>,
    inbound: Vec<String>,
}

pub fn import_keras(text: &str) -> Result<Imported, FrontendError> {
    let root: Value = serde_json::from_str(text).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
    let root = match root.get("model_config") {
        Some(inner) if root.get("class_name").is_none() => inner.clone(),
        _ => root,
    };
    let class = root.get("class_name").and_then(Value::as_str).unwrap_or_default();
    let config = root.get("config").ok_or_else(|| malformed("document has no 'config'"))?;
    let (name, raw) = match class {
        "Model" | "Functional" => functional_layers(config)?,
        "Sequential" => sequential_layers(config)?,
        other => return Err(malformed(format!("top-level class '{other}' is not a model"))),
    };
    let mut importer = Importer::new(name, &raw);
    for layer in &raw {
        importer.layer(layer)?;
    }
    importer.finish()
}

fn functional_layers(config: &Value) -> Result<(String, Vec<RawLayer>), FrontendError> {
    let name = config.get("name").and_then(Value::as_str).unwrap_or("model").to_string();
    let layers =
        config.get("layers").and_then(Value::as_array).ok_or_else(|| malformed("model config has no 'layers' list"))?;
    let raw = layers
        .iter()
        .map(|l| {
            let mut raw = raw_layer(l)?;
            raw.inbound = inbound_names(&raw.name, l.get("inbound_nodes"))?;
            Ok(raw)
        })
        .collect::<Result<_, FrontendError>>()?;
    Ok((name, raw))
}

fn sequential_layers(config: &Value) -> Result<(String, Vec<RawLayer>), FrontendError> {
    let (name, layers) = match config {
        Value::Array(list) => ("sequential", list),
        Value::Object(map) => (
            map.get("name").and_then(Value::as_str).unwrap_or("sequential"),
            map.get("layers")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("sequential config has no 'layers' list"))?,
        ),
        _ => return Err(malformed("sequential config must be a list or an object")),
    };
    let mut raw: Vec<RawLayer> = layers.iter().map(raw_layer).collect::<Result<_, _>>()?;
    if raw.first().is_some_and(|l| l.class != "InputLayer") {
        let first = &raw[0];
        let shape = ["batch_input_shape", "batch_shape"]
            .iter()
            .find_map(|k| first.config.get(*k).filter(|v| !v.is_null()))
            .ok_or_else(|| malformed(format!("sequential model declares no input shape on '{}'", first.name)))?;
        let mut config = Map::new();
        config.insert("batch_input_shape".into(), shape.clone());
        raw.insert(
            0,
            RawLayer { name: format!("{}_input", first.name), class: "InputLayer".into(), config, inbound: Vec::new() },
        );
    }
    for i in 1..raw.len() {
        raw[i].inbound = vec![raw[i - 1].name.clone()];
    }
    Ok((name.to_string(), raw))
}

fn raw_layer(value: &Value) -> Result<RawLayer, FrontendError> {
    let class =
        value.get("class_name").and_then(Value::as_str).ok_or_else(|| malformed("layer entry has no 'class_name'"))?;
    let config = value.get("config").and_then(Value::as_object).cloned().unwrap_or_default();
    let name = value
        .get("name")
        .and_then(Value::as_str)
        .or_else(|| config.get("name").and_then(Value::as_str))
        .ok_or_else(|| FrontendError::MissingRequiredField { layer: class.into(), field: "name".into() })?;
    Ok(RawLayer { name: name.into(), class: class.into(), config, inbound: Vec::new() })
}

/// Parent layer names from `inbound_nodes`, in either the nested-list or
/// the `keras_history` encoding.
fn inbound_names(layer: &str, nodes: Option<&Value>) -> Result<Vec<String>, FrontendError> {
    let Some(nodes) = nodes.and_then(Value::as_array) else { return Ok(Vec::new()) };
    match nodes.len() {
        0 => return Ok(Vec::new()),
        1 => {}
        n => {
            return Err(malformed(format!(
                "layer '{layer}' is called {n} times; shared layers have no single-graph equivalent"
            )))
        }
    }
    let mut names = Vec::new();
    match &nodes[0] {
        Value::Array(entries) => {
            for e in entries {
                let entry = e.as_array().ok_or_else(|| malformed(format!("layer '{layer}': bad inbound entry")))?;
                names.push(history_name(layer, entry)?);
            }
        }
        Value::Object(node) => {
            if let Some(args) = node.get("args") {
                collect_history(layer, args, &mut names)?;
            }
        }
        _ => return Err(malformed(format!("layer '{layer}': bad inbound node"))),
    }
    Ok(names)
}

fn history_name(layer: &str, entry: &[Value]) -> Result<String, FrontendError> {
    let name = entry
        .first()
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(format!("layer '{layer}': bad inbound entry")))?;
    let node = entry.get(1).and_then(Value::as_i64).unwrap_or(0);
    let tensor = entry.get(2).and_then(Value::as_i64).unwrap_or(0);
    if node != 0 || tensor != 0 {
        return Err(malformed(format!(
            "layer '{layer}' reads output {tensor} of call {node} of '{name}'; only single-output, single-call layers are supported"
        )));
    }
    Ok(name.to_string())
}

fn collect_history(layer: &str, value: &Value, out: &mut Vec<String>) -> Result<(), FrontendError> {
    match value {
        Value::Object(map) => {
            if let Some(h) = map.get("keras_history").and_then(Value::as_array) {
                out.push(history_name(layer, h)?);
            } else {
                for v in map.values() {
                    collect_history(layer, v, out)?;
                }
            }
        }
        Value::Array(items) => {
            for v in items {
                collect_history(layer, v, out)?;
            }
        }
        _ => {}
    }
    Ok(())
}

struct Importer<'a> {
    out: Imported,
    /// Keras layer name to the IR layer producing its output.
    alias: HashMap<String, String>,
    /// ZeroPadding layers waiting for their consumer: parent id and pads.
    pending_pad: HashMap<String, (String, Vec<i64>)>,
    consumers: HashMap<&'a str, Vec<&'a str>>,
    classes: HashMap<&'a str, &'a str>,
    concat_axes: Vec<(String, i64)>,
    same_pools: Vec<String>,
}

impl<'a> Importer<'a> {
    fn new(name: String, raw: &'a [RawLayer]) -> Self {
        let mut consumers: HashMap<&str, Vec<&str>> = HashMap::new();
        for l in raw {
            for p in &l.inbound {
                consumers.entry(p.as_str()).or_default().push(l.name.as_str());
            }
        }
        Importer {
            out: Imported { model: IrModel::new(name), warnings: Vec::new() },
            alias: HashMap::new(),
            pending_pad: HashMap::new(),
            consumers,
            classes: raw.iter().map(|l| (l.name.as_str(), l.class.as_str())).collect(),
            concat_axes: Vec::new(),
            same_pools: Vec::new(),
        }
    }

    fn parents(&self, raw: &RawLayer) -> Result<Vec<String>, FrontendError> {
        raw.inbound
            .iter()
            .map(|p| {
                if self.pending_pad.contains_key(p) {
                    return Err(malformed(format!(
                        "'{p}' pads the input of '{}', which is not a valid-padded convolution or pooling layer",
                        raw.name
                    )));
                }
                self.alias
                    .get(p)
                    .cloned()
                    .ok_or_else(|| FrontendError::UnknownBlob { layer: raw.name.clone(), blob: p.clone() })
            })
            .collect()
    }

    fn add(&mut self, layer: IrLayer, parents: &[String]) -> Result<String, FrontendError> {
        let id = layer.id.clone();
        let connections = parents.iter().map(|p| Connection::new(p.clone(), id.clone())).collect();
        self.out.model.add_layer(layer, Attach::Explicit(connections))?;
        Ok(id)
    }

    fn unique_id(&self, base: String) -> String {
        let mut id = base;
        while self.out.model.contains(&id) {
            id.push('_');
        }
        id
    }

    /// Adds the layer for a Keras `activation` argument after `base`,
    /// returning the id that now carries the output.
    fn activation(&mut self, layer: &str, base: String, config: &Map<String, Value>) -> Result<String, FrontendError> {
        let act = match config.get("activation") {
            None | Some(Value::Null) => return Ok(base),
            Some(Value::String(s)) => s.as_str(),
            Some(other) => return Err(malformed(format!("layer '{layer}': activation {other} is not a plain name"))),
        };
        let Some(t) = activation_type(layer, act)? else { return Ok(base) };
        let id = self.unique_id(format!("{layer}_{act}"));
        self.add(IrLayer::new(id, t), &[base])
    }

    fn layer(&mut self, raw: &RawLayer) -> Result<(), FrontendError> {
        let name = raw.name.as_str();
        let c = &raw.config;
        if c.get("data_format").and_then(Value::as_str) == Some("channels_first") {
            return Err(malformed(format!("layer '{name}': channels_first data is not supported")));
        }
        let id = match raw.class.as_str() {
            "InputLayer" => {
                let dims = input_dims(name, c)?.ok_or_else(|| FrontendError::MissingRequiredField {
                    layer: name.into(),
                    field: "batch_input_shape".into(),
                })?;
                self.add(IrLayer::new(name, LayerType::Input).with("shape", dims), &[])?
            }
            "Dense" => {
                let parents = self.parents(raw)?;
                let mut layer =
                    IrLayer::new(name, LayerType::InnerProduct).with("num_output", req_int(name, c, "units")? as f64);
                if let Some(b) = c.get("use_bias").and_then(Value::as_bool) {
                    layer = layer.with("bias_term", b);
                }
                let id = self.add(layer, &parents)?;
                self.activation(name, id, c)?
            }
            "Activation" => {
                let parents = self.parents(raw)?;
                let act = c.get("activation").and_then(Value::as_str).unwrap_or("linear");
                match activation_type(name, act)? {
                    Some(t) => self.add(IrLayer::new(name, t), &parents)?,
                    None => single(name, parents)?,
                }
            }
            "ReLU" => {
                let parents = self.parents(raw)?;
                if c.get("max_value").is_some_and(|v| !v.is_null()) {
                    self.out.warn(Some(name), "ignored fields: max_value");
                }
                let slope = c.get("negative_slope").and_then(Value::as_f64).unwrap_or(0.0);
                self.add(relu(name, slope), &parents)?
            }
            "LeakyReLU" => {
                let parents = self.parents(raw)?;
                let slope = c.get("alpha").or_else(|| c.get("negative_slope")).and_then(Value::as_f64).unwrap_or(0.3);
                self.add(relu(name, slope), &parents)?
            }
            "Softmax" => {
                let parents = self.parents(raw)?;
                self.add(IrLayer::new(name, LayerType::Softmax), &parents)?
            }
            "Dropout" => {
                let parents = self.parents(raw)?;
                let mut layer = IrLayer::new(name, LayerType::Dropout);
                if let Some(r) = c.get("rate").and_then(Value::as_f64) {
                    layer = layer.with("ratio", r);
                }
                self.add(layer, &parents)?
            }
            "BatchNormalization" => {
                let parents = self.parents(raw)?;
                let mut layer = IrLayer::new(name, LayerType::BatchNorm);
                if let Some(e) = c.get("epsilon").and_then(Value::as_f64) {
                    layer = layer.with("eps", e);
                }
                self.add(layer, &parents)?
            }
            "Concatenate" => {
                let parents = self.parents(raw)?;
                let axis = c.get("axis").and_then(Value::as_i64).unwrap_or(-1);
                self.concat_axes.push((name.to_string(), axis));
                self.add(IrLayer::new(name, LayerType::Concat), &parents)?
            }
            "Add" | "Multiply" | "Maximum" => {
                let parents = self.parents(raw)?;
                let mut layer = IrLayer::new(name, LayerType::Eltwise);
                match raw.class.as_str() {
                    "Multiply" => layer = layer.with("operation", "prod"),
                    "Maximum" => layer = layer.with("operation", "max"),
                    _ => {}
                }
                self.add(layer, &parents)?
            }
            "Flatten" => {
                let parents = self.parents(raw)?;
                let consumers = self.consumers.get(name).map(Vec::as_slice).unwrap_or(&[]);
                let folds = matches!(consumers, [dense] if self.classes.get(dense) == Some(&"Dense")
                    && name == format!("{dense}_flatten"));
                if folds {
                    single(name, parents)?
                } else {
                    self.add(IrLayer::new(name, LayerType::Flatten), &parents)?
                }
            }
            "Reshape" => {
                let parents = self.parents(raw)?;
                let target = int_list(c.get("target_shape")).ok_or_else(|| FrontendError::MissingRequiredField {
                    layer: name.into(),
                    field: "target_shape".into(),
                })?;
                self.add(IrLayer::new(name, LayerType::Reshape).with("shape", to_channels_first(target)), &parents)?
            }
            "Embedding" => {
                let parents = self.parents(raw)?;
                let layer = IrLayer::new(name, LayerType::Embedding)
                    .with("input_dim", req_int(name, c, "input_dim")? as f64)
                    .with("output_dim", req_int(name, c, "output_dim")? as f64);
                self.add(layer, &parents)?
            }
            "SimpleRNN" | "LSTM" | "GRU" => {
                let parents = self.parents(raw)?;
                let t = match raw.class.as_str() {
                    "SimpleRNN" => LayerType::RNN,
                    "LSTM" => LayerType::LSTM,
                    _ => LayerType::GRU,
                };
                let mut layer = IrLayer::new(name, t).with("num_output", req_int(name, c, "units")? as f64);
                if c.get("return_sequences").and_then(Value::as_bool) == Some(true) {
                    layer = layer.with("return_sequences", true);
                }
                self.add(layer, &parents)?
            }
            "LRN" => {
                let parents = self.parents(raw)?;
                let mut layer = IrLayer::new(name, LayerType::LRN);
                for (key, ir) in [("alpha", "alpha"), ("beta", "beta"), ("k", "k")] {
                    if let Some(x) = c.get(key).and_then(Value::as_f64) {
                        layer = layer.with(ir, x);
                    }
                }
                if let Some(n) = c.get("n").and_then(Value::as_i64) {
                    layer = layer.with("local_size", n as f64);
                }
                self.add(layer, &parents)?
            }
            class if class.starts_with("ZeroPadding") => {
                let rank = match &class["ZeroPadding".len()..] {
                    "1D" => 1,
                    "2D" => 2,
                    "3D" => 3,
                    _ => return Err(unknown_class(name, class)),
                };
                let parents = self.parents(raw)?;
                let parent = single(name, parents)?;
                let pads = zero_padding(name, c.get("padding"), rank)?;
                if self.consumers.get(name).map_or(0, Vec::len) != 1 {
                    return Err(malformed(format!("ZeroPadding layer '{name}' must feed exactly one layer")));
                }
                self.pending_pad.insert(name.to_string(), (parent, pads));
                return Ok(());
            }
            class => {
                let (t, rank, pool, global) = parse_keras_spatial(class).ok_or_else(|| unknown_class(name, class))?;
                self.spatial(raw, t, rank, pool, global)?
            }
        };
        self.alias.insert(raw.name.clone(), id);
        Ok(())
    }

    fn spatial(
        &mut self,
        raw: &RawLayer,
        t: LayerType,
        rank: usize,
        pool: &str,
        global: bool,
    ) -> Result<String, FrontendError> {
        let name = raw.name.as_str();
        let c = &raw.config;

        // A ZeroPadding input folds into this layer's numeric padding.
        let pending = match raw.inbound.as_slice() {
            [only] => self.pending_pad.remove(only).map(|p| (only.clone(), p)),
            _ => None,
        };
        let (parents, folded_pad) = match pending {
            Some((pad_name, (parent, pads))) => {
                let padding = c.get("padding").and_then(Value::as_str).unwrap_or("valid");
                if t == LayerType::Deconvolution || global || padding != "valid" {
                    return Err(malformed(format!(
                        "'{pad_name}' pads the input of '{name}', which is not a valid-padded convolution or pooling layer"
                    )));
                }
                (vec![parent], Some(pads))
            }
            None => (self.parents(raw)?, None),
        };

        let mut layer = IrLayer::new(name, t);
        if t == LayerType::Pooling {
            if pool == "ave" {
                layer = layer.with("pool", "ave");
            }
            if global {
                return self.add(layer.with("global_pooling", true), &parents);
            }
            let kernel = int_list_rank(c.get("pool_size"), rank).unwrap_or_else(|| vec![2; rank]);
            let stride = int_list_rank(c.get("strides"), rank).unwrap_or_else(|| kernel.clone());
            layer = layer.with("kernel", kernel).with("stride", stride);
        } else {
            layer = layer.with("num_output", req_int(name, c, "filters")? as f64).with(
                "kernel",
                int_list_rank(c.get("kernel_size"), rank).ok_or_else(|| FrontendError::MissingRequiredField {
                    layer: name.into(),
                    field: "kernel_size".into(),
                })?,
            );
            if let Some(s) = int_list_rank(c.get("strides"), rank) {
                layer = layer.with("stride", s);
            }
            if let Some(b) = c.get("use_bias").and_then(Value::as_bool) {
                layer = layer.with("bias_term", b);
            }
            if let Some(g) = c.get("groups").and_then(Value::as_i64) {
                layer = layer.with("group", g as f64);
            }
            if int_list_rank(c.get("dilation_rate"), rank).is_some_and(|d| d.iter().any(|&x| x != 1)) {
                self.out.warn(Some(name), "ignored fields: dilation_rate");
            }
        }
        match (folded_pad, c.get("padding").and_then(Value::as_str).unwrap_or("valid")) {
            (Some(pads), _) => layer = layer.with("pad", pads),
            (None, "valid") => {}
            (None, "same") => {
                layer = layer.with("padding_mode", "same");
                if t == LayerType::Pooling {
                    self.same_pools.push(name.to_string());
                }
            }
            (None, other) => return Err(malformed(format!("layer '{name}': padding '{other}' is not supported"))),
        }
        let id = self.add(layer, &parents)?;
        if t == LayerType::Pooling {
            Ok(id)
        } else {
            self.activation(name, id, c)
        }
    }

    fn finish(mut self) -> Result<Imported, FrontendError> {
        if let Some(name) = self.pending_pad.keys().next() {
            return Err(malformed(format!("ZeroPadding layer '{name}' has no consumer")));
        }
        let model = &mut self.out.model;

        for (id, axis) in std::mem::take(&mut self.concat_axes) {
            let shapes = infer_shapes_lenient(model, &ShapeMap::new());
            let rank = model.parents(&id).first().and_then(|p| shapes.get(*p)).map(TensorShape::rank);
            let ir_axis = concat_axis_to_ir(axis, rank)
                .ok_or_else(|| malformed(format!("layer '{id}': cannot place concatenation axis {axis}")))?;
            model.update_param(&id, "axis", ParamValue::Number(ir_axis as f64))?;
        }

        // "same" pooling with an odd total pad: Caffe-style rounding up
        // reproduces the size without padding.
        let mut ceil_pools = Vec::new();
        if !self.same_pools.is_empty() {
            let shapes = infer_shapes_lenient(model, &ShapeMap::new());
            for id in &self.same_pools {
                let Some(input) = model.parents(id).first().and_then(|p| shapes.get(*p)).cloned() else { continue };
                let layer = model.layer(id).expect("pool exists");
                if let Some(pads) = ceil_equivalent_of_same(layer, &input) {
                    let layer = model.layer_mut(id).expect("pool exists");
                    layer.params.remove("padding_mode");
                    layer.params.insert("pad".into(), ParamValue::Ints(pads));
                    layer.params.insert("ceil_mode".into(), ParamValue::Bool(true));
                    ceil_pools.push(id.clone());
                }
            }
        }
        resolve_model_padding(model, &ShapeMap::new())?;
        normalize_ceil_mode(model, &ceil_pools);
        Ok(self.out)
    }
}

/// For a "same" pooling layer whose total padding is odd in some
/// dimension: zero padding with rounded-up sizes, if that gives the same
/// output size in every dimension.
fn ceil_equivalent_of_same(layer: &IrLayer, input: &TensorShape) -> Option<Vec<i64>> {
    let spatial = input.spatial();
    let rank = spatial.len();
    let k = per_dim(layer.ints("kernel")?, rank)?;
    let s = per_dim(layer.ints("stride")?, rank)?;
    let mut odd = false;
    for d in 0..rank {
        let i = spatial[d] as i64;
        odd |= same_total(i, k[d], s[d]) % 2 == 1;
        if pool_output_size_ceil(i, k[d], s[d], 0)? != (i + s[d] - 1) / s[d] {
            return None;
        }
    }
    odd.then(|| vec![0; rank])
}

fn concat_axis_to_ir(axis: i64, rank: Option<usize>) -> Option<i64> {
    match rank {
        Some(r) => {
            let r = r as i64;
            let a = if axis < 0 { axis + r + 1 } else { axis };
            if !(1..=r).contains(&a) {
                None
            } else if a == r {
                Some(1)
            } else {
                Some(a + 1)
            }
        }
        None if axis == -1 => Some(1),
        None if axis >= 1 => Some(axis + 1),
        None => None,
    }
}

fn concat_axis_to_keras(axis: i64) -> i64 {
    match axis {
        1 => -1,
        a if a > 1 => a - 1,
        a => a - 1,
    }
}

fn single(layer: &str, parents: Vec<String>) -> Result<String, FrontendError> {
    let mut parents = parents;
    match parents.len() {
        1 => Ok(parents.remove(0)),
        n => Err(malformed(format!("layer '{layer}' takes one input, got {n}"))),
    }
}

fn relu(name: &str, slope: f64) -> IrLayer {
    let layer = IrLayer::new(name, LayerType::ReLU);
    if slope != 0.0 {
        layer.with("negative_slope", slope)
    } else {
        layer
    }
}

fn unknown_class(layer: &str, class: &str) -> FrontendError {
    FrontendError::UnknownLayerType { framework: Framework::Keras, layer: layer.into(), name: class.into() }
}

/// The IR layer for a Keras activation name; `None` for the identity.
fn activation_type(layer: &str, act: &str) -> Result<Option<LayerType>, FrontendError> {
    Ok(Some(match act {
        "linear" => return Ok(None),
        "relu" => LayerType::ReLU,
        "sigmoid" => LayerType::Sigmoid,
        "tanh" => LayerType::Tanh,
        "softmax" => LayerType::Softmax,
        other => return Err(unknown_class(layer, &format!("Activation({other})"))),
    }))
}

fn req_int(layer: &str, config: &Map<String, Value>, key: &str) -> Result<i64, FrontendError> {
    config
        .get(key)
        .and_then(Value::as_i64)
        .ok_or_else(|| FrontendError::MissingRequiredField { layer: layer.into(), field: key.into() })
}

fn int_list(value: Option<&Value>) -> Option<Vec<i64>> {
    match value? {
        Value::Number(n) => Some(vec![n.as_i64()?]),
        Value::Array(items) => items.iter().map(Value::as_i64).collect(),
        _ => None,
    }
}

fn int_list_rank(value: Option<&Value>, rank: usize) -> Option<Vec<i64>> {
    per_dim(&int_list(value)?, rank)
}

fn input_dims(layer: &str, config: &Map<String, Value>) -> Result<Option<Vec<i64>>, FrontendError> {
    let Some(shape) = ["batch_input_shape", "batch_shape"].iter().find_map(|k| config.get(*k).filter(|v| !v.is_null()))
    else {
        return Ok(None);
    };
    let items = shape.as_array().ok_or_else(|| malformed(format!("layer '{layer}': input shape is not a list")))?;
    let dims = items.iter().skip(1).map(|d| d.as_i64().filter(|&d| d >= 1)).collect::<Option<Vec<i64>>>().ok_or_else(
        || malformed(format!("layer '{layer}': every input dimension after the batch must be a fixed size")),
    )?;
    if dims.is_empty() {
        return Err(malformed(format!("layer '{layer}': input shape has no dimensions")));
    }
    Ok(Some(to_channels_first(dims)))
}

fn zero_padding(layer: &str, value: Option<&Value>, rank: usize) -> Result<Vec<i64>, FrontendError> {
    let bad = || malformed(format!("layer '{layer}': unreadable padding"));
    let value = value.ok_or_else(bad)?;
    let pairs: Vec<(i64, i64)> = match value {
        Value::Number(n) => {
            let p = n.as_i64().ok_or_else(bad)?;
            vec![(p, p); rank]
        }
        Value::Array(items) if rank == 1 && items.iter().all(Value::is_number) => {
            let v: Vec<i64> = items.iter().map(Value::as_i64).collect::<Option<_>>().ok_or_else(bad)?;
            match v.as_slice() {
                [p] => vec![(*p, *p)],
                [a, b] => vec![(*a, *b)],
                _ => return Err(bad()),
            }
        }
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Number(n) => n.as_i64().map(|p| (p, p)),
                Value::Array(pair) if pair.len() == 2 => Some((pair[0].as_i64()?, pair[1].as_i64()?)),
                _ => None,
            })
            .collect::<Option<_>>()
            .ok_or_else(bad)?,
        _ => return Err(bad()),
    };
    if pairs.len() != rank {
        return Err(bad());
    }
    pairs
        .into_iter()
        .enumerate()
        .map(|(dim, (a, b))| {
            if a == b {
                Ok(a)
            } else {
                Err(FrontendError::AsymmetricPadding { layer_id: layer.into(), dim, total: a + b })
            }
        })
        .collect()
}

pub fn export_keras(model: &IrModel, options: &ExportOptions) -> Result<String, FrontendError> {
    check_availability(model, Framework::Keras, &options.registry)?;
    let mut model = model.clone();
    let unresolved = model
        .layers()
        .any(|l| l.params.get("padding_mode").and_then(ParamValue::as_text).is_some_and(|m| m != "numeric"));
    if unresolved {
        resolve_model_padding(&mut model, &ShapeMap::new())?;
    }
    ensure_valid(&model)?;

    let index = GraphIndex::new(&model);
    let order = index
        .topological_order(&HashSet::new())
        .ok_or_else(|| FrontendError::InvalidModel("Keras models must be acyclic".into()))?;
    let shapes = infer_shapes_lenient(&model, &ShapeMap::new());
    let layers: Vec<&IrLayer> = model.layers().collect();
    let mut taken: HashSet<String> = layers.iter().map(|l| l.id.clone()).collect();

    let mut out_layers = Vec::with_capacity(layers.len());
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for i in order {
        let layer = layers[i];
        let parents: Vec<String> = index.parents_of(i).iter().map(|&p| index.id(p).to_string()).collect();
        if layer.layer_type == LayerType::Input {
            inputs.push(json!([layer.id, 0, 0]));
        } else if parents.is_empty() {
            return Err(FrontendError::InvalidModel(format!(
                "layer '{}' has no inputs; Keras models start at Input layers",
                layer.id
            )));
        }
        if index.children_of(i).is_empty() {
            outputs.push(json!([layer.id, 0, 0]));
        }
        let input = index.parents_of(i).first().and_then(|&p| shapes.get(index.id(p)));
        let mut inbound = parents;
        for (name, class, config) in export_layer(layer, input, &mut taken)? {
            let nodes = if inbound.is_empty() {
                json!([])
            } else {
                let entries: Vec<Value> = inbound.iter().map(|p| json!([p, 0, 0, {}])).collect();
                json!([entries])
            };
            out_layers.push(json!({
                "name": name,
                "class_name": class,
                "config": config,
                "inbound_nodes": nodes,
            }));
            inbound = vec![name];
        }
    }
    let doc = json!({
        "class_name": "Model",
        "config": {
            "name": model.name,
            "layers": out_layers,
            "input_layers": inputs,
            "output_layers": outputs,
        },
        "keras_version": KERAS_VERSION,
        "backend": "tensorflow",
    });
    Ok(serde_json::to_string_pretty(&doc).expect("JSON serializes"))
}

fn initializer(class: &str) -> Value {
    match class {
        "GlorotUniform" => json!({"class_name": class, "config": {"seed": null}}),
        _ => json!({"class_name": class, "config": {}}),
    }
}

fn base_config(name: &str) -> Map<String, Value> {
    let mut c = Map::new();
    c.insert("name".into(), json!(name));
    c.insert("trainable".into(), json!(true));
    c.insert("dtype".into(), json!("float32"));
    c
}

fn weights_config(c: &mut Map<String, Value>, use_bias: bool) {
    c.insert("use_bias".into(), json!(use_bias));
    c.insert("kernel_initializer".into(), initializer("GlorotUniform"));
    c.insert("bias_initializer".into(), initializer("Zeros"));
    for key in
        ["kernel_regularizer", "bias_regularizer", "activity_regularizer", "kernel_constraint", "bias_constraint"]
    {
        c.insert(key.into(), Value::Null);
    }
}

fn unique(taken: &mut HashSet<String>, base: String) -> String {
    let mut name = base;
    while taken.contains(&name) {
        name.push('_');
    }
    taken.insert(name.clone());
    name
}

enum PadChoice {
    Valid,
    Same,
    Zero(Vec<i64>),
}

fn pad_choice(input: Option<&TensorShape>, k: &[i64], s: &[i64], p: &[i64]) -> PadChoice {
    if p.iter().all(|&x| x == 0) {
        return PadChoice::Valid;
    }
    let same = match input {
        Some(shape) if shape.spatial().len() == p.len() => shape.spatial().iter().enumerate().all(|(d, &i)| {
            let total = same_total(i as i64, k[d], s[d]);
            total % 2 == 0 && total / 2 == p[d]
        }),
        _ => (0..p.len()).all(|d| s[d] == 1 && k[d] % 2 == 1 && p[d] == (k[d] - 1) / 2),
    };
    if same {
        PadChoice::Same
    } else {
        PadChoice::Zero(p.to_vec())
    }
}

type Emitted = (String, String, Map<String, Value>);

fn export_layer(
    layer: &IrLayer,
    input: Option<&TensorShape>,
    taken: &mut HashSet<String>,
) -> Result<Vec<Emitted>, FrontendError> {
    use LayerType::*;

    let id = layer.id.as_str();
    let mut c = base_config(id);
    let mut out = Vec::new();
    let class: String = match layer.layer_type {
        Input => {
            let dims = layer.ints("shape").unwrap_or(&[]).to_vec();
            let mut shape = vec![Value::Null];
            shape.extend(to_channels_last(dims).into_iter().map(|d| json!(d)));
            c.remove("trainable");
            c.insert("batch_input_shape".into(), Value::Array(shape));
            c.insert("sparse".into(), json!(false));
            "InputLayer".into()
        }
        Convolution | Deconvolution => return spatial_export(layer, input, taken, c),
        Pooling if !layer.flag("global_pooling") => return spatial_export(layer, input, taken, c),
        Pooling => {
            let rank = input.map_or(2, |s| s.spatial().len());
            c.insert("data_format".into(), json!("channels_last"));
            c.insert("keepdims".into(), json!(true));
            keras_class(Pooling, rank, layer.text("pool").unwrap_or("max"), true).expect("pooling has a class")
        }
        InnerProduct => {
            if input.is_some_and(|s| s.rank() > 1) {
                let name = unique(taken, format!("{id}_flatten"));
                let mut f = base_config(&name);
                f.insert("data_format".into(), json!("channels_last"));
                out.push((name, "Flatten".to_string(), f));
            }
            c.insert("units".into(), json!(layer.number("num_output").unwrap_or(1.0) as i64));
            c.insert("activation".into(), json!("linear"));
            weights_config(&mut c, layer.flag("bias_term"));
            "Dense".into()
        }
        ReLU => {
            let slope = layer.number("negative_slope").unwrap_or(0.0);
            if slope == 0.0 {
                c.insert("activation".into(), json!("relu"));
                "Activation".into()
            } else {
                c.insert("alpha".into(), json!(slope));
                "LeakyReLU".into()
            }
        }
        Sigmoid | Tanh | Softmax => {
            let act = match layer.layer_type {
                Sigmoid => "sigmoid",
                Tanh => "tanh",
                _ => "softmax",
            };
            c.insert("activation".into(), json!(act));
            "Activation".into()
        }
        LRN => {
            c.insert("alpha".into(), json!(layer.number("alpha").unwrap_or(1.0)));
            c.insert("beta".into(), json!(layer.number("beta").unwrap_or(0.75)));
            c.insert("k".into(), json!(layer.number("k").unwrap_or(1.0)));
            c.insert("n".into(), json!(layer.number("local_size").unwrap_or(5.0) as i64));
            "LRN".into()
        }
        Dropout => {
            c.insert("rate".into(), json!(layer.number("ratio").unwrap_or(0.5)));
            c.insert("noise_shape".into(), Value::Null);
            c.insert("seed".into(), Value::Null);
            "Dropout".into()
        }
        BatchNorm => {
            c.insert("axis".into(), json!(-1));
            c.insert("momentum".into(), json!(0.99));
            c.insert("epsilon".into(), json!(layer.number("eps").unwrap_or(1e-5)));
            c.insert("center".into(), json!(true));
            c.insert("scale".into(), json!(true));
            c.insert("beta_initializer".into(), initializer("Zeros"));
            c.insert("gamma_initializer".into(), initializer("Ones"));
            c.insert("moving_mean_initializer".into(), initializer("Zeros"));
            c.insert("moving_variance_initializer".into(), initializer("Ones"));
            for key in ["beta_regularizer", "gamma_regularizer", "beta_constraint", "gamma_constraint"] {
                c.insert(key.into(), Value::Null);
            }
            "BatchNormalization".into()
        }
        Concat => {
            let axis = layer.number("axis").unwrap_or(1.0) as i64;
            c.insert("axis".into(), json!(concat_axis_to_keras(axis)));
            "Concatenate".into()
        }
        Eltwise => match layer.text("operation").unwrap_or("sum") {
            "prod" => "Multiply".into(),
            "max" => "Maximum".into(),
            _ => "Add".into(),
        },
        Flatten => {
            c.insert("data_format".into(), json!("channels_last"));
            "Flatten".into()
        }
        Reshape => {
            let target = to_channels_last(layer.ints("shape").unwrap_or(&[]).to_vec());
            c.insert("target_shape".into(), json!(target));
            "Reshape".into()
        }
        Embedding => {
            c.insert("input_dim".into(), json!(layer.number("input_dim").unwrap_or(1.0) as i64));
            c.insert("output_dim".into(), json!(layer.number("output_dim").unwrap_or(1.0) as i64));
            c.insert(
                "embeddings_initializer".into(),
                json!({"class_name": "RandomUniform", "config": {"minval": -0.05, "maxval": 0.05, "seed": null}}),
            );
            c.insert("embeddings_regularizer".into(), Value::Null);
            c.insert("activity_regularizer".into(), Value::Null);
            c.insert("embeddings_constraint".into(), Value::Null);
            c.insert("mask_zero".into(), json!(false));
            c.insert("input_length".into(), input.map_or(Value::Null, |s| json!(s.dims()[0])));
            "Embedding".into()
        }
        RNN | LSTM | GRU => {
            c.insert("units".into(), json!(layer.number("num_output").unwrap_or(1.0) as i64));
            c.insert("activation".into(), json!("tanh"));
            if layer.layer_type != RNN {
                c.insert("recurrent_activation".into(), json!("hard_sigmoid"));
            }
            c.insert("return_sequences".into(), json!(layer.flag("return_sequences")));
            c.insert("return_state".into(), json!(false));
            c.insert("go_backwards".into(), json!(false));
            c.insert("stateful".into(), json!(false));
            c.insert("unroll".into(), json!(false));
            weights_config(&mut c, true);
            c.insert(
                "recurrent_initializer".into(),
                json!({"class_name": "Orthogonal", "config": {"gain": 1.0, "seed": null}}),
            );
            c.insert("recurrent_regularizer".into(), Value::Null);
            c.insert("recurrent_constraint".into(), Value::Null);
            c.insert("dropout".into(), json!(0.0));
            c.insert("recurrent_dropout".into(), json!(0.0));
            match layer.layer_type {
                RNN => "SimpleRNN".into(),
                LSTM => "LSTM".into(),
                _ => "GRU".into(),
            }
        }
        SoftmaxWithLoss | Accuracy | Scale | Python => unreachable!("availability checked before export"),
    };
    out.push((id.to_string(), class, c));
    Ok(out)
}

fn spatial_export(
    layer: &IrLayer,
    input: Option<&TensorShape>,
    taken: &mut HashSet<String>,
    mut c: Map<String, Value>,
) -> Result<Vec<Emitted>, FrontendError> {
    let id = layer.id.as_str();
    let t = layer.layer_type;
    let inexpressible = |param: &str, reason: String| FrontendError::InexpressibleParam {
        layer_id: id.into(),
        param: param.into(),
        target: Framework::Keras,
        reason,
    };
    let kernel =
        layer.ints("kernel").ok_or_else(|| FrontendError::InvalidModel(format!("layer '{id}' has no kernel")))?;
    let rank = match input {
        Some(s) if s.rank() >= 2 => s.spatial().len(),
        _ if kernel.len() == 1 => 2,
        _ => kernel.len(),
    };
    if !(1..=3).contains(&rank) {
        return Err(inexpressible("kernel", format!("Keras has no {rank}-d layers")));
    }
    let mismatch =
        |key: &str| FrontendError::InvalidModel(format!("layer '{id}': '{key}' does not match the input rank"));
    let k = per_dim(kernel, rank).ok_or_else(|| mismatch("kernel"))?;
    let s = per_dim(layer.ints("stride").unwrap_or(&[1]), rank).ok_or_else(|| mismatch("stride"))?;
    let p = per_dim(layer.ints("pad").unwrap_or(&[0]), rank).ok_or_else(|| mismatch("pad"))?;

    let mut out = Vec::new();
    let padding = if t == LayerType::Deconvolution {
        if p.iter().all(|&x| x == 0) {
            "valid"
        } else if (0..rank).all(|d| 2 * p[d] == same_total_transposed(k[d], s[d])) {
            "same"
        } else {
            return Err(inexpressible("pad", format!("transposed padding {p:?} is neither 'valid' nor 'same'")));
        }
    } else if t == LayerType::Pooling
        && layer.flag("ceil_mode")
        && !input.and_then(|i| ceil_matches_floor(layer, i)).unwrap_or(false)
    {
        let same_ok = input.is_some_and(|shape| {
            let spatial = shape.spatial();
            let sizes_match = (0..rank).all(|d| {
                let i = spatial[d] as i64;
                pool_output_size_ceil(i, k[d], s[d], 0) == Some((i + s[d] - 1) / s[d])
            });
            let odd = (0..rank).any(|d| same_total(spatial[d] as i64, k[d], s[d]) % 2 == 1);
            p.iter().all(|&x| x == 0) && sizes_match && odd
        });
        if same_ok {
            "same"
        } else {
            return Err(inexpressible(
                "ceil_mode",
                "rounding output sizes up has no Keras equivalent for this input".into(),
            ));
        }
    } else {
        match pad_choice(input, &k, &s, &p) {
            PadChoice::Valid => "valid",
            PadChoice::Same => "same",
            PadChoice::Zero(pads) => {
                let name = unique(taken, format!("{id}_pad"));
                let mut z = base_config(&name);
                let padding: Value = if rank == 1 {
                    json!([pads[0], pads[0]])
                } else {
                    json!(pads.iter().map(|&x| json!([x, x])).collect::<Vec<_>>())
                };
                z.insert("padding".into(), padding);
                z.insert("data_format".into(), json!("channels_last"));
                out.push((name, format!("ZeroPadding{rank}D"), z));
                "valid"
            }
        }
    };

    let class = keras_class(t, rank, layer.text("pool").unwrap_or("max"), false).expect("spatial layers have classes");
    if t == LayerType::Pooling {
        c.insert("pool_size".into(), json!(k));
        c.insert("padding".into(), json!(padding));
        c.insert("strides".into(), json!(s));
        c.insert("data_format".into(), json!("channels_last"));
    } else {
        c.insert("filters".into(), json!(layer.number("num_output").unwrap_or(1.0) as i64));
        c.insert("kernel_size".into(), json!(k));
        c.insert("strides".into(), json!(s));
        c.insert("padding".into(), json!(padding));
        c.insert("data_format".into(), json!("channels_last"));
        c.insert("dilation_rate".into(), json!(vec![1; rank]));
        let group = layer.number("group").unwrap_or(1.0) as i64;
        if group != 1 {
            c.insert("groups".into(), json!(group));
        }
        c.insert("activation".into(), json!("linear"));
        weights_config(&mut c, layer.flag("bias_term"));
    }
    out.push((id.to_string(), class, c));
    Ok(out)
}
