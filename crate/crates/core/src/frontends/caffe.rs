//! Caffe prototxt import and export.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::names::NameMap;
use super::padding::{conv_output_size, per_dim, pool_output_size_ceil};
use super::{check_availability, ensure_valid, CustomLayerRegistry, FrontendError, Imported};
use crate::ir::{
    infer_shapes_lenient, resolve_model_padding, Attach, Connection, Framework, GraphIndex, IrLayer, IrModel,
    LayerType, ParamValue, ShapeMap, TensorShape,
};
use crate::textproto::{parse_textproto, print_textproto, Message, Number, Value};

/// Layer fields every layer may carry; anything else at layer level is
/// reported as unmapped.
const LAYER_FIELDS: &[&str] = &["name", "type", "bottom", "top"];

/// Data-source layer types that import as plain Input layers.
const DATA_TYPES: &[&str] = &["Data", "ImageData", "HDF5Data", "MemoryData", "DummyData", "WindowData"];

pub fn import_caffe(text: &str) -> Result<Imported, FrontendError> {
    let root = parse_textproto(text)?;
    let name = root.str("name").unwrap_or_default();
    let mut out = Imported { model: IrModel::new(name), warnings: Vec::new() };
    let mut state = ImportState::default();

    if root.get("layers").is_some() {
        return Err(FrontendError::MalformedDocument(
            "the V1 'layers' format is not supported; upgrade the file to 'layer'".into(),
        ));
    }
    legacy_inputs(&root, &mut out, &mut state)?;
    let unknown: Vec<&str> = root
        .fields
        .iter()
        .map(|f| f.name.as_str())
        .filter(|n| !["name", "layer", "input", "input_dim", "input_shape"].contains(n))
        .collect();
    if !unknown.is_empty() {
        out.warn(None, format!("ignored top-level fields: {}", dedup(&unknown).join(", ")));
    }

    for (index, field) in root.get_all("layer").enumerate() {
        let msg = field
            .value
            .as_message()
            .ok_or_else(|| FrontendError::MalformedDocument(format!("layer #{index} is not a message")))?;
        import_layer(msg, index, &mut out, &mut state)?;
    }

    normalize_ceil_mode(&mut out.model, &state.ceil_pools);
    Ok(out)
}

#[derive(Default)]
struct ImportState {
    /// Blob name to the IR layer that currently produces it.
    producer: HashMap<String, String>,
    children: HashMap<String, usize>,
    folded: HashSet<String>,
    ceil_pools: Vec<String>,
}

fn legacy_inputs(root: &Message, out: &mut Imported, state: &mut ImportState) -> Result<(), FrontendError> {
    let names: Vec<&str> = root.get_all("input").filter_map(|f| f.value.as_str()).collect();
    let flat_dims: Vec<i64> = root.get_all("input_dim").filter_map(|f| f.value.as_number()?.as_i64()).collect();
    let shapes: Vec<&Message> = root.get_all("input_shape").filter_map(|f| f.value.as_message()).collect();
    for (i, name) in names.iter().enumerate() {
        let dims: Option<Vec<i64>> = if let Some(shape) = shapes.get(i) {
            Some(dims_of(shape))
        } else if flat_dims.len() >= 4 * (i + 1) {
            Some(flat_dims[4 * i..4 * i + 4].to_vec())
        } else {
            None
        };
        let mut layer = IrLayer::new(*name, LayerType::Input);
        match dims {
            Some(d) if d.len() >= 2 => {
                layer.params.insert("shape".into(), ParamValue::Ints(d[1..].to_vec()));
            }
            _ => out.warn(Some(name), "input declares no shape; the default applies"),
        }
        out.model.add_layer(layer, Attach::Explicit(Vec::new()))?;
        state.producer.insert(name.to_string(), name.to_string());
    }
    Ok(())
}

fn dims_of(shape: &Message) -> Vec<i64> {
    shape.get_all("dim").filter_map(|f| f.value.as_number()?.as_i64()).collect()
}

fn dedup<'a>(names: &[&'a str]) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    names.iter().copied().filter(|n| seen.insert(*n)).collect()
}

fn import_layer(msg: &Message, index: usize, out: &mut Imported, state: &mut ImportState) -> Result<(), FrontendError> {
    let name = msg
        .str("name")
        .ok_or_else(|| FrontendError::MissingRequiredField { layer: format!("#{index}"), field: "name".into() })?;
    let type_name = msg
        .str("type")
        .ok_or_else(|| FrontendError::MissingRequiredField { layer: name.into(), field: "type".into() })?;
    let bottoms: Vec<&str> = msg.get_all("bottom").filter_map(|f| f.value.as_str()).collect();
    let tops: Vec<&str> = msg.get_all("top").filter_map(|f| f.value.as_str()).collect();

    let is_data = DATA_TYPES.contains(&type_name);
    let layer_type = if is_data {
        LayerType::Input
    } else {
        NameMap::for_framework(Framework::Caffe).layer_type(type_name).ok_or_else(|| {
            FrontendError::UnknownLayerType { framework: Framework::Caffe, layer: name.into(), name: type_name.into() }
        })?
    };

    let mut unmapped: Vec<&str> = msg
        .fields
        .iter()
        .map(|f| f.name.as_str())
        .filter(|n| !LAYER_FIELDS.contains(n) && !n.ends_with("_param"))
        .collect();

    if layer_type == LayerType::Input {
        return import_inputs(msg, name, &tops, is_data, out, state);
    }

    let mut parents = Vec::with_capacity(bottoms.len());
    for b in &bottoms {
        let p = state
            .producer
            .get(*b)
            .ok_or_else(|| FrontendError::UnknownBlob { layer: name.into(), blob: b.to_string() })?;
        parents.push(p.clone());
    }

    let params = map_params(layer_type, msg, name, &mut unmapped)?;
    if let Some(p) = msg
        .fields
        .iter()
        .find(|f| f.name.ends_with("_param") && !expected_param_block(layer_type).contains(&f.name.as_str()))
    {
        unmapped.push(p.name.as_str());
    }
    if !unmapped.is_empty() {
        out.warn(Some(name), format!("ignored fields: {}", dedup(&unmapped).join(", ")));
    }

    // A bias-carrying Scale directly after a BatchNorm is the BatchNorm's
    // affine part; the IR BatchNorm already includes it.
    if layer_type == LayerType::Scale && parents.len() == 1 {
        let parent = &parents[0];
        let bias = params.get("bias_term").and_then(ParamValue::as_bool).unwrap_or(false);
        let parent_is_bn = out.model.layer(parent).is_some_and(|l| l.layer_type == LayerType::BatchNorm);
        if bias
            && parent_is_bn
            && !state.folded.contains(parent)
            && state.children.get(parent).copied().unwrap_or(0) == 0
        {
            state.folded.insert(parent.clone());
            for t in &tops {
                state.producer.insert(t.to_string(), parent.clone());
            }
            return Ok(());
        }
    }

    let ceil = layer_type == LayerType::Pooling && params.get("ceil_mode").and_then(ParamValue::as_bool) == Some(true);
    let layer = IrLayer { params, ..IrLayer::new(name, layer_type) };
    let connections: Vec<Connection> = parents.iter().map(|p| Connection::new(p.clone(), name)).collect();
    out.model.add_layer(layer, Attach::Explicit(connections))?;
    for p in parents {
        *state.children.entry(p).or_default() += 1;
    }
    if ceil {
        state.ceil_pools.push(name.to_string());
    }
    for t in tops {
        state.producer.insert(t.to_string(), name.to_string());
    }
    Ok(())
}

fn import_inputs(
    msg: &Message,
    name: &str,
    tops: &[&str],
    is_data: bool,
    out: &mut Imported,
    state: &mut ImportState,
) -> Result<(), FrontendError> {
    let shapes: Vec<Vec<i64>> = msg
        .message("input_param")
        .map(|p| p.get_all("shape").filter_map(|f| f.value.as_message()).map(dims_of).collect())
        .unwrap_or_default();
    if is_data {
        out.warn(Some(name), "data source layers import as inputs with the default shape");
    }
    let tops: Vec<&str> = if tops.is_empty() { vec![name] } else { tops.to_vec() };
    for (j, top) in tops.iter().enumerate() {
        let id = if j == 0 { name } else { top };
        let mut layer = IrLayer::new(id, LayerType::Input);
        let dims = shapes.get(j).or(shapes.first());
        match dims {
            Some(d) if d.len() >= 2 => {
                layer.params.insert("shape".into(), ParamValue::Ints(d[1..].to_vec()));
            }
            _ if !is_data => out.warn(Some(id), "input declares no shape; the default applies"),
            _ => {}
        }
        out.model.add_layer(layer, Attach::Explicit(Vec::new()))?;
        state.producer.insert(top.to_string(), id.to_string());
    }
    Ok(())
}

fn expected_param_block(t: LayerType) -> &'static [&'static str] {
    use LayerType::*;
    match t {
        Convolution | Deconvolution => &["convolution_param"],
        Pooling => &["pooling_param"],
        InnerProduct => &["inner_product_param"],
        ReLU => &["relu_param"],
        LRN => &["lrn_param"],
        Dropout => &["dropout_param"],
        BatchNorm => &["batch_norm_param"],
        Scale => &["scale_param"],
        Concat => &["concat_param"],
        Eltwise => &["eltwise_param"],
        Reshape => &["reshape_param"],
        Accuracy => &["accuracy_param"],
        RNN | LSTM => &["recurrent_param"],
        Python => &["python_param"],
        Input => &["input_param"],
        _ => &[],
    }
}

fn int_of(v: &Value) -> Option<i64> {
    v.as_number()?.as_i64()
}

fn float_of(v: &Value) -> Option<f64> {
    v.as_number().map(Number::as_f64)
}

/// Reads the per-dimension family `base` (`kernel_size`/`stride`/`pad`)
/// with its `_h`/`_w` spelling. Returns `None` when absent.
fn per_dim_field(p: &Message, base: &str, hw_prefix: &str, layer: &str) -> Result<Option<Vec<i64>>, FrontendError> {
    let repeated: Vec<i64> = p.get_all(base).filter_map(|f| int_of(&f.value)).collect();
    let h = p.get(&format!("{hw_prefix}_h")).and_then(|f| int_of(&f.value));
    let w = p.get(&format!("{hw_prefix}_w")).and_then(|f| int_of(&f.value));
    match (repeated.is_empty(), h, w) {
        (true, None, None) => Ok(None),
        (true, Some(h), Some(w)) => Ok(Some(vec![h, w])),
        (false, None, None) => Ok(Some(repeated)),
        _ => Err(FrontendError::MalformedDocument(format!(
            "layer '{layer}': give either '{base}' or both '{hw_prefix}_h' and '{hw_prefix}_w'"
        ))),
    }
}

fn spatial_params(
    p: &Message,
    layer: &str,
    kernel_required: bool,
    params: &mut BTreeMap<String, ParamValue>,
) -> Result<usize, FrontendError> {
    let kernel = per_dim_field(p, "kernel_size", "kernel", layer)?;
    let rank = match &kernel {
        Some(k) if k.len() == 1 => 2,
        Some(k) => k.len(),
        None if kernel_required => {
            return Err(FrontendError::MissingRequiredField { layer: layer.into(), field: "kernel_size".into() })
        }
        None => 2,
    };
    if let Some(k) = kernel {
        params.insert("kernel".into(), ParamValue::Ints(per_dim(&k, rank).unwrap_or(k)));
    }
    for (base, key) in [("stride", "stride"), ("pad", "pad")] {
        if let Some(v) = per_dim_field(p, base, base, layer)? {
            let v = per_dim(&v, rank).ok_or_else(|| {
                FrontendError::MalformedDocument(format!(
                    "layer '{layer}': {} '{base}' values for a {rank}-d kernel",
                    v.len()
                ))
            })?;
            params.insert(key.into(), ParamValue::Ints(v));
        }
    }
    Ok(rank)
}

/// Maps one layer's `*_param` block to IR params, collecting names of
/// fields it leaves behind in `unmapped`.
fn map_params<'a>(
    t: LayerType,
    msg: &'a Message,
    layer: &str,
    unmapped: &mut Vec<&'a str>,
) -> Result<BTreeMap<String, ParamValue>, FrontendError> {
    use LayerType::*;

    let mut params = BTreeMap::new();
    let block = expected_param_block(t).first().and_then(|b| msg.message(b));
    let empty = Message::new();
    let p: &Message = block.unwrap_or(&empty);
    let mut used: Vec<&str> = Vec::new();
    let missing = |field: &str| FrontendError::MissingRequiredField { layer: layer.into(), field: field.into() };
    let take_int = |key: &'static str, into: &str, params: &mut BTreeMap<String, ParamValue>, used: &mut Vec<&str>| {
        if let Some(v) = p.get(key).and_then(|f| int_of(&f.value)) {
            params.insert(into.to_string(), ParamValue::Number(v as f64));
        }
        used.push(key);
    };

    match t {
        Convolution | Deconvolution => {
            take_int("num_output", "num_output", &mut params, &mut used);
            if !params.contains_key("num_output") {
                return Err(missing("num_output"));
            }
            spatial_params(p, layer, true, &mut params)?;
            used.extend([
                "kernel_size",
                "kernel_h",
                "kernel_w",
                "stride",
                "stride_h",
                "stride_w",
                "pad",
                "pad_h",
                "pad_w",
            ]);
            if let Some(b) = p.bool("bias_term") {
                params.insert("bias_term".into(), ParamValue::Bool(b));
            }
            used.push("bias_term");
            take_int("group", "group", &mut params, &mut used);
        }
        Pooling => {
            match p.ident("pool") {
                None | Some("MAX") => {}
                Some("AVE") => {
                    params.insert("pool".into(), ParamValue::Text("ave".into()));
                }
                Some(other) => {
                    return Err(FrontendError::MalformedDocument(format!(
                        "layer '{layer}': {other} pooling is not supported"
                    )))
                }
            }
            let global = p.bool("global_pooling").unwrap_or(false);
            if global {
                params.insert("global_pooling".into(), ParamValue::Bool(true));
            }
            spatial_params(p, layer, !global, &mut params)?;
            let floor = p.ident("round_mode") == Some("FLOOR");
            if !floor && !global {
                params.insert("ceil_mode".into(), ParamValue::Bool(true));
            }
            used.extend([
                "pool",
                "global_pooling",
                "round_mode",
                "kernel_size",
                "kernel_h",
                "kernel_w",
                "stride",
                "stride_h",
                "stride_w",
                "pad",
                "pad_h",
                "pad_w",
            ]);
        }
        InnerProduct => {
            take_int("num_output", "num_output", &mut params, &mut used);
            if !params.contains_key("num_output") {
                return Err(missing("num_output"));
            }
            if let Some(b) = p.bool("bias_term") {
                params.insert("bias_term".into(), ParamValue::Bool(b));
            }
            used.push("bias_term");
        }
        ReLU => {
            if let Some(x) = p.get("negative_slope").and_then(|f| float_of(&f.value)) {
                params.insert("negative_slope".into(), ParamValue::Number(x));
            }
            used.push("negative_slope");
        }
        LRN => {
            take_int("local_size", "local_size", &mut params, &mut used);
            for key in ["alpha", "beta", "k"] {
                if let Some(x) = p.get(key).and_then(|f| float_of(&f.value)) {
                    params.insert(key.into(), ParamValue::Number(x));
                }
                used.push(key);
            }
            match p.ident("norm_region") {
                None | Some("ACROSS_CHANNELS") => {}
                Some("WITHIN_CHANNEL") => {
                    params.insert("norm_region".into(), ParamValue::Text("within_channel".into()));
                }
                Some(other) => {
                    return Err(FrontendError::MalformedDocument(format!(
                        "layer '{layer}': unknown norm_region {other}"
                    )))
                }
            }
            used.push("norm_region");
        }
        Dropout => {
            if let Some(x) = p.get("dropout_ratio").and_then(|f| float_of(&f.value)) {
                params.insert("ratio".into(), ParamValue::Number(x));
            }
            used.push("dropout_ratio");
        }
        BatchNorm => {
            if let Some(x) = p.get("eps").and_then(|f| float_of(&f.value)) {
                params.insert("eps".into(), ParamValue::Number(x));
            }
            used.push("eps");
        }
        Scale => {
            if let Some(b) = p.bool("bias_term") {
                params.insert("bias_term".into(), ParamValue::Bool(b));
            }
            used.push("bias_term");
        }
        Concat => {
            let axis = p.get("axis").or_else(|| p.get("concat_dim")).and_then(|f| int_of(&f.value));
            if let Some(a) = axis {
                params.insert("axis".into(), ParamValue::Number(a as f64));
            }
            used.extend(["axis", "concat_dim"]);
        }
        Eltwise => {
            match p.ident("operation") {
                None | Some("SUM") => {}
                Some("PROD") => {
                    params.insert("operation".into(), ParamValue::Text("prod".into()));
                }
                Some("MAX") => {
                    params.insert("operation".into(), ParamValue::Text("max".into()));
                }
                Some(other) => {
                    return Err(FrontendError::MalformedDocument(format!(
                        "layer '{layer}': unknown eltwise operation {other}"
                    )))
                }
            }
            used.push("operation");
        }
        Reshape => {
            let dims = p.message("shape").map(dims_of).ok_or_else(|| missing("reshape_param.shape"))?;
            if dims.is_empty() {
                return Err(missing("reshape_param.shape.dim"));
            }
            let rest = &dims[1..];
            if rest.contains(&0) || rest.is_empty() {
                return Err(FrontendError::MalformedDocument(format!(
                    "layer '{layer}': reshape dims {dims:?} must keep the batch dim first and name every other dim"
                )));
            }
            params.insert("shape".into(), ParamValue::Ints(rest.to_vec()));
            used.push("shape");
        }
        Accuracy => {
            take_int("top_k", "top_k", &mut params, &mut used);
            take_int("axis", "axis", &mut params, &mut used);
        }
        RNN | LSTM => {
            take_int("num_output", "num_output", &mut params, &mut used);
            if !params.contains_key("num_output") {
                return Err(missing("num_output"));
            }
        }
        Python => {
            for key in ["module", "layer"] {
                let v = p.str(key).ok_or_else(|| missing(&format!("python_param.{key}")))?;
                params.insert(key.into(), ParamValue::Text(v.into()));
                used.push(key);
            }
            if let Some(s) = p.str("param_str") {
                if !s.is_empty() {
                    params.insert("param_str".into(), ParamValue::Text(s.into()));
                }
            }
            used.push("param_str");
        }
        Input | Sigmoid | Tanh | Softmax | SoftmaxWithLoss | Flatten | Embedding | GRU => {}
    }

    if let Some(b) = block {
        for f in &b.fields {
            if !used.contains(&f.name.as_str()) {
                unmapped.push(f.name.as_str());
            }
        }
    }
    Ok(params)
}

/// Drops `ceil_mode` where rounding up and down give the same size.
pub(super) fn normalize_ceil_mode(model: &mut IrModel, ceil_pools: &[String]) {
    if ceil_pools.is_empty() {
        return;
    }
    let shapes = infer_shapes_lenient(model, &ShapeMap::new());
    for id in ceil_pools {
        let input = model.parents(id).first().and_then(|p| shapes.get(*p)).cloned();
        let Some(input) = input else { continue };
        let layer = model.layer(id).expect("pool exists");
        if ceil_matches_floor(layer, &input) == Some(true) {
            model.layer_mut(id).expect("pool exists").params.remove("ceil_mode");
        }
    }
}

/// Whether ceil and floor rounding agree for `layer` on `input`; `None`
/// when the layer's geometry does not fit the input.
pub(crate) fn ceil_matches_floor(layer: &IrLayer, input: &TensorShape) -> Option<bool> {
    let spatial = input.spatial();
    let rank = spatial.len();
    let k = per_dim(layer.ints("kernel")?, rank)?;
    let s = per_dim(layer.ints("stride")?, rank)?;
    let p = per_dim(layer.ints("pad")?, rank)?;
    let mut all = true;
    for d in 0..rank {
        let i = spatial[d] as i64;
        let floor = conv_output_size(i, k[d], s[d], p[d])?;
        let ceil = pool_output_size_ceil(i, k[d], s[d], p[d])?;
        all &= floor == ceil;
    }
    Some(all)
}

pub fn export_caffe(model: &IrModel) -> Result<String, FrontendError> {
    check_availability(model, Framework::Caffe, &CustomLayerRegistry::new())?;
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
        .ok_or_else(|| FrontendError::InvalidModel("Caffe networks must be acyclic".into()))?;
    let shapes = infer_shapes_lenient(&model, &ShapeMap::new());
    let layers: Vec<&IrLayer> = model.layers().collect();
    let mut taken: HashSet<String> = layers.iter().map(|l| l.id.clone()).collect();

    let mut root = Message::new();
    if !model.name.is_empty() {
        root.push("name", Value::Str(model.name.clone()));
    }
    for i in order {
        let layer = layers[i];
        let input = index.parents_of(i).first().and_then(|&p| shapes.get(index.id(p)));
        let mut msg = Message::new()
            .with("name", Value::Str(layer.id.clone()))
            .with("type", Value::Str(caffe_type(layer.layer_type).into()));
        for &p in index.parents_of(i) {
            msg.push("bottom", Value::Str(index.id(p).to_string()));
        }
        msg.push("top", Value::Str(layer.id.clone()));
        if let Some((block, body)) = export_params(layer, input)? {
            msg.push(block, Value::Message(body));
        }
        root.push("layer", Value::Message(msg));

        if layer.layer_type == LayerType::BatchNorm {
            let mut scale_name = format!("{}_scale", layer.id);
            while taken.contains(&scale_name) {
                scale_name.push('_');
            }
            taken.insert(scale_name.clone());
            let scale = Message::new()
                .with("name", Value::Str(scale_name))
                .with("type", Value::Str("Scale".into()))
                .with("bottom", Value::Str(layer.id.clone()))
                .with("top", Value::Str(layer.id.clone()))
                .with("scale_param", Value::Message(Message::new().with("bias_term", Value::Ident("true".into()))));
            root.push("layer", Value::Message(scale));
        }
    }
    Ok(print_textproto(&root))
}

fn caffe_type(t: LayerType) -> &'static str {
    NameMap::for_framework(Framework::Caffe).layer_name(t).expect("availability checked before export")
}

fn int(x: f64) -> Value {
    Value::Num(Number::Int(x as i64))
}

fn float(x: f64) -> Value {
    Value::Num(Number::Float(x))
}

fn ident(b: bool) -> Value {
    Value::Ident(if b { "true" } else { "false" }.into())
}

/// Pushes `values` for the family `base`: a single entry when all equal
/// in 2-D, `_h`/`_w` when they differ in 2-D, one entry per dim in 3-D.
/// Nothing is written when every entry equals `default`.
fn push_per_dim(msg: &mut Message, base: &str, hw: &str, values: &[i64], default: Option<i64>) {
    if default.is_some_and(|d| values.iter().all(|&v| v == d)) {
        return;
    }
    match values {
        [a, b] if a == b => msg.push(base, Value::Num(Number::Int(*a))),
        [a, b] => {
            msg.push(format!("{hw}_h"), Value::Num(Number::Int(*a)));
            msg.push(format!("{hw}_w"), Value::Num(Number::Int(*b)));
        }
        _ => {
            for v in values {
                msg.push(base, Value::Num(Number::Int(*v)));
            }
        }
    }
}

fn export_params(
    layer: &IrLayer,
    input: Option<&TensorShape>,
) -> Result<Option<(&'static str, Message)>, FrontendError> {
    use LayerType::*;

    let explicit = |key: &str| -> Option<&ParamValue> {
        let v = layer.params.get(key)?;
        let schema = layer.spec().param(key)?;
        (!schema.is_default(v)).then_some(v)
    };
    let mut p = Message::new();
    let block = match layer.layer_type {
        Input => {
            let mut shape = Message::new().with("dim", Value::Num(Number::Int(1)));
            for d in layer.ints("shape").unwrap_or(&[]) {
                shape.push("dim", Value::Num(Number::Int(*d)));
            }
            p.push("shape", Value::Message(shape));
            "input_param"
        }
        Convolution | Deconvolution => {
            p.push("num_output", int(layer.number("num_output").unwrap_or(1.0)));
            if !layer.flag("bias_term") {
                p.push("bias_term", ident(false));
            }
            spatial_export(layer, input, &mut p, true)?;
            if let Some(g) = explicit("group").and_then(ParamValue::as_number) {
                p.push("group", int(g));
            }
            "convolution_param"
        }
        Pooling => {
            if layer.text("pool") == Some("ave") {
                p.push("pool", Value::Ident("AVE".into()));
            }
            if layer.flag("global_pooling") {
                p.push("global_pooling", ident(true));
            } else {
                spatial_export(layer, input, &mut p, false)?;
                let ceil = layer.flag("ceil_mode");
                let same = input.and_then(|s| ceil_matches_floor(layer, s)) == Some(true);
                if !ceil && !same {
                    p.push("round_mode", Value::Ident("FLOOR".into()));
                }
            }
            "pooling_param"
        }
        InnerProduct => {
            p.push("num_output", int(layer.number("num_output").unwrap_or(1.0)));
            if !layer.flag("bias_term") {
                p.push("bias_term", ident(false));
            }
            "inner_product_param"
        }
        ReLU => {
            if let Some(x) = explicit("negative_slope").and_then(ParamValue::as_number) {
                p.push("negative_slope", float(x));
            }
            "relu_param"
        }
        LRN => {
            if let Some(x) = explicit("local_size").and_then(ParamValue::as_number) {
                p.push("local_size", int(x));
            }
            for key in ["alpha", "beta", "k"] {
                if let Some(x) = explicit(key).and_then(ParamValue::as_number) {
                    p.push(key, float(x));
                }
            }
            if explicit("norm_region").is_some() {
                p.push("norm_region", Value::Ident("WITHIN_CHANNEL".into()));
            }
            "lrn_param"
        }
        Dropout => {
            if let Some(x) = explicit("ratio").and_then(ParamValue::as_number) {
                p.push("dropout_ratio", float(x));
            }
            "dropout_param"
        }
        BatchNorm => {
            if let Some(x) = explicit("eps").and_then(ParamValue::as_number) {
                p.push("eps", float(x));
            }
            "batch_norm_param"
        }
        Scale => {
            if layer.flag("bias_term") {
                p.push("bias_term", ident(true));
            }
            "scale_param"
        }
        Concat => {
            if let Some(x) = explicit("axis").and_then(ParamValue::as_number) {
                p.push("axis", int(x));
            }
            "concat_param"
        }
        Eltwise => {
            match explicit("operation").and_then(ParamValue::as_text) {
                Some("prod") => p.push("operation", Value::Ident("PROD".into())),
                Some("max") => p.push("operation", Value::Ident("MAX".into())),
                _ => {}
            }
            "eltwise_param"
        }
        Reshape => {
            let mut shape = Message::new().with("dim", Value::Num(Number::Int(0)));
            for d in layer.ints("shape").unwrap_or(&[]) {
                shape.push("dim", Value::Num(Number::Int(*d)));
            }
            p.push("shape", Value::Message(shape));
            "reshape_param"
        }
        Accuracy => {
            for key in ["top_k", "axis"] {
                if let Some(x) = explicit(key).and_then(ParamValue::as_number) {
                    p.push(key, int(x));
                }
            }
            "accuracy_param"
        }
        RNN | LSTM => {
            p.push("num_output", int(layer.number("num_output").unwrap_or(1.0)));
            "recurrent_param"
        }
        Python => {
            for key in ["module", "layer"] {
                p.push(key, Value::Str(layer.text(key).unwrap_or_default().into()));
            }
            if let Some(s) = explicit("param_str").and_then(ParamValue::as_text) {
                p.push("param_str", Value::Str(s.into()));
            }
            "python_param"
        }
        Sigmoid | Tanh | Softmax | SoftmaxWithLoss | Flatten => return Ok(None),
        Embedding | GRU => unreachable!("availability checked before export"),
    };
    Ok((!p.is_empty()).then_some((block, p)))
}

fn spatial_export(
    layer: &IrLayer,
    input: Option<&TensorShape>,
    p: &mut Message,
    kernel_required: bool,
) -> Result<(), FrontendError> {
    let kernel = layer.ints("kernel");
    let input_rank = input.and_then(|s| s.rank().checked_sub(1)).filter(|&r| r > 0);
    let rank = match (kernel, input_rank) {
        (Some(k), _) if k.len() > 1 => k.len(),
        (_, Some(r)) => r,
        (Some(k), None) => k.len(),
        (None, None) if kernel_required => {
            return Err(FrontendError::InvalidModel(format!("layer '{}' has no kernel", layer.id)))
        }
        (None, None) => 2,
    };
    if rank == 1 {
        return Err(FrontendError::InexpressibleParam {
            layer_id: layer.id.clone(),
            param: "kernel".into(),
            target: Framework::Caffe,
            reason: "a single kernel_size means every spatial dimension in prototxt, so 1-d kernels do not survive"
                .into(),
        });
    }
    if let Some(k) = kernel {
        // Spelled out in full so a reader does not take it for 2-d.
        let k = per_dim(k, rank).ok_or_else(|| {
            FrontendError::InvalidModel(format!("layer '{}': 'kernel' does not match the input rank", layer.id))
        })?;
        push_per_dim(p, "kernel_size", "kernel", &k, None);
    }
    for (key, default) in [("stride", 1), ("pad", 0)] {
        let values = layer.ints(key).unwrap_or(&[]);
        let values = per_dim(values, rank).ok_or_else(|| {
            FrontendError::InvalidModel(format!("layer '{}': '{key}' does not match the kernel rank", layer.id))
        })?;
        push_per_dim(p, key, key, &values, Some(default));
    }
    Ok(())
}

/// Field order inside emitted layers, for tests that inspect output.
#[cfg(test)]
fn field_names(msg: &Message) -> Vec<&str> {
    msg.fields.iter().map(|f| f.name.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_mapping() {
        let text = r#"
            layer { name: "data" type: "Input" top: "data" input_param { shape { dim: 1 dim: 3 dim: 8 dim: 8 } } }
            layer { name:"conv1" type:"Convolution" bottom:"data" top:"conv1" convolution_param { num_output: 64 kernel_size: 3 } }
        "#;
        let m = import_caffe(text).unwrap().model;
        let c = m.layer("conv1").unwrap();
        assert_eq!(c.layer_type, LayerType::Convolution);
        assert_eq!(c.number("num_output"), Some(64.0));
        assert_eq!(c.ints("kernel"), Some(&[3, 3][..]));
        assert_eq!(m.layer("data").unwrap().ints("shape"), Some(&[3, 8, 8][..]));
        assert!(m.has_connection("data", "conv1"));
    }

    #[test]
    fn accuracy_top_k() {
        let text = r#"
            input: "data" input_dim: 1 input_dim: 10 input_dim: 1 input_dim: 1
            input: "label" input_dim: 1 input_dim: 1 input_dim: 1 input_dim: 1
            layer { name:"acc" type:"Accuracy" bottom: "data" bottom: "label" top: "acc" accuracy_param { top_k: 5 } }
        "#;
        let m = import_caffe(text).unwrap().model;
        assert_eq!(m.layer("acc").unwrap().number("top_k"), Some(5.0));
        assert_eq!(m.parents("acc"), ["data", "label"]);
    }

    #[test]
    fn in_place_chains() {
        let text = r#"
            input: "data" input_dim: 1 input_dim: 3 input_dim: 4 input_dim: 4
            layer { name: "c" type: "Convolution" bottom: "data" top: "c" convolution_param { num_output: 2 kernel_size: 1 } }
            layer { name: "r" type: "ReLU" bottom: "c" top: "c" }
            layer { name: "d" type: "Dropout" bottom: "c" top: "c" }
            layer { name: "p" type: "Pooling" bottom: "c" top: "p" pooling_param { kernel_size: 2 stride: 2 } }
        "#;
        let m = import_caffe(text).unwrap().model;
        let edges: Vec<(&str, &str)> = m.connections().iter().map(|c| (c.from.as_str(), c.to.as_str())).collect();
        assert_eq!(edges, [("data", "c"), ("c", "r"), ("r", "d"), ("d", "p")]);
        // 4 -> 2 either way, so rounding mode is irrelevant and dropped.
        assert!(!m.layer("p").unwrap().params.contains_key("ceil_mode"));
    }

    #[test]
    fn missing_num_output() {
        let text = r#"layer { name: "c" type: "Convolution" convolution_param { kernel_size: 3 } }"#;
        assert!(matches!(
            import_caffe(text),
            Err(FrontendError::MissingRequiredField { field, .. }) if field == "num_output"
        ));
    }

    #[test]
    fn unknown_type_and_blob() {
        assert!(matches!(
            import_caffe(r#"layer { name: "x" type: "Frobnicate" }"#),
            Err(FrontendError::UnknownLayerType { name, .. }) if name == "Frobnicate"
        ));
        assert!(matches!(
            import_caffe(r#"layer { name: "x" type: "ReLU" bottom: "nope" top: "x" }"#),
            Err(FrontendError::UnknownBlob { .. })
        ));
    }

    #[test]
    fn unmapped_fields_warn() {
        let text = r#"
            input: "data" input_dim: 1 input_dim: 3 input_dim: 4 input_dim: 4
            layer { name: "c" type: "Convolution" bottom: "data" top: "c"
                    param { lr_mult: 1 }
                    convolution_param { num_output: 2 kernel_size: 1 weight_filler { type: "xavier" } } }
        "#;
        let imported = import_caffe(text).unwrap();
        assert_eq!(imported.warnings.len(), 1);
        let w = &imported.warnings[0].message;
        assert!(w.contains("param") && w.contains("weight_filler"), "{w}");
    }

    #[test]
    fn batchnorm_scale_fold_and_unfold() {
        let text = r#"
            input: "data" input_dim: 1 input_dim: 3 input_dim: 4 input_dim: 4
            layer { name: "bn" type: "BatchNorm" bottom: "data" top: "data" }
            layer { name: "sc" type: "Scale" bottom: "data" top: "data" scale_param { bias_term: true } }
            layer { name: "r" type: "ReLU" bottom: "data" top: "data" }
        "#;
        let m = import_caffe(text).unwrap().model;
        assert_eq!(m.len(), 3);
        assert!(m.has_connection("bn", "r"));
        let out = export_caffe(&m).unwrap();
        assert!(out.contains("name: \"bn_scale\""), "{out}");
        assert_eq!(import_caffe(&out).unwrap().model.canonicalize(), m.canonicalize());
    }

    #[test]
    fn export_minimal_accuracy() {
        let text = r#"
            input: "a" input_dim: 1 input_dim: 10 input_dim: 1 input_dim: 1
            input: "b" input_dim: 1 input_dim: 1 input_dim: 1 input_dim: 1
            layer { name:"acc" type:"Accuracy" bottom: "a" bottom: "b" top: "acc" }
            layer { name:"acc5" type:"Accuracy" bottom: "a" bottom: "b" top: "acc5" accuracy_param { top_k: 5 } }
        "#;
        let out = export_caffe(&import_caffe(text).unwrap().model).unwrap();
        let root = parse_textproto(&out).unwrap();
        let layers: Vec<&Message> = root.get_all("layer").filter_map(|f| f.value.as_message()).collect();
        assert_eq!(field_names(layers[2]), ["name", "type", "bottom", "bottom", "top"]);
        assert_eq!(layers[3].message("accuracy_param").unwrap().number("top_k"), Some(Number::Int(5)));
    }

    #[test]
    fn embedding_is_unsupported() {
        let mut m = IrModel::new("m");
        m.add_layer(IrLayer::new("in", LayerType::Input).with("shape", vec![5]), Attach::Deepest).unwrap();
        m.add_layer(
            IrLayer::new("emb", LayerType::Embedding).with("input_dim", 10.0).with("output_dim", 4.0),
            Attach::Deepest,
        )
        .unwrap();
        assert!(matches!(
            export_caffe(&m),
            Err(FrontendError::UnsupportedLayer { layer_id, layer_type: LayerType::Embedding, target: Framework::Caffe }) if layer_id == "emb"
        ));
    }

    #[test]
    fn kernel_spellings() {
        let text = r#"
            input: "data" input_dim: 1 input_dim: 3 input_dim: 9 input_dim: 9
            layer { name: "c" type: "Convolution" bottom: "data" top: "c"
                    convolution_param { num_output: 2 kernel_h: 3 kernel_w: 1 stride: 2 pad_h: 1 pad_w: 0 } }
        "#;
        let m = import_caffe(text).unwrap().model;
        let c = m.layer("c").unwrap();
        assert_eq!(c.ints("kernel"), Some(&[3, 1][..]));
        assert_eq!(c.ints("stride"), Some(&[2, 2][..]));
        assert_eq!(c.ints("pad"), Some(&[1, 0][..]));
        let again = import_caffe(&export_caffe(&m).unwrap()).unwrap().model;
        assert_eq!(again.canonicalize(), m.canonicalize());
    }
}
