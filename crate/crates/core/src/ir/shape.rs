//! Output-shape inference, channel-first with the batch dimension omitted.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::catalog::LayerType;
use super::graph::GraphIndex;
use super::model::{IrLayer, IrModel};
use super::value::ParamValue;
use crate::frontends::padding::{self, conv_output_size, per_dim, pool_output_size_ceil, PaddingError, PaddingMode};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorShape(pub Vec<usize>);

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Self {
        TensorShape(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn elements(&self) -> usize {
        self.0.iter().product()
    }

    pub fn channels(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn spatial(&self) -> &[usize] {
        self.0.get(1..).unwrap_or(&[])
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("x"))
    }
}

impl FromStr for TensorShape {
    type Err = String;

    /// Parses `3,224,224` (commas or `x` between dims).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims = s
            .split([',', 'x', 'X'])
            .map(|p| match p.trim().parse::<usize>() {
                Ok(d) if d >= 1 => Ok(d),
                _ => Err(format!("invalid dimension {p:?} in shape {s:?}")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if dims.is_empty() {
            return Err("empty shape".into());
        }
        Ok(TensorShape(dims))
    }
}

pub type ShapeMap = BTreeMap<String, TensorShape>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("ShapeConflict: layer '{layer_id}': {message}")]
    ShapeConflict { layer_id: String, message: String },
    #[error("CyclicGraph: shapes need an acyclic graph ({from} -> {to} closes a cycle)")]
    CyclicGraph { from: String, to: String },
    #[error("MissingInputShape: layer '{0}' has no inputs and no input shape")]
    MissingInputShape(String),
    #[error("AsymmetricPadding: layer '{layer_id}' needs {total} total padding in dimension {dim}")]
    AsymmetricPadding { layer_id: String, dim: usize, total: i64 },
}

fn conflict(layer: &IrLayer, message: impl Into<String>) -> ShapeError {
    ShapeError::ShapeConflict { layer_id: layer.id.clone(), message: message.into() }
}

/// Shapes declared by the model's Input layers.
pub fn declared_input_shapes(model: &IrModel) -> ShapeMap {
    model
        .layers()
        .filter(|l| l.layer_type == LayerType::Input)
        .filter_map(|l| {
            let dims = l.ints("shape")?;
            let dims: Option<Vec<usize>> = dims.iter().map(|&d| usize::try_from(d).ok().filter(|&d| d >= 1)).collect();
            Some((l.id.clone(), TensorShape(dims?)))
        })
        .collect()
}

/// Output shapes of every layer. `input_shapes` supplies, for each layer
/// without parents, the shape it receives; Input layers fall back to their
/// declared `shape`.
pub fn infer_shapes(model: &IrModel, input_shapes: &ShapeMap) -> Result<ShapeMap, ShapeError> {
    let index = GraphIndex::new(model);
    let order = topo_order(&index)?;
    run(model, &index, input_shapes, &order)
}

/// [`infer_shapes`] following a caller-supplied order, which must be
/// topological.
pub fn infer_shapes_in_order(model: &IrModel, input_shapes: &ShapeMap, order: &[&str]) -> Result<ShapeMap, ShapeError> {
    let index = GraphIndex::new(model);
    topo_order(&index)?;
    let order: Vec<usize> = order
        .iter()
        .map(|id| index.position(id).ok_or_else(|| ShapeError::MissingInputShape(id.to_string())))
        .collect::<Result<_, _>>()?;
    run(model, &index, input_shapes, &order)
}

/// Best-effort variant of [`infer_shapes`]: layers whose shape cannot be
/// computed are left out and their descendants skipped. Back-edges are
/// ignored, so cyclic models still yield shapes for their acyclic part.
pub fn infer_shapes_lenient(model: &IrModel, input_shapes: &ShapeMap) -> ShapeMap {
    let index = GraphIndex::new(model);
    let back: HashSet<(usize, usize)> = index.back_edges().into_iter().collect();
    let order = index.topological_order(&back).unwrap_or_default();
    let layers: Vec<&IrLayer> = model.layers().collect();
    let mut out: Vec<Option<TensorShape>> = vec![None; layers.len()];
    for i in order {
        let layer = layers[i];
        let parents: Vec<usize> = index.parents_of(i).iter().copied().filter(|&p| !back.contains(&(p, i))).collect();
        out[i] = if parents.is_empty() {
            match (layer.layer_type, input_shapes.get(&layer.id)) {
                (LayerType::Input, Some(s)) => Some(s.clone()),
                (LayerType::Input, None) => declared_input_shapes_one(layer),
                (_, Some(s)) => layer_output_shape(layer, &[s]).ok(),
                (_, None) => None,
            }
        } else {
            let inputs: Option<Vec<&TensorShape>> = parents.iter().map(|&p| out[p].as_ref()).collect();
            inputs.and_then(|v| layer_output_shape(layer, &v).ok())
        };
    }
    layers.iter().zip(out).filter_map(|(l, s)| s.map(|s| (l.id.clone(), s))).collect()
}

fn topo_order(index: &GraphIndex) -> Result<Vec<usize>, ShapeError> {
    index.topological_order(&HashSet::new()).ok_or_else(|| {
        let (from, to) = index.back_edges().first().copied().unwrap_or((0, 0));
        ShapeError::CyclicGraph { from: index.id(from).to_string(), to: index.id(to).to_string() }
    })
}

fn run(model: &IrModel, index: &GraphIndex, input_shapes: &ShapeMap, order: &[usize]) -> Result<ShapeMap, ShapeError> {
    let layers: Vec<&IrLayer> = model.layers().collect();
    let mut out: Vec<Option<TensorShape>> = vec![None; layers.len()];
    for &i in order {
        let layer = layers[i];
        let parents = index.parents_of(i);
        let shape = if parents.is_empty() {
            let given = input_shapes.get(&layer.id);
            if layer.layer_type == LayerType::Input {
                match given {
                    Some(s) => s.clone(),
                    None => declared_input_shapes_one(layer)
                        .ok_or_else(|| ShapeError::MissingInputShape(layer.id.clone()))?,
                }
            } else {
                let given = given.ok_or_else(|| ShapeError::MissingInputShape(layer.id.clone()))?;
                layer_output_shape(layer, &[given])?
            }
        } else {
            let inputs = parents
                .iter()
                .map(|&p| {
                    out[p]
                        .as_ref()
                        .ok_or_else(|| conflict(layer, format!("parent '{}' was not yet computed", index.id(p))))
                })
                .collect::<Result<Vec<_>, _>>()?;
            layer_output_shape(layer, &inputs)?
        };
        out[i] = Some(shape);
    }
    Ok(layers.iter().zip(out).filter_map(|(l, s)| s.map(|s| (l.id.clone(), s))).collect())
}

fn declared_input_shapes_one(layer: &IrLayer) -> Option<TensorShape> {
    let dims = layer.ints("shape")?;
    dims.iter().map(|&d| usize::try_from(d).ok().filter(|&d| d >= 1)).collect::<Option<Vec<_>>>().map(TensorShape)
}

/// Output shape of one layer given its input shapes in parent order.
pub fn layer_output_shape(layer: &IrLayer, inputs: &[&TensorShape]) -> Result<TensorShape, ShapeError> {
    use LayerType::*;

    let first = || inputs.first().copied().ok_or_else(|| conflict(layer, "layer has no input"));
    match layer.layer_type {
        Input => declared_input_shapes_one(layer).ok_or_else(|| conflict(layer, "input shape must hold positive dims")),
        Convolution | Deconvolution | Pooling => spatial_output(layer, first()?),
        InnerProduct => Ok(TensorShape(vec![positive(layer, "num_output")?])),
        ReLU | Sigmoid | Tanh | Softmax | LRN | Dropout | BatchNorm | Scale | Python => Ok(first()?.clone()),
        Accuracy | SoftmaxWithLoss => Ok(TensorShape(vec![1])),
        Concat => concat(layer, inputs),
        Eltwise => {
            let a = first()?;
            if let Some(b) = inputs.iter().find(|s| **s != a) {
                return Err(conflict(layer, format!("eltwise inputs differ: {a} vs {b}")));
            }
            Ok(a.clone())
        }
        Flatten => Ok(TensorShape(vec![first()?.elements()])),
        Reshape => reshape(layer, first()?),
        Embedding => {
            let input = first()?;
            if input.rank() != 1 {
                return Err(conflict(layer, format!("embedding expects a [length] input, got {input}")));
            }
            Ok(TensorShape(vec![positive(layer, "output_dim")?, input.0[0]]))
        }
        RNN | LSTM | GRU => {
            let input = first()?;
            if input.rank() != 2 {
                return Err(conflict(layer, format!("recurrent layers expect a [features, steps] input, got {input}")));
            }
            let hidden = positive(layer, "num_output")?;
            if layer.flag("return_sequences") {
                Ok(TensorShape(vec![hidden, input.0[1]]))
            } else {
                Ok(TensorShape(vec![hidden]))
            }
        }
    }
}

fn positive(layer: &IrLayer, key: &str) -> Result<usize, ShapeError> {
    match layer.number(key) {
        Some(x) if x >= 1.0 && x.fract() == 0.0 => Ok(x as usize),
        Some(x) => Err(conflict(layer, format!("'{key}' = {x} is not a positive integer"))),
        None => Err(conflict(layer, format!("'{key}' is not set"))),
    }
}

fn spatial_output(layer: &IrLayer, input: &TensorShape) -> Result<TensorShape, ShapeError> {
    if input.rank() < 2 {
        return Err(conflict(layer, format!("spatial layer needs [C, spatial...] input, got {input}")));
    }
    let spatial = input.spatial();
    let rank = spatial.len();
    let channels = match layer.layer_type {
        LayerType::Pooling => input.0[0],
        _ => positive(layer, "num_output")?,
    };
    if layer.layer_type == LayerType::Pooling && layer.flag("global_pooling") {
        let mut dims = vec![channels];
        dims.extend(std::iter::repeat_n(1, rank));
        return Ok(TensorShape(dims));
    }

    let dims_of = |key: &str| -> Result<Vec<i64>, ShapeError> {
        let v = layer.ints(key).ok_or_else(|| conflict(layer, format!("'{key}' is not set")))?;
        per_dim(v, rank)
            .ok_or_else(|| conflict(layer, format!("'{key}' has {} entries for a {rank}-d input {input}", v.len())))
    };
    let kernel = dims_of("kernel")?;
    let stride = dims_of("stride")?;
    let pad = dims_of("pad")?;
    let mode = layer.text("padding_mode").unwrap_or("numeric");
    let ceil = layer.layer_type == LayerType::Pooling && layer.flag("ceil_mode");

    let mut dims = vec![channels];
    for d in 0..rank {
        let (i, k, s, p) = (spatial[d] as i64, kernel[d], stride[d], pad[d]);
        let size = match (layer.layer_type, mode) {
            (LayerType::Deconvolution, "same") => Some(i * s),
            (LayerType::Deconvolution, m) => {
                let p = if m == "valid" { 0 } else { p };
                Some((i - 1) * s - 2 * p + k).filter(|&o| o >= 1)
            }
            (_, "same") => Some((i + s - 1) / s),
            (_, "valid") => conv_output_size(i, k, s, 0),
            _ if ceil => pool_output_size_ceil(i, k, s, p),
            _ => conv_output_size(i, k, s, p),
        };
        match size {
            Some(o) if o >= 1 => dims.push(o as usize),
            _ => {
                return Err(conflict(
                    layer,
                    format!(
                        "dimension {d} would be {} (input {i}, kernel {k}, stride {s}, pad {p})",
                        if s >= 1 { (i + 2 * p - k).div_euclid(s) + 1 } else { 0 }
                    ),
                ))
            }
        }
    }
    Ok(TensorShape(dims))
}

fn concat(layer: &IrLayer, inputs: &[&TensorShape]) -> Result<TensorShape, ShapeError> {
    let first = inputs.first().ok_or_else(|| conflict(layer, "concat has no inputs"))?;
    let axis = layer.number("axis").unwrap_or(1.0) as i64;
    let rank = first.rank() as i64;
    // Axis counts the omitted batch dimension; negative axes count from the end.
    let idx = if axis < 0 { rank + axis } else { axis - 1 };
    if !(0..rank).contains(&idx) {
        return Err(conflict(layer, format!("axis {axis} is out of range for {first}")));
    }
    let idx = idx as usize;
    let mut dims = first.0.clone();
    for other in &inputs[1..] {
        let agree = other.rank() == first.rank() && (0..first.rank()).all(|d| d == idx || other.0[d] == first.0[d]);
        if !agree {
            return Err(conflict(layer, format!("concat inputs {first} and {other} disagree off axis {axis}")));
        }
        dims[idx] += other.0[idx];
    }
    Ok(TensorShape(dims))
}

fn reshape(layer: &IrLayer, input: &TensorShape) -> Result<TensorShape, ShapeError> {
    let target = layer.ints("shape").ok_or_else(|| conflict(layer, "'shape' is not set"))?;
    let total = input.elements();
    let known: usize = target.iter().filter(|&&d| d > 0).map(|&d| d as usize).product();
    let mut dims = Vec::with_capacity(target.len());
    for &d in target {
        match d {
            -1 => {
                if known == 0 || total % known != 0 {
                    return Err(conflict(layer, format!("cannot reshape {input} into {target:?}")));
                }
                dims.push(total / known);
            }
            d if d >= 1 => dims.push(d as usize),
            _ => return Err(conflict(layer, format!("invalid target dim {d}"))),
        }
    }
    if dims.iter().product::<usize>() != total {
        return Err(conflict(layer, format!("cannot reshape {input} ({total} elements) into {target:?}")));
    }
    Ok(TensorShape(dims))
}

/// Rewrites every `padding_mode` of "same"/"valid" into numeric `pad`,
/// walking the graph in topological order so each layer sees its real
/// input shape. Stride-1 convolution and pooling do not depend on the input
/// size, so they resolve even when shapes are unknown.
pub fn resolve_model_padding(model: &mut IrModel, input_shapes: &ShapeMap) -> Result<(), ShapeError> {
    let index = GraphIndex::new(model);
    let order = topo_order(&index)?;
    let ids: Vec<String> = model.layers().map(|l| l.id.clone()).collect();
    let mut shapes: Vec<Option<TensorShape>> = vec![None; ids.len()];
    for i in order {
        let layer = model.layer(&ids[i]).expect("indexed layer exists");
        let inputs: Option<Vec<TensorShape>> = if index.parents_of(i).is_empty() {
            input_shapes
                .get(&layer.id)
                .cloned()
                .or_else(|| (layer.layer_type == LayerType::Input).then(|| declared_input_shapes_one(layer)).flatten())
                .map(|s| vec![s])
        } else {
            index.parents_of(i).iter().map(|&p| shapes[p].clone()).collect()
        };

        let mode = layer.text("padding_mode").and_then(PaddingMode::from_name);
        if let (true, Some(mode)) = (layer.layer_type.is_spatial(), mode) {
            let first = inputs.as_ref().and_then(|v| v.first());
            let pad = resolve_layer_padding(layer, &mode, first)?;
            let layer = model.layer_mut(&ids[i]).expect("indexed layer exists");
            layer.params.remove("padding_mode");
            layer.params.insert("pad".into(), ParamValue::Ints(pad));
        }

        let layer = model.layer(&ids[i]).expect("indexed layer exists");
        shapes[i] = match (layer.layer_type, inputs) {
            (LayerType::Input, inputs) => inputs.and_then(|mut v| v.pop()),
            (_, Some(v)) => {
                let refs: Vec<&TensorShape> = v.iter().collect();
                layer_output_shape(layer, &refs).ok()
            }
            (_, None) => None,
        };
    }
    Ok(())
}

fn resolve_layer_padding(
    layer: &IrLayer,
    mode: &PaddingMode,
    input: Option<&TensorShape>,
) -> Result<Vec<i64>, ShapeError> {
    let kernel = layer.ints("kernel").unwrap_or(&[1]).to_vec();
    let stride = layer.ints("stride").unwrap_or(&[1]).to_vec();
    let rank = match input {
        Some(s) if s.rank() >= 2 => s.rank() - 1,
        _ => kernel.len(),
    };
    let map_err = |e: PaddingError| match e {
        PaddingError::AsymmetricPadding { dim, total } => {
            ShapeError::AsymmetricPadding { layer_id: layer.id.clone(), dim, total }
        }
        PaddingError::RankMismatch(m) => conflict(layer, m),
    };
    if layer.layer_type == LayerType::Deconvolution {
        return padding::resolve_padding_transposed(mode, &kernel, &stride, rank).map_err(map_err);
    }
    if layer.flag("global_pooling") {
        return Ok(vec![0; rank]);
    }
    match input {
        Some(s) if s.rank() >= 2 => padding::resolve_padding(mode, s.spatial(), &kernel, &stride).map_err(map_err),
        _ => {
            let strides = per_dim(&stride, rank).unwrap_or_default();
            if *mode == PaddingMode::Valid || strides.iter().all(|&s| s == 1) {
                // With stride 1 the "same" total is kernel − 1 for any input size.
                padding::resolve_padding(mode, &vec![1; rank], &kernel, &stride).map_err(map_err)
            } else {
                Err(ShapeError::MissingInputShape(layer.id.clone()))
            }
        }
    }
}
