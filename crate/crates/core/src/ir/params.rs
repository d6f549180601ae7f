//! Trainable-parameter counting.

use thiserror::Error;

use super::catalog::LayerType;
use super::graph::GraphIndex;
use super::model::{IrLayer, IrModel};
use super::shape::{declared_input_shapes, infer_shapes, infer_shapes_lenient, ShapeError, ShapeMap, TensorShape};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamCountError {
    #[error("MissingShape: input shape of layer '{0}' is unknown")]
    MissingShape(String),
    #[error("layer '{layer_id}': {message}")]
    InvalidLayer { layer_id: String, message: String },
    #[error("parameter count overflows at layer '{0}'")]
    Overflow(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CountError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Count(#[from] ParamCountError),
}

impl CountError {
    pub fn code(&self) -> &'static str {
        match self {
            CountError::Shape(ShapeError::ShapeConflict { .. }) => "ShapeConflict",
            CountError::Shape(ShapeError::CyclicGraph { .. }) => "CyclicGraph",
            CountError::Shape(ShapeError::MissingInputShape(_)) => "MissingInputShape",
            CountError::Shape(ShapeError::AsymmetricPadding { .. }) => "AsymmetricPadding",
            CountError::Count(ParamCountError::MissingShape(_)) => "MissingShape",
            CountError::Count(ParamCountError::InvalidLayer { .. }) => "InvalidLayer",
            CountError::Count(ParamCountError::Overflow(_)) => "Overflow",
        }
    }
}

/// Total trainable parameters with shapes inferred from the model's
/// declared inputs, overridden per layer id by `input_shapes`. When some
/// input shape is unknown, layers that do not need it are still counted
/// and a learnable layer that does fails with `MissingShape`.
pub fn total_parameters(model: &IrModel, input_shapes: &ShapeMap) -> Result<u64, CountError> {
    let mut inputs = declared_input_shapes(model);
    inputs.extend(input_shapes.iter().map(|(k, v)| (k.clone(), v.clone())));
    let shapes = match infer_shapes(model, &inputs) {
        Ok(shapes) => shapes,
        Err(ShapeError::MissingInputShape(_)) => infer_shapes_lenient(model, &inputs),
        Err(e) => return Err(e.into()),
    };
    Ok(count_with_roots(model, &shapes, &inputs)?)
}

/// Sum of per-layer trainable parameters. `shapes` maps layer ids to
/// output shapes (as returned by [`infer_shapes`](super::infer_shapes));
/// a layer's input is its first parent's output.
pub fn count_parameters(model: &IrModel, shapes: &ShapeMap) -> Result<u64, ParamCountError> {
    count_with_roots(model, shapes, &ShapeMap::new())
}

/// As [`count_parameters`], with `roots` giving the shape received by
/// layers that have no parents.
fn count_with_roots(model: &IrModel, shapes: &ShapeMap, roots: &ShapeMap) -> Result<u64, ParamCountError> {
    let index = GraphIndex::new(model);
    let mut total: u64 = 0;
    for (i, layer) in model.layers().enumerate() {
        let input = match index.parents_of(i).first() {
            Some(&p) => shapes.get(index.id(p)),
            None => roots.get(&layer.id),
        };
        let n = layer_parameter_count(layer, input)?;
        total = total.checked_add(n).ok_or_else(|| ParamCountError::Overflow(layer.id.clone()))?;
    }
    Ok(total)
}

/// Trainable parameters of one layer given the shape it receives.
pub fn layer_parameter_count(layer: &IrLayer, input: Option<&TensorShape>) -> Result<u64, ParamCountError> {
    use LayerType::*;

    if !layer.spec().learnable {
        return Ok(0);
    }
    let id = &layer.id;
    let need = || input.ok_or_else(|| ParamCountError::MissingShape(id.clone()));
    let int = |key: &str| -> Result<u64, ParamCountError> {
        match layer.number(key) {
            Some(x) if x >= 0.0 && x.fract() == 0.0 => Ok(x as u64),
            _ => Err(ParamCountError::InvalidLayer {
                layer_id: id.clone(),
                message: format!("'{key}' must be a nonnegative integer"),
            }),
        }
    };
    let overflow = || ParamCountError::Overflow(id.clone());
    let mul = |a: u64, b: u64| a.checked_mul(b).ok_or_else(overflow);
    let add = |a: u64, b: u64| a.checked_add(b).ok_or_else(overflow);
    let bias = |out: u64| if layer.flag("bias_term") { out } else { 0 };
    let channels = || -> Result<u64, ParamCountError> {
        Ok(need()?.channels().ok_or_else(|| ParamCountError::MissingShape(id.clone()))? as u64)
    };

    match layer.layer_type {
        Convolution | Deconvolution => {
            let input = need()?;
            let out = int("num_output")?;
            let rank = input.rank().saturating_sub(1).max(1);
            let kernel = layer.ints("kernel").unwrap_or(&[]);
            let kernel: Vec<i64> = match kernel.len() {
                1 => vec![kernel[0]; rank],
                _ => kernel.to_vec(),
            };
            let mut window: u64 = 1;
            for k in kernel {
                window = mul(window, u64::try_from(k).map_err(|_| overflow())?)?;
            }
            let group = int("group")?.max(1);
            let weights = mul(mul(out, channels()? / group)?, window)?;
            add(weights, bias(out))
        }
        InnerProduct => {
            let out = int("num_output")?;
            let features = need()?.elements() as u64;
            add(mul(features, out)?, bias(out))
        }
        BatchNorm => mul(2, channels()?),
        Scale => mul(channels()?, 1 + u64::from(layer.flag("bias_term"))),
        Embedding => mul(int("input_dim")?, int("output_dim")?),
        RNN | LSTM | GRU => {
            let gates = match layer.layer_type {
                LSTM => 4,
                GRU => 3,
                _ => 1,
            };
            let hidden = int("num_output")?;
            let features = channels()?;
            mul(mul(gates, hidden)?, add(add(features, hidden)?, 1)?)
        }
        _ => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{LayerType, TensorShape};

    #[test]
    fn totals_with_and_without_input_shapes() {
        use crate::ir::Attach;
        let mut m = IrModel::new("t");
        m.add_layer(IrLayer::new("r", LayerType::ReLU), Attach::Deepest).unwrap();
        assert_eq!(total_parameters(&m, &ShapeMap::new()), Ok(0));

        let mut m = IrModel::new("t");
        let conv = IrLayer::new("c", LayerType::Convolution).with("num_output", 8.0).with("kernel", vec![3, 3]);
        m.add_layer(conv, Attach::Deepest).unwrap();
        m.add_layer(IrLayer::new("r", LayerType::ReLU), Attach::Deepest).unwrap();
        assert_eq!(
            total_parameters(&m, &ShapeMap::new()),
            Err(CountError::Count(ParamCountError::MissingShape("c".into())))
        );
        let given = ShapeMap::from([("c".to_string(), TensorShape(vec![2, 9, 9]))]);
        assert_eq!(total_parameters(&m, &given), Ok(8 * 2 * 9 + 8));
    }

    #[test]
    fn conv_3x3() {
        let l = IrLayer::new("c", LayerType::Convolution).with("num_output", 64.0).with("kernel", vec![3, 3]);
        assert_eq!(layer_parameter_count(&l, Some(&TensorShape(vec![3, 224, 224]))), Ok(1792));
    }

    #[test]
    fn inner_product() {
        let l = IrLayer::new("fc", LayerType::InnerProduct).with("num_output", 1000.0);
        assert_eq!(layer_parameter_count(&l, Some(&TensorShape(vec![4096]))), Ok(4_097_000));
        let l = l.with("bias_term", false);
        assert_eq!(layer_parameter_count(&l, Some(&TensorShape(vec![4096]))), Ok(4_096_000));
    }

    #[test]
    fn relu_is_free() {
        assert_eq!(layer_parameter_count(&IrLayer::new("r", LayerType::ReLU), None), Ok(0));
    }

    #[test]
    fn missing_shape() {
        let l = IrLayer::new("c", LayerType::Convolution).with("num_output", 4.0).with("kernel", vec![3]);
        assert_eq!(layer_parameter_count(&l, None), Err(ParamCountError::MissingShape("c".into())));
    }

    #[test]
    fn recurrent_and_embedding() {
        let input = TensorShape(vec![300, 26]);
        let lstm = IrLayer::new("l", LayerType::LSTM).with("num_output", 512.0);
        assert_eq!(layer_parameter_count(&lstm, Some(&input)), Ok(4 * 512 * (300 + 512 + 1)));
        let gru = IrLayer::new("g", LayerType::GRU).with("num_output", 8.0);
        assert_eq!(layer_parameter_count(&gru, Some(&TensorShape(vec![4, 3]))), Ok(3 * 8 * 13));
        let emb = IrLayer::new("e", LayerType::Embedding).with("input_dim", 1000.0).with("output_dim", 300.0);
        assert_eq!(layer_parameter_count(&emb, None), Ok(300_000));
    }
}
