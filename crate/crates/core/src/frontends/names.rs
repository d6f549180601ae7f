//! Identifier tables between framework vocabularies and the IR.

use crate::ir::{Framework, LayerType};

/// Bidirectional layer/parameter name tables for one framework.
#[derive(Debug, Clone, Copy)]
pub struct NameMap {
    pub framework: Framework,
    layers: &'static [(&'static str, LayerType)],
    params: &'static [(&'static str, &'static str)],
}

const CAFFE_LAYERS: &[(&str, LayerType)] = &[
    ("Input", LayerType::Input),
    ("Convolution", LayerType::Convolution),
    ("Deconvolution", LayerType::Deconvolution),
    ("Pooling", LayerType::Pooling),
    ("InnerProduct", LayerType::InnerProduct),
    ("ReLU", LayerType::ReLU),
    ("Sigmoid", LayerType::Sigmoid),
    ("TanH", LayerType::Tanh),
    ("Softmax", LayerType::Softmax),
    ("SoftmaxWithLoss", LayerType::SoftmaxWithLoss),
    ("Accuracy", LayerType::Accuracy),
    ("LRN", LayerType::LRN),
    ("Dropout", LayerType::Dropout),
    ("BatchNorm", LayerType::BatchNorm),
    ("Scale", LayerType::Scale),
    ("Concat", LayerType::Concat),
    ("Eltwise", LayerType::Eltwise),
    ("Flatten", LayerType::Flatten),
    ("Reshape", LayerType::Reshape),
    ("RNN", LayerType::RNN),
    ("LSTM", LayerType::LSTM),
    ("Python", LayerType::Python),
];

/// (framework field, IR param) pairs for Caffe `*_param` messages.
const CAFFE_PARAMS: &[(&str, &str)] = &[
    ("num_output", "num_output"),
    ("kernel_size", "kernel"),
    ("stride", "stride"),
    ("pad", "pad"),
    ("bias_term", "bias_term"),
    ("group", "group"),
    ("pool", "pool"),
    ("global_pooling", "global_pooling"),
    ("round_mode", "ceil_mode"),
    ("negative_slope", "negative_slope"),
    ("top_k", "top_k"),
    ("axis", "axis"),
    ("local_size", "local_size"),
    ("alpha", "alpha"),
    ("beta", "beta"),
    ("k", "k"),
    ("norm_region", "norm_region"),
    ("dropout_ratio", "ratio"),
    ("eps", "eps"),
    ("operation", "operation"),
    ("shape", "shape"),
    ("module", "module"),
    ("layer", "layer"),
    ("param_str", "param_str"),
];

/// Keras class names. Dimensional variants (Conv1D/2D/3D, pooling) map to
/// one IR type; the entry listed here is the 2-D spelling.
const KERAS_LAYERS: &[(&str, LayerType)] = &[
    ("InputLayer", LayerType::Input),
    ("Conv2D", LayerType::Convolution),
    ("Conv2DTranspose", LayerType::Deconvolution),
    ("MaxPooling2D", LayerType::Pooling),
    ("Dense", LayerType::InnerProduct),
    ("ReLU", LayerType::ReLU),
    ("Softmax", LayerType::Softmax),
    ("Dropout", LayerType::Dropout),
    ("BatchNormalization", LayerType::BatchNorm),
    ("Concatenate", LayerType::Concat),
    ("Add", LayerType::Eltwise),
    ("Flatten", LayerType::Flatten),
    ("Reshape", LayerType::Reshape),
    ("Embedding", LayerType::Embedding),
    ("SimpleRNN", LayerType::RNN),
    ("LSTM", LayerType::LSTM),
    ("GRU", LayerType::GRU),
    ("LRN", LayerType::LRN),
];

const KERAS_PARAMS: &[(&str, &str)] = &[
    ("filters", "num_output"),
    ("units", "num_output"),
    ("kernel_size", "kernel"),
    ("pool_size", "kernel"),
    ("strides", "stride"),
    ("use_bias", "bias_term"),
    ("groups", "group"),
    ("rate", "ratio"),
    ("epsilon", "eps"),
    ("axis", "axis"),
    ("input_dim", "input_dim"),
    ("output_dim", "output_dim"),
    ("return_sequences", "return_sequences"),
    ("target_shape", "shape"),
    ("alpha", "negative_slope"),
    ("n", "local_size"),
];

impl NameMap {
    pub fn for_framework(framework: Framework) -> NameMap {
        match framework {
            Framework::Caffe => NameMap { framework, layers: CAFFE_LAYERS, params: CAFFE_PARAMS },
            Framework::Keras => NameMap { framework, layers: KERAS_LAYERS, params: KERAS_PARAMS },
        }
    }

    pub fn layer_type(&self, name: &str) -> Option<LayerType> {
        self.layers.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    pub fn layer_name(&self, layer_type: LayerType) -> Option<&'static str> {
        self.layers.iter().find(|(_, t)| *t == layer_type).map(|(n, _)| *n)
    }

    pub fn layer_pairs(&self) -> &'static [(&'static str, LayerType)] {
        self.layers
    }

    /// IR parameter for a framework field name. Several Keras fields
    /// (`filters`, `units`) share one IR key.
    pub fn ir_param(&self, field: &str) -> Option<&'static str> {
        self.params.iter().find(|(f, _)| *f == field).map(|(_, p)| *p)
    }

    pub fn param_pairs(&self) -> &'static [(&'static str, &'static str)] {
        self.params
    }
}

/// The Keras class for an IR layer of the given spatial rank.
pub fn keras_class(layer_type: LayerType, rank: usize, pool: &str, global: bool) -> Option<String> {
    let r = rank.clamp(1, 3);
    Some(match layer_type {
        LayerType::Convolution => format!("Conv{r}D"),
        LayerType::Deconvolution => format!("Conv{r}DTranspose"),
        LayerType::Pooling => {
            let kind = if pool == "ave" { "Average" } else { "Max" };
            if global {
                format!("Global{kind}Pooling{r}D")
            } else {
                format!("{kind}Pooling{r}D")
            }
        }
        other => NameMap::for_framework(crate::ir::Framework::Keras).layer_name(other)?.to_string(),
    })
}

/// Inverse of [`keras_class`] for the dimensional families: returns the IR
/// type, spatial rank, and for pooling the method and global flag.
pub fn parse_keras_spatial(class: &str) -> Option<(LayerType, usize, &'static str, bool)> {
    let class = class.strip_prefix("Convolution").map_or(class.to_string(), |rest| format!("Conv{rest}"));
    let rank_at = |s: &str| -> Option<usize> {
        let d = s.strip_suffix('D')?;
        match d {
            "1" => Some(1),
            "2" => Some(2),
            "3" => Some(3),
            _ => None,
        }
    };
    if let Some(rest) = class.strip_prefix("Conv") {
        if let Some(dim) = rest.strip_suffix("Transpose") {
            return rank_at(dim).map(|r| (LayerType::Deconvolution, r, "", false));
        }
        return rank_at(rest).map(|r| (LayerType::Convolution, r, "", false));
    }
    let (global, rest) = match class.strip_prefix("Global") {
        Some(rest) => (true, rest),
        None => (false, class.as_str()),
    };
    let (pool, rest) = [("MaxPooling", "max"), ("AveragePooling", "ave"), ("MaxPool", "max"), ("AvgPool", "ave")]
        .iter()
        .find_map(|(prefix, pool)| rest.strip_prefix(prefix).map(|r| (*pool, r)))?;
    rank_at(rest).map(|r| (LayerType::Pooling, r, pool, global))
}
