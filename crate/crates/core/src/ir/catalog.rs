//! The layer catalog: one [`LayerSpec`] per [`LayerType`].
//!
//! A spec carries the parameter schema shown in the side pane, the
//! presentation metadata the canvas needs (color, endpoint labels, default
//! name) and the framework availability flags the exporters consult.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::value::ParamValue;
use super::IrError;

/// A concrete model format the frontends can read and write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Caffe,
    Keras,
}

impl Framework {
    pub const ALL: [Framework; 2] = [Framework::Caffe, Framework::Keras];

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Caffe => "caffe",
            Framework::Keras => "keras",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Framework::Caffe => "Caffe",
            Framework::Keras => "Keras",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Framework {
    type Err = IrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "caffe" => Ok(Framework::Caffe),
            "keras" => Ok(Framework::Keras),
            other => Err(IrError::UnknownFramework(other.to_string())),
        }
    }
}

/// Which frameworks natively express a layer or parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Availability {
    pub caffe: bool,
    pub keras: bool,
}

impl Availability {
    pub const BOTH: Availability = Availability { caffe: true, keras: true };
    pub const CAFFE_ONLY: Availability = Availability { caffe: true, keras: false };
    pub const KERAS_ONLY: Availability = Availability { caffe: false, keras: true };

    pub fn contains(self, framework: Framework) -> bool {
        match framework {
            Framework::Caffe => self.caffe,
            Framework::Keras => self.keras,
        }
    }
}

/// Sidebar grouping of layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Category {
    Data,
    Vision,
    Recurrent,
    Activation,
    Normalization,
    Common,
    Loss,
    Utility,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::Data => "Data",
            Category::Vision => "Vision",
            Category::Recurrent => "Recurrent",
            Category::Activation => "Activation/Neuron",
            Category::Normalization => "Normalization",
            Category::Common => "Common",
            Category::Loss => "Loss",
            Category::Utility => "Utility",
        }
    }
}

macro_rules! layer_types {
    ($($variant:ident),+ $(,)?) => {
        /// Every layer kind the IR can hold.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum LayerType {
            $($variant),+
        }

        impl LayerType {
            pub const ALL: &'static [LayerType] = &[$(LayerType::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(LayerType::$variant => stringify!($variant)),+
                }
            }
        }

        impl FromStr for LayerType {
            type Err = IrError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($variant) => Ok(LayerType::$variant),)+
                    other => Err(IrError::UnknownLayerType(other.to_string())),
                }
            }
        }
    };
}

layer_types!(
    Input,
    Convolution,
    Deconvolution,
    Pooling,
    InnerProduct,
    ReLU,
    Sigmoid,
    Tanh,
    Softmax,
    SoftmaxWithLoss,
    Accuracy,
    LRN,
    Dropout,
    BatchNorm,
    Scale,
    Concat,
    Eltwise,
    Flatten,
    Reshape,
    Embedding,
    RNN,
    LSTM,
    GRU,
    Python,
);

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LayerType {
    pub fn spec(self) -> &'static LayerSpec {
        &CATALOG[self as usize]
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, LayerType::Convolution | LayerType::Deconvolution | LayerType::Pooling)
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, LayerType::RNN | LayerType::LSTM | LayerType::GRU)
    }
}

/// Editor widget used for a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "options", rename_all = "lowercase")]
pub enum ParamKind {
    Number,
    Text,
    Checkbox,
    Select(&'static [&'static str]),
}

/// How many values a parameter holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Scalar,
    /// One integer per spatial dimension (1 to 3 entries); a single entry
    /// applies to every dimension.
    PerDim,
    /// A tensor shape without the batch dimension (1 to 4 entries).
    Dims,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSchema {
    pub key: &'static str,
    pub display_name: &'static str,
    pub kind: ParamKind,
    pub arity: Arity,
    pub default: Option<ParamValue>,
    pub required: bool,
    /// Number params that must hold integral values.
    pub integer: bool,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub frameworks: Availability,
}

impl ParamSchema {
    fn new(key: &'static str, display_name: &'static str, kind: ParamKind, arity: Arity) -> Self {
        ParamSchema {
            key,
            display_name,
            kind,
            arity,
            default: None,
            required: false,
            integer: false,
            min: None,
            max: None,
            frameworks: Availability::BOTH,
        }
    }

    fn number(key: &'static str, display_name: &'static str, default: f64) -> Self {
        Self::new(key, display_name, ParamKind::Number, Arity::Scalar).with_default(ParamValue::Number(default))
    }

    fn integer(key: &'static str, display_name: &'static str) -> Self {
        let mut p = Self::new(key, display_name, ParamKind::Number, Arity::Scalar);
        p.integer = true;
        p
    }

    fn per_dim(key: &'static str, display_name: &'static str) -> Self {
        let mut p = Self::new(key, display_name, ParamKind::Number, Arity::PerDim);
        p.integer = true;
        p
    }

    fn dims(key: &'static str, display_name: &'static str) -> Self {
        let mut p = Self::new(key, display_name, ParamKind::Number, Arity::Dims);
        p.integer = true;
        p
    }

    fn checkbox(key: &'static str, display_name: &'static str, default: bool) -> Self {
        Self::new(key, display_name, ParamKind::Checkbox, Arity::Scalar).with_default(ParamValue::Bool(default))
    }

    fn select(key: &'static str, display_name: &'static str, options: &'static [&'static str]) -> Self {
        Self::new(key, display_name, ParamKind::Select(options), Arity::Scalar)
            .with_default(ParamValue::Text(options[0].to_string()))
    }

    fn text(key: &'static str, display_name: &'static str) -> Self {
        Self::new(key, display_name, ParamKind::Text, Arity::Scalar)
    }

    fn with_default(mut self, value: ParamValue) -> Self {
        self.default = Some(value);
        self
    }

    fn required(mut self) -> Self {
        self.required = true;
        self
    }

    fn at_least(mut self, min: f64) -> Self {
        self.min = Some(min);
        self
    }

    fn at_most(mut self, max: f64) -> Self {
        self.max = Some(max);
        self
    }

    fn only(mut self, frameworks: Availability) -> Self {
        self.frameworks = frameworks;
        self
    }

    /// Whether `value` equals this param's default, treating a one-entry
    /// per-dimension list as broadcast over `ndim` entries.
    pub fn is_default(&self, value: &ParamValue) -> bool {
        match (&self.default, value) {
            (Some(ParamValue::Ints(d)), ParamValue::Ints(v)) if d.len() == 1 => {
                !v.is_empty() && v.iter().all(|x| *x == d[0])
            }
            (Some(d), v) => d == v,
            (None, _) => false,
        }
    }
}

/// Catalog entry for one layer type.
#[derive(Debug, Clone, Serialize)]
pub struct LayerSpec {
    pub layer_type: LayerType,
    /// Prefix for generated layer ids.
    pub default_name: &'static str,
    pub color: &'static str,
    pub category: Category,
    /// Outgoing endpoint labels; empty means the layer feeds nothing.
    pub src_endpoints: &'static [&'static str],
    /// Incoming endpoint labels; empty means the layer accepts no inputs.
    pub trg_endpoints: &'static [&'static str],
    /// Upper bound on incoming connections, `None` for unbounded.
    pub max_inputs: Option<usize>,
    pub params: Vec<ParamSchema>,
    pub learnable: bool,
    pub frameworks: Availability,
}

impl LayerSpec {
    pub fn param(&self, key: &str) -> Option<&ParamSchema> {
        self.params.iter().find(|p| p.key == key)
    }

    pub fn available_in(&self, framework: Framework) -> bool {
        self.frameworks.contains(framework)
    }

    pub fn accepts_inputs(&self) -> bool {
        !self.trg_endpoints.is_empty()
    }

    pub fn produces_outputs(&self) -> bool {
        !self.src_endpoints.is_empty()
    }
}

/// Look up the catalog entry for a layer type name.
pub fn catalog_lookup(name: &str) -> Result<&'static LayerSpec, IrError> {
    name.parse::<LayerType>().map(LayerType::spec)
}

pub fn catalog() -> &'static [LayerSpec] {
    &CATALOG
}

const OUT: &[&str] = &["Bottom"];
const IN: &[&str] = &["Top"];
const NONE: &[&str] = &[];

const POOL_METHODS: &[&str] = &["max", "ave"];
const PADDING_MODES: &[&str] = &["numeric", "same", "valid"];
const NORM_REGIONS: &[&str] = &["across_channels", "within_channel"];
const ELTWISE_OPS: &[&str] = &["sum", "prod", "max"];

struct Entry {
    layer_type: LayerType,
    default_name: &'static str,
    category: Category,
    color: Option<&'static str>,
    src: &'static [&'static str],
    trg: &'static [&'static str],
    max_inputs: Option<usize>,
    learnable: bool,
    frameworks: Availability,
}

impl Entry {
    fn new(layer_type: LayerType, default_name: &'static str, category: Category) -> Self {
        Entry {
            layer_type,
            default_name,
            category,
            color: None,
            src: OUT,
            trg: IN,
            max_inputs: Some(1),
            learnable: false,
            frameworks: Availability::BOTH,
        }
    }

    fn build(self, params: Vec<ParamSchema>) -> LayerSpec {
        LayerSpec {
            layer_type: self.layer_type,
            default_name: self.default_name,
            color: self.color.unwrap_or_else(|| category_color(self.category)),
            category: self.category,
            src_endpoints: self.src,
            trg_endpoints: self.trg,
            max_inputs: self.max_inputs,
            params,
            learnable: self.learnable,
            frameworks: self.frameworks,
        }
    }
}

fn category_color(category: Category) -> &'static str {
    match category {
        Category::Data => "#673ab7",
        Category::Vision => "#3f51b5",
        Category::Recurrent => "#00bcd4",
        Category::Activation => "#009688",
        Category::Normalization => "#ffc107",
        Category::Common => "#ff9800",
        Category::Loss => "#e91e63",
        Category::Utility => "#9e9e9e",
    }
}

fn spatial_params(with_output: bool) -> Vec<ParamSchema> {
    let mut params = Vec::new();
    if with_output {
        params.push(ParamSchema::integer("num_output", "Number of outputs").required().at_least(1.0));
        params.push(ParamSchema::per_dim("kernel", "Kernel size").required().at_least(1.0));
    }
    params.push(ParamSchema::per_dim("stride", "Stride").with_default(ParamValue::Ints(vec![1])).at_least(1.0));
    params.push(ParamSchema::per_dim("pad", "Padding").with_default(ParamValue::Ints(vec![0])).at_least(0.0));
    params.push(ParamSchema::select("padding_mode", "Padding mode", PADDING_MODES));
    params
}

fn recurrent_params() -> Vec<ParamSchema> {
    vec![
        ParamSchema::integer("num_output", "Hidden units").required().at_least(1.0),
        ParamSchema::checkbox("return_sequences", "Return sequences", false).only(Availability::KERAS_ONLY),
    ]
}

static CATALOG: LazyLock<Vec<LayerSpec>> = LazyLock::new(|| {
    use LayerType::*;

    let specs: Vec<LayerSpec> = LayerType::ALL
        .iter()
        .map(|&t| match t {
            Input => {
                Entry { src: OUT, trg: NONE, max_inputs: Some(0), ..Entry::new(t, "data", Category::Data) }.build(vec![
                    ParamSchema::dims("shape", "Input shape")
                        .with_default(ParamValue::Ints(vec![3, 224, 224]))
                        .required()
                        .at_least(1.0),
                ])
            }
            Convolution | Deconvolution => {
                let name = if t == Convolution { "conv" } else { "deconv" };
                let mut params = spatial_params(true);
                params.push(ParamSchema::checkbox("bias_term", "Bias term", true));
                params
                    .push(ParamSchema::integer("group", "Groups").with_default(ParamValue::Number(1.0)).at_least(1.0));
                Entry { learnable: true, ..Entry::new(t, name, Category::Vision) }.build(params)
            }
            Pooling => {
                let mut params = vec![
                    ParamSchema::select("pool", "Pooling method", POOL_METHODS),
                    ParamSchema::per_dim("kernel", "Kernel size").at_least(1.0),
                ];
                params.extend(spatial_params(false));
                params.push(ParamSchema::checkbox("global_pooling", "Global pooling", false));
                params.push(
                    ParamSchema::checkbox("ceil_mode", "Round output size up", false).only(Availability::CAFFE_ONLY),
                );
                Entry::new(t, "pool", Category::Vision).build(params)
            }
            InnerProduct => Entry { learnable: true, ..Entry::new(t, "fc", Category::Common) }.build(vec![
                ParamSchema::integer("num_output", "Number of outputs").required().at_least(1.0),
                ParamSchema::checkbox("bias_term", "Bias term", true),
            ]),
            ReLU => Entry::new(t, "relu", Category::Activation).build(vec![ParamSchema::number(
                "negative_slope",
                "Negative slope",
                0.0,
            )
            .at_least(0.0)]),
            Sigmoid => Entry::new(t, "sigmoid", Category::Activation).build(vec![]),
            Tanh => Entry::new(t, "tanh", Category::Activation).build(vec![]),
            Softmax => Entry::new(t, "prob", Category::Activation).build(vec![]),
            SoftmaxWithLoss => Entry {
                src: NONE,
                max_inputs: Some(2),
                frameworks: Availability::CAFFE_ONLY,
                ..Entry::new(t, "loss", Category::Loss)
            }
            .build(vec![]),
            Accuracy => Entry {
                src: NONE,
                max_inputs: Some(2),
                color: Some("#f44336"),
                frameworks: Availability::CAFFE_ONLY,
                ..Entry::new(t, "acc", Category::Loss)
            }
            .build(vec![
                ParamSchema::integer("top_k", "Top-K").with_default(ParamValue::Number(1.0)).at_least(1.0),
                ParamSchema::integer("axis", "Axis").with_default(ParamValue::Number(1.0)),
            ]),
            LRN => Entry { frameworks: Availability::CAFFE_ONLY, ..Entry::new(t, "norm", Category::Normalization) }
                .build(vec![
                    ParamSchema::integer("local_size", "Local size")
                        .with_default(ParamValue::Number(5.0))
                        .at_least(1.0),
                    ParamSchema::number("alpha", "Alpha", 1.0),
                    ParamSchema::number("beta", "Beta", 0.75),
                    ParamSchema::number("k", "K", 1.0),
                    ParamSchema::select("norm_region", "Normalization region", NORM_REGIONS),
                ]),
            Dropout => {
                Entry::new(t, "drop", Category::Common)
                    .build(vec![ParamSchema::number("ratio", "Dropout ratio", 0.5).at_least(0.0).at_most(1.0)])
            }
            BatchNorm => Entry { learnable: true, ..Entry::new(t, "bn", Category::Normalization) }
                .build(vec![ParamSchema::number("eps", "Epsilon", 1e-5).at_least(0.0)]),
            Scale => Entry {
                learnable: true,
                frameworks: Availability::CAFFE_ONLY,
                ..Entry::new(t, "scale", Category::Normalization)
            }
            .build(vec![ParamSchema::checkbox("bias_term", "Bias term", false)]),
            Concat => Entry { max_inputs: None, ..Entry::new(t, "concat", Category::Utility) }
                .build(vec![ParamSchema::integer("axis", "Axis").with_default(ParamValue::Number(1.0)).at_least(1.0)]),
            Eltwise => Entry { max_inputs: None, ..Entry::new(t, "eltwise", Category::Utility) }
                .build(vec![ParamSchema::select("operation", "Operation", ELTWISE_OPS)]),
            Flatten => Entry::new(t, "flatten", Category::Utility).build(vec![]),
            Reshape => {
                Entry::new(t, "reshape", Category::Utility)
                    .build(vec![ParamSchema::dims("shape", "Target shape").required()])
            }
            Embedding => Entry {
                learnable: true,
                frameworks: Availability::KERAS_ONLY,
                ..Entry::new(t, "embed", Category::Common)
            }
            .build(vec![
                ParamSchema::integer("input_dim", "Vocabulary size").required().at_least(1.0),
                ParamSchema::integer("output_dim", "Embedding size").required().at_least(1.0),
            ]),
            RNN => Entry { learnable: true, ..Entry::new(t, "rnn", Category::Recurrent) }.build(recurrent_params()),
            LSTM => Entry { learnable: true, ..Entry::new(t, "lstm", Category::Recurrent) }.build(recurrent_params()),
            GRU => Entry {
                learnable: true,
                frameworks: Availability::KERAS_ONLY,
                ..Entry::new(t, "gru", Category::Recurrent)
            }
            .build(recurrent_params()),
            Python => Entry {
                frameworks: Availability::CAFFE_ONLY,
                max_inputs: None,
                ..Entry::new(t, "python", Category::Utility)
            }
            .build(vec![
                ParamSchema::text("module", "Module").required(),
                ParamSchema::text("layer", "Layer class").required(),
                ParamSchema::text("param_str", "Parameter string").with_default(ParamValue::Text(String::new())),
            ]),
        })
        .collect();
    debug_assert!(specs.iter().enumerate().all(|(i, s)| s.layer_type as usize == i));
    specs
});
