//! The intermediate representation every import and export passes through.

mod catalog;
mod graph;
mod model;
mod params;
mod shape;
mod validate;
mod value;

use thiserror::Error;

pub use catalog::{
    catalog, catalog_lookup, Arity, Availability, Category, Framework, LayerSpec, LayerType, ParamKind, ParamSchema,
};
pub use graph::{build_index, detect_cycles, GraphIndex};
pub use model::{Attach, Connection, IrLayer, IrModel, FORMAT_VERSION};
pub use params::{count_parameters, layer_parameter_count, total_parameters, CountError, ParamCountError};
pub use shape::{
    declared_input_shapes, infer_shapes, infer_shapes_in_order, infer_shapes_lenient, layer_output_shape,
    resolve_model_padding, ShapeError, ShapeMap, TensorShape,
};
pub use validate::{validate, Diagnostic, DiagnosticCode, Severity};
pub use value::ParamValue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrError {
    #[error("UnknownLayerType: {0}")]
    UnknownLayerType(String),
    #[error("unknown framework {0:?}")]
    UnknownFramework(String),
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("SchemaViolation: layer '{layer_id}': {message}")]
    SchemaViolation { layer_id: String, message: String },
    #[error("DuplicateConnection: {from} -> {to}")]
    DuplicateConnection { from: String, to: String },
    #[error("duplicate layer id '{0}'")]
    DuplicateLayer(String),
    #[error("malformed model document: {0}")]
    MalformedDocument(String),
}
