//! Importers and exporters. Every conversion goes through [`IrModel`]:
//! one importer and one exporter per framework.

pub mod caffe;
mod convert;
pub mod keras;
pub mod names;
pub mod padding;

use thiserror::Error;

use crate::ir::{validate, Diagnostic, DiagnosticCode, Framework, IrError, IrModel, LayerType, ShapeError};
use crate::textproto::{SourceSpan, TextProtoError};

pub use caffe::{export_caffe, import_caffe};
pub use convert::{convert, ConvertError, Converted, Phase};
pub use keras::{export_keras, import_keras};
pub use names::NameMap;
pub use padding::{resolve_padding, PaddingError, PaddingMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Syntax(#[from] TextProtoError),
    #[error("MalformedDocument: {0}")]
    MalformedDocument(String),
    #[error("UnknownLayerType: {name} (layer '{layer}' in {framework} input)")]
    UnknownLayerType { framework: Framework, layer: String, name: String },
    #[error("MissingRequiredField: layer '{layer}' needs '{field}'")]
    MissingRequiredField { layer: String, field: String },
    #[error("UnknownBlob: layer '{layer}' reads '{blob}', which no earlier layer produces")]
    UnknownBlob { layer: String, blob: String },
    #[error("UnsupportedLayer: {layer_type} (layer '{layer_id}') cannot be exported to {target}")]
    UnsupportedLayer { layer_id: String, layer_type: LayerType, target: Framework },
    #[error("InexpressibleParam: layer '{layer_id}' parameter '{param}' cannot be written as {target}: {reason}")]
    InexpressibleParam { layer_id: String, param: String, target: Framework, reason: String },
    #[error("AsymmetricPadding: layer '{layer_id}' needs {total} total padding in dimension {dim}")]
    AsymmetricPadding { layer_id: String, dim: usize, total: i64 },
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Shape(ShapeError),
}

impl FrontendError {
    /// The error's name, as used in diagnostics and API responses.
    pub fn code(&self) -> &'static str {
        match self {
            FrontendError::Syntax(TextProtoError::UnterminatedString { .. }) => "UnterminatedString",
            FrontendError::Syntax(TextProtoError::UnterminatedBlock { .. }) => "UnterminatedBlock",
            FrontendError::Syntax(_) => "SyntaxError",
            FrontendError::MalformedDocument(_) => "MalformedDocument",
            FrontendError::UnknownLayerType { .. } => "UnknownLayerType",
            FrontendError::MissingRequiredField { .. } => "MissingRequiredField",
            FrontendError::UnknownBlob { .. } => "UnknownBlob",
            FrontendError::UnsupportedLayer { .. } => "UnsupportedLayer",
            FrontendError::InexpressibleParam { .. } => "InexpressibleParam",
            FrontendError::AsymmetricPadding { .. } => "AsymmetricPadding",
            FrontendError::InvalidModel(_) => "InvalidModel",
            FrontendError::Ir(_) => "InvalidModel",
            FrontendError::Shape(_) => "ShapeError",
        }
    }

    /// Where in the source text the error sits, for syntax errors.
    pub fn span(&self) -> Option<SourceSpan> {
        match self {
            FrontendError::Syntax(e) => Some(e.span()),
            _ => None,
        }
    }

    /// The layer the error concerns, when there is one.
    pub fn layer_id(&self) -> Option<&str> {
        match self {
            FrontendError::UnknownLayerType { layer, .. }
            | FrontendError::MissingRequiredField { layer, .. }
            | FrontendError::UnknownBlob { layer, .. } => Some(layer),
            FrontendError::UnsupportedLayer { layer_id, .. }
            | FrontendError::InexpressibleParam { layer_id, .. }
            | FrontendError::AsymmetricPadding { layer_id, .. } => Some(layer_id),
            _ => None,
        }
    }
}

impl From<ShapeError> for FrontendError {
    fn from(e: ShapeError) -> Self {
        match e {
            ShapeError::AsymmetricPadding { layer_id, dim, total } => {
                FrontendError::AsymmetricPadding { layer_id, dim, total }
            }
            other => FrontendError::Shape(other),
        }
    }
}

/// A model plus the non-fatal notes an importer produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Imported {
    pub model: IrModel,
    pub warnings: Vec<Diagnostic>,
}

impl Imported {
    fn warn(&mut self, layer: Option<&str>, message: impl Into<String>) {
        self.warnings.push(Diagnostic::warning(DiagnosticCode::UnmappedField, layer, message));
    }
}

/// Third-party Keras implementations of layers the framework lacks.
/// Only LRN has one; nothing is registered by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CustomLayerRegistry {
    lrn: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no custom Keras implementation exists for {0}")]
pub struct NotRegistrable(pub LayerType);

impl CustomLayerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every layer with a known custom implementation.
    pub fn all() -> Self {
        CustomLayerRegistry { lrn: true }
    }

    pub fn enable(&mut self, layer_type: LayerType) -> Result<(), NotRegistrable> {
        match layer_type {
            LayerType::LRN => {
                self.lrn = true;
                Ok(())
            }
            other => Err(NotRegistrable(other)),
        }
    }

    pub fn contains(&self, layer_type: LayerType) -> bool {
        layer_type == LayerType::LRN && self.lrn
    }
}

/// Options shared by the exporters.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    pub registry: CustomLayerRegistry,
}

impl ExportOptions {
    pub fn with_custom_layers() -> Self {
        ExportOptions { registry: CustomLayerRegistry::all() }
    }
}

pub fn import(text: &str, framework: Framework) -> Result<Imported, FrontendError> {
    match framework {
        Framework::Caffe => import_caffe(text),
        Framework::Keras => import_keras(text),
    }
}

pub fn export(model: &IrModel, framework: Framework, options: &ExportOptions) -> Result<String, FrontendError> {
    match framework {
        Framework::Caffe => export_caffe(model),
        Framework::Keras => export_keras(model, options),
    }
}

/// Rejects models with validation errors before export.
fn ensure_valid(model: &IrModel) -> Result<(), FrontendError> {
    let errors: Vec<String> = validate(model).into_iter().filter(Diagnostic::is_error).map(|d| d.to_string()).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(FrontendError::InvalidModel(errors.join("; ")))
    }
}

/// First layer not expressible in `target`, honoring the registry.
fn check_availability(model: &IrModel, target: Framework, registry: &CustomLayerRegistry) -> Result<(), FrontendError> {
    for layer in model.layers() {
        let native = layer.spec().available_in(target);
        let custom = target == Framework::Keras && registry.contains(layer.layer_type);
        if !native && !custom {
            return Err(FrontendError::UnsupportedLayer {
                layer_id: layer.id.clone(),
                layer_type: layer.layer_type,
                target,
            });
        }
        for (key, value) in &layer.params {
            let Some(schema) = layer.spec().param(key) else { continue };
            if !schema.frameworks.contains(target) && !schema.is_default(value) {
                // ceil_mode has a dedicated check in the Keras exporter.
                if key == "ceil_mode" {
                    continue;
                }
                return Err(FrontendError::InexpressibleParam {
                    layer_id: layer.id.clone(),
                    param: key.clone(),
                    target,
                    reason: format!("{target} has no equivalent of {key} = {value}"),
                });
            }
        }
    }
    Ok(())
}
