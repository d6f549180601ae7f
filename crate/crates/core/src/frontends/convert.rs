use std::fmt;

use thiserror::Error;

use super::{export, import, ExportOptions, FrontendError};
use crate::ir::{Diagnostic, Framework};

/// Which half of a conversion failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Import,
    Export,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Import => "import",
            Phase::Export => "export",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{phase}: {error}")]
pub struct ConvertError {
    pub phase: Phase,
    pub error: FrontendError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub text: String,
    pub warnings: Vec<Diagnostic>,
}

/// Imports `text` as `source` and exports it as `target`. With equal
/// frameworks this normalizes the document.
pub fn convert(
    text: &str,
    source: Framework,
    target: Framework,
    options: &ExportOptions,
) -> Result<Converted, ConvertError> {
    let imported = import(text, source).map_err(|error| ConvertError { phase: Phase::Import, error })?;
    let text =
        export(&imported.model, target, options).map_err(|error| ConvertError { phase: Phase::Export, error })?;
    Ok(Converted { text, warnings: imported.warnings })
}
