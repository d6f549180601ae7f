use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::catalog::{Arity, LayerType, ParamSchema};
use super::model::{IrLayer, IrModel};
use super::value::ParamValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    DanglingConnection,
    DuplicateConnection,
    UnknownParam,
    ParamType,
    ParamRange,
    MissingRequired,
    DimensionMismatch,
    EndpointArity,
    TooManyInputs,
    NoSource,
    /// Importer notes about fields it could not map.
    UnmappedField,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub layer_id: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: DiagnosticCode, layer_id: Option<&str>, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, code, layer_id: layer_id.map(str::to_string), message: message.into() }
    }

    pub fn warning(code: DiagnosticCode, layer_id: Option<&str>, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, ..Self::error(code, layer_id, message) }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.layer_id {
            Some(id) => write!(f, "{level}: layer '{id}': {}", self.message),
            None => write!(f, "{level}: {}", self.message),
        }
    }
}

/// Checks structural and schema invariants. An empty result means the
/// model is well formed.
pub fn validate(model: &IrModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for layer in model.layers() {
        check_layer(layer, &mut out);
    }

    let mut seen = HashSet::new();
    let mut in_count = vec![0usize; model.len()];
    for c in model.connections() {
        let from = model.layer(&c.from);
        let to = model.layer(&c.to);
        if from.is_none() || to.is_none() {
            let missing = if from.is_none() { &c.from } else { &c.to };
            out.push(Diagnostic::error(
                DiagnosticCode::DanglingConnection,
                Some(if from.is_none() { &c.to } else { &c.from }),
                format!("connection {} -> {} references missing layer '{missing}'", c.from, c.to),
            ));
            continue;
        }
        if !seen.insert((c.from.as_str(), c.to.as_str())) {
            out.push(Diagnostic::error(
                DiagnosticCode::DuplicateConnection,
                Some(&c.to),
                format!("duplicate connection {} -> {}", c.from, c.to),
            ));
            continue;
        }
        let (from, to) = (from.unwrap(), to.unwrap());
        if !from.spec().produces_outputs() {
            out.push(Diagnostic::error(
                DiagnosticCode::EndpointArity,
                Some(&from.id),
                format!("{} layers have no outputs but feed '{}'", from.layer_type, to.id),
            ));
        }
        if !to.spec().accepts_inputs() {
            out.push(Diagnostic::error(
                DiagnosticCode::EndpointArity,
                Some(&to.id),
                format!("{} layers accept no inputs but '{}' feeds it", to.layer_type, from.id),
            ));
        }
        in_count[model.index_of(&to.id).unwrap()] += 1;
    }

    for (layer, &count) in model.layers().zip(&in_count) {
        if let Some(max) = layer.spec().max_inputs {
            if count > max && max > 0 {
                out.push(Diagnostic::error(
                    DiagnosticCode::TooManyInputs,
                    Some(&layer.id),
                    format!("{} takes at most {max} input(s), has {count}", layer.layer_type),
                ));
            }
        }
    }

    if !model.is_empty() && in_count.iter().all(|&c| c > 0) {
        out.push(Diagnostic::error(
            DiagnosticCode::NoSource,
            None,
            "every layer has an incoming connection; the graph has no source",
        ));
    }
    out
}

fn check_layer(layer: &IrLayer, out: &mut Vec<Diagnostic>) {
    let spec = layer.spec();
    let id = Some(layer.id.as_str());
    for (key, value) in &layer.params {
        let Some(schema) = spec.param(key) else {
            out.push(Diagnostic::error(
                DiagnosticCode::UnknownParam,
                id,
                format!("{} has no parameter '{key}'", layer.layer_type),
            ));
            continue;
        };
        if let Err(message) = layer.check_param(key, value) {
            out.push(Diagnostic::error(DiagnosticCode::ParamType, id, message));
            continue;
        }
        check_range(layer, schema, value, out);
    }

    for schema in &spec.params {
        if schema.required && layer.get(schema.key).is_none() {
            out.push(Diagnostic::error(
                DiagnosticCode::MissingRequired,
                id,
                format!("required parameter '{}' is not set", schema.key),
            ));
        }
    }

    if layer.layer_type == LayerType::Pooling && !layer.flag("global_pooling") && layer.get("kernel").is_none() {
        out.push(Diagnostic::error(
            DiagnosticCode::MissingRequired,
            id,
            "pooling needs 'kernel' unless 'global_pooling' is set",
        ));
    }

    if let Some(rank) = layer.spatial_rank() {
        for key in ["stride", "pad"] {
            if let Some(v) = layer.params.get(key).and_then(ParamValue::as_ints) {
                if v.len() != 1 && v.len() != rank {
                    out.push(Diagnostic::error(
                        DiagnosticCode::DimensionMismatch,
                        id,
                        format!("'{key}' has {} entries but the kernel has {rank}", v.len()),
                    ));
                }
            }
        }
    }
}

fn check_range(layer: &IrLayer, schema: &ParamSchema, value: &ParamValue, out: &mut Vec<Diagnostic>) {
    let id = Some(layer.id.as_str());
    let bad = |x: f64| schema.min.is_some_and(|m| x < m) || schema.max.is_some_and(|m| x > m);
    match value {
        ParamValue::Number(x) if bad(*x) => out.push(Diagnostic::error(
            DiagnosticCode::ParamRange,
            id,
            format!("parameter '{}' = {x} is out of range{}", schema.key, range_text(schema)),
        )),
        ParamValue::Ints(v) if layer.layer_type == LayerType::Reshape && schema.arity == Arity::Dims => {
            let inferred = v.iter().filter(|&&d| d == -1).count();
            if inferred > 1 || v.iter().any(|&d| d == 0 || d < -1) {
                out.push(Diagnostic::error(
                    DiagnosticCode::ParamRange,
                    id,
                    format!("parameter '{}' = {value} must hold positive dims and at most one -1", schema.key),
                ));
            }
        }
        ParamValue::Ints(v) if v.iter().any(|&d| bad(d as f64)) => out.push(Diagnostic::error(
            DiagnosticCode::ParamRange,
            id,
            format!("parameter '{}' = {value} is out of range{}", schema.key, range_text(schema)),
        )),
        _ => {}
    }
}

fn range_text(schema: &ParamSchema) -> String {
    match (schema.min, schema.max) {
        (Some(lo), Some(hi)) => format!(" [{lo}, {hi}]"),
        (Some(lo), None) => format!(" (must be >= {lo})"),
        (None, Some(hi)) => format!(" (must be <= {hi})"),
        (None, None) => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Attach, Connection, IrLayer, LayerType};

    fn conv(id: &str, out: f64) -> IrLayer {
        IrLayer::new(id, LayerType::Convolution).with("num_output", out).with("kernel", vec![3, 3])
    }

    #[test]
    fn empty_model_is_clean() {
        assert!(validate(&IrModel::new("empty")).is_empty());
    }

    #[test]
    fn dangling_connection() {
        let m = IrModel::from_parts("m", vec![IrLayer::new("a", LayerType::Input)], vec![Connection::new("a", "x")])
            .unwrap();
        let d = validate(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagnosticCode::DanglingConnection);
        assert!(d[0].message.contains("'x'"));
    }

    #[test]
    fn num_output_zero_out_of_range() {
        let m = IrModel::from_parts(
            "m",
            vec![IrLayer::new("in", LayerType::Input), conv("c", 0.0)],
            vec![Connection::new("in", "c")],
        )
        .unwrap();
        let d = validate(&m);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].code, DiagnosticCode::ParamRange);
        assert_eq!(d[0].layer_id.as_deref(), Some("c"));
    }

    #[test]
    fn schema_scan_matches_range_rules() {
        // Every schema lower bound is enforced: set each bounded numeric
        // param just below its minimum and expect exactly one range error.
        for spec in crate::ir::catalog() {
            for p in &spec.params {
                let Some(min) = p.min else { continue };
                let value = match p.arity {
                    Arity::Scalar => ParamValue::Number(min - 1.0),
                    _ => ParamValue::Ints(vec![min as i64 - 1]),
                };
                let mut layer = IrLayer::new("x", spec.layer_type).with(p.key, value);
                for r in spec.params.iter().filter(|r| r.required && r.key != p.key) {
                    let v = match (r.arity, r.kind) {
                        (Arity::Scalar, crate::ir::ParamKind::Text) => ParamValue::Text("m".into()),
                        (Arity::Scalar, _) => ParamValue::Number(4.0),
                        _ => ParamValue::Ints(vec![2, 2]),
                    };
                    layer = layer.with(r.key, v);
                }
                if spec.layer_type == LayerType::Pooling && p.key != "kernel" {
                    layer = layer.with("kernel", vec![2, 2]);
                }
                let m = IrModel::from_parts("m", vec![layer], vec![]).unwrap();
                let d = validate(&m);
                assert_eq!(
                    d.iter().filter(|d| d.code == DiagnosticCode::ParamRange).count(),
                    1,
                    "{}.{}: {d:?}",
                    spec.layer_type,
                    p.key
                );
            }
        }
    }

    #[test]
    fn missing_required_and_too_many_inputs() {
        let m = IrModel::from_parts(
            "m",
            vec![
                IrLayer::new("a", LayerType::Input),
                IrLayer::new("b", LayerType::Input),
                IrLayer::new("c", LayerType::Convolution),
            ],
            vec![Connection::new("a", "c"), Connection::new("b", "c")],
        )
        .unwrap();
        let codes: Vec<_> = validate(&m).into_iter().map(|d| d.code).collect();
        assert_eq!(
            codes,
            [DiagnosticCode::MissingRequired, DiagnosticCode::MissingRequired, DiagnosticCode::TooManyInputs]
        );
    }

    #[test]
    fn no_source() {
        let m = IrModel::from_parts(
            "m",
            vec![IrLayer::new("a", LayerType::ReLU), IrLayer::new("b", LayerType::ReLU)],
            vec![Connection::new("a", "b"), Connection::new("b", "a")],
        )
        .unwrap();
        assert_eq!(validate(&m)[0].code, DiagnosticCode::NoSource);
    }

    #[test]
    fn idempotent() {
        let mut m = IrModel::new("m");
        m.add_layer(IrLayer::new("in", LayerType::Input), Attach::Deepest).unwrap();
        m.add_layer(conv("c", 0.0), Attach::Deepest).unwrap();
        assert_eq!(validate(&m), validate(&m));
    }
}
