//! Protobuf text format (the subset Caffe prototxt files use).
//!
//! ```
//! use layerloom_core::textproto::{parse_textproto, print_textproto};
//!
//! let msg = parse_textproto("layer { name: \"c\" } layer { name: \"d\" }").unwrap();
//! assert_eq!(msg.get_all("layer").count(), 2);
//! assert_eq!(print_textproto(&msg), "layer {\n  name: \"c\"\n}\nlayer {\n  name: \"d\"\n}\n");
//! ```

mod lexer;
mod parser;
mod printer;

use std::fmt;

use thiserror::Error;

pub use parser::{parse_textproto, MAX_DEPTH};
pub use printer::print_textproto;

/// Byte range plus 1-based line and column of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

impl SourceSpan {
    /// Line and column (both 1-based, column in characters) of `offset`.
    pub fn locate(input: &str, offset: usize) -> (usize, usize) {
        let before = &input[..offset.min(input.len())];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        (line, before[line_start..].chars().count() + 1)
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    pub fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(x) => x,
        }
    }

    pub fn as_i64(self) -> Option<i64> {
        match self {
            Number::Int(i) => Some(i),
            Number::Float(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => Some(x as i64),
            Number::Float(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Message(Message),
    Str(String),
    Num(Number),
    /// Enum constants and booleans.
    Ident(String),
}

impl Value {
    pub fn as_message(&self) -> Option<&Message> {
        match self {
            Value::Message(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<Number> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_ident(&self) -> Option<&str> {
        match self {
            Value::Ident(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Ident(s) if s == "true" || s == "True" => Some(true),
            Value::Ident(s) if s == "false" || s == "False" => Some(false),
            Value::Num(Number::Int(1)) => Some(true),
            Value::Num(Number::Int(0)) => Some(false),
            _ => None,
        }
    }
}

/// One `name: value` or `name { ... }` entry.
#[derive(Debug, Clone)]
pub struct Field {
    pub name: String,
    pub value: Value,
    /// From the start of the name to the end of the value.
    pub span: SourceSpan,
}

impl Field {
    pub fn new(name: impl Into<String>, value: Value) -> Self {
        Field { name: name.into(), value, span: SourceSpan::default() }
    }
}

/// Spans are diagnostics only; equality compares structure.
impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.value == other.value
    }
}

/// An ordered multimap of fields.
#[derive(Debug, Clone, Default)]
pub struct Message {
    pub fields: Vec<Field>,
    pub span: SourceSpan,
}

impl PartialEq for Message {
    fn eq(&self, other: &Self) -> bool {
        self.fields == other.fields
    }
}

impl Message {
    pub fn new() -> Self {
        Message::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Value) {
        self.fields.push(Field::new(name, value));
    }

    pub fn with(mut self, name: impl Into<String>, value: Value) -> Self {
        self.push(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn get_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Field> + 'a {
        self.fields.iter().filter(move |f| f.name == name)
    }

    pub fn message(&self, name: &str) -> Option<&Message> {
        self.get(name).and_then(|f| f.value.as_message())
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(|f| f.value.as_str())
    }

    pub fn number(&self, name: &str) -> Option<Number> {
        self.get(name).and_then(|f| f.value.as_number())
    }

    pub fn ident(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(|f| f.value.as_ident())
    }

    pub fn bool(&self, name: &str) -> Option<bool> {
        self.get(name).and_then(|f| f.value.as_bool())
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextProtoError {
    #[error("SyntaxError at {span}: expected {expected}, found {found}")]
    Syntax { expected: String, found: String, span: SourceSpan },
    #[error("UnterminatedString at {span}")]
    UnterminatedString { span: SourceSpan },
    #[error("UnterminatedBlock at {span}: '{{' opened here is never closed")]
    UnterminatedBlock { span: SourceSpan },
    #[error("SyntaxError at {span}: messages nest deeper than {MAX_DEPTH} levels")]
    TooDeep { span: SourceSpan },
}

impl TextProtoError {
    pub fn span(&self) -> SourceSpan {
        match self {
            TextProtoError::Syntax { span, .. }
            | TextProtoError::UnterminatedString { span }
            | TextProtoError::UnterminatedBlock { span }
            | TextProtoError::TooDeep { span } => *span,
        }
    }
}
