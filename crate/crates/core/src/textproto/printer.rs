use std::fmt::Write;

use super::{Message, Number, Value};

/// Renders a message with two-space indentation, one field per line.
pub fn print_textproto(message: &Message) -> String {
    let mut out = String::new();
    write_fields(&mut out, message, 0);
    out
}

fn write_fields(out: &mut String, message: &Message, depth: usize) {
    for field in &message.fields {
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push_str(&field.name);
        match &field.value {
            Value::Message(m) => {
                out.push_str(" {\n");
                write_fields(out, m, depth + 1);
                for _ in 0..depth {
                    out.push_str("  ");
                }
                out.push('}');
            }
            Value::Str(s) => {
                out.push_str(": ");
                quote(out, s);
            }
            Value::Num(n) => {
                out.push_str(": ");
                write_number(out, *n);
            }
            Value::Ident(s) => {
                out.push_str(": ");
                out.push_str(s);
            }
        }
        out.push('\n');
    }
}

fn quote(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
}

pub(crate) fn write_number(out: &mut String, n: Number) {
    match n {
        Number::Int(i) => write!(out, "{i}").unwrap(),
        Number::Float(x) if x.is_infinite() => out.push_str(if x > 0.0 { "inf" } else { "-inf" }),
        Number::Float(x) => {
            let text = format!("{x}");
            out.push_str(&text);
            // Keep floats distinguishable from integers when read back.
            if !text.contains(['.', 'e', 'E']) && x.is_finite() {
                out.push_str(".0");
            }
        }
    }
}
