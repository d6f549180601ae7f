use super::lexer::{Lexer, Token};
use super::{Field, Message, SourceSpan, TextProtoError, Value};

/// Deepest message nesting accepted before parsing fails.
pub const MAX_DEPTH: usize = 128;

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<(Token, SourceSpan)>,
}

/// Parses a whole document into its root message.
pub fn parse_textproto(input: &str) -> Result<Message, TextProtoError> {
    let mut parser = Parser { lexer: Lexer::new(input), peeked: None };
    let start = parser.peek()?.1;
    let (fields, end) = parser.fields(None, 0)?;
    Ok(Message { fields, span: SourceSpan { end: end.end, ..start } })
}

impl Parser<'_> {
    fn peek(&mut self) -> Result<&(Token, SourceSpan), TextProtoError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next_token()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn bump(&mut self) -> Result<(Token, SourceSpan), TextProtoError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next_token(),
        }
    }

    /// Reads fields until `}` (when `open` is set) or end of input.
    /// Returns the fields and the span of the terminating token.
    fn fields(&mut self, open: Option<SourceSpan>, depth: usize) -> Result<(Vec<Field>, SourceSpan), TextProtoError> {
        let mut fields = Vec::new();
        loop {
            let (token, span) = self.bump()?;
            match token {
                Token::Eof => {
                    return match open {
                        Some(open) => Err(TextProtoError::UnterminatedBlock { span: open }),
                        None => Ok((fields, span)),
                    };
                }
                Token::Close if open.is_some() => return Ok((fields, span)),
                Token::Separator if !fields.is_empty() => continue,
                Token::Ident(name) => fields.push(self.field(name, span, depth)?),
                other => {
                    return Err(TextProtoError::Syntax {
                        expected: if open.is_some() { "a field name or '}'" } else { "a field name" }.into(),
                        found: other.describe(),
                        span,
                    })
                }
            }
        }
    }

    fn field(&mut self, name: String, name_span: SourceSpan, depth: usize) -> Result<Field, TextProtoError> {
        let colon = matches!(self.peek()?.0, Token::Colon);
        if colon {
            self.bump()?;
        }
        let (token, span) = self.bump()?;
        let (value, end) = match token {
            Token::Open => {
                if depth + 1 > MAX_DEPTH {
                    return Err(TextProtoError::TooDeep { span });
                }
                let (fields, close) = self.fields(Some(span), depth + 1)?;
                let msg_span = SourceSpan { end: close.end, ..span };
                (Value::Message(Message { fields, span: msg_span }), close.end)
            }
            Token::Str(s) if colon => (Value::Str(s), span.end),
            Token::Num(n) if colon => (Value::Num(n), span.end),
            Token::Ident(s) if colon => (Value::Ident(s), span.end),
            other => {
                return Err(TextProtoError::Syntax {
                    expected: if colon { "a value or '{'" } else { "':' or '{'" }.into(),
                    found: other.describe(),
                    span,
                })
            }
        };
        Ok(Field { name, value, span: SourceSpan { end, ..name_span } })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Number, Value};
    use super::*;

    #[test]
    fn scalar_string() {
        let m = parse_textproto("name: \"VGG\"").unwrap();
        assert_eq!(m.fields.len(), 1);
        assert_eq!(m.str("name"), Some("VGG"));
    }

    #[test]
    fn repeated_fields_keep_order() {
        let m = parse_textproto("layer { name: \"c\" } layer { name: \"d\" }").unwrap();
        let names: Vec<_> = m.get_all("layer").map(|f| f.value.as_message().unwrap().str("name").unwrap()).collect();
        assert_eq!(names, ["c", "d"]);
    }

    #[test]
    fn unterminated_block() {
        let err = parse_textproto("layer { name: \"c\"").unwrap_err();
        assert!(matches!(err, TextProtoError::UnterminatedBlock { span } if span.start == 6));
    }

    #[test]
    fn unterminated_string() {
        let err = parse_textproto("name: \"abc").unwrap_err();
        assert!(matches!(err, TextProtoError::UnterminatedString { .. }));
    }

    #[test]
    fn numbers_and_idents() {
        let m = parse_textproto("a: 1 b: -2.5 c: 1. d: 1e-4 e: MAX f: true g: .5").unwrap();
        assert_eq!(m.number("a"), Some(Number::Int(1)));
        assert_eq!(m.number("b"), Some(Number::Float(-2.5)));
        assert_eq!(m.number("c"), Some(Number::Float(1.0)));
        assert_eq!(m.number("d"), Some(Number::Float(1e-4)));
        assert_eq!(m.ident("e"), Some("MAX"));
        assert_eq!(m.bool("f"), Some(true));
        assert_eq!(m.number("g"), Some(Number::Float(0.5)));
    }

    #[test]
    fn escapes_comments_and_bom() {
        let m = parse_textproto("\u{feff}# header\ns: \"a\\\"b\\\\c\\n\" # trailing\nt { }").unwrap();
        assert_eq!(m.str("s"), Some("a\"b\\c\n"));
        assert_eq!(m.get("t").unwrap().value, Value::Message(Message::default()));
    }

    #[test]
    fn syntax_error_location() {
        let err = parse_textproto("a: 1\nb 2").unwrap_err();
        let span = err.span();
        assert_eq!((span.line, span.column), (2, 3));
        assert_eq!(span.start, 7);
        assert!(err.to_string().contains("expected ':' or '{'"), "{err}");
    }

    #[test]
    fn depth_limit() {
        let deep = "a {".repeat(MAX_DEPTH + 1) + &"}".repeat(MAX_DEPTH + 1);
        assert!(matches!(parse_textproto(&deep), Err(TextProtoError::TooDeep { .. })));
        let ok = "a {".repeat(MAX_DEPTH) + &"}".repeat(MAX_DEPTH);
        assert!(parse_textproto(&ok).is_ok());
    }

    #[test]
    fn stray_close() {
        assert!(matches!(parse_textproto("}"), Err(TextProtoError::Syntax { .. })));
    }
}
