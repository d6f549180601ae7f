use super::{Number, SourceSpan, TextProtoError};

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Token {
    Ident(String),
    Str(String),
    Num(Number),
    Colon,
    Open,
    Close,
    /// `;` or `,` between fields.
    Separator,
    Eof,
}

impl Token {
    pub(super) fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("identifier '{s}'"),
            Token::Str(_) => "string".into(),
            Token::Num(_) => "number".into(),
            Token::Colon => "':'".into(),
            Token::Open => "'{'".into(),
            Token::Close => "'}'".into(),
            Token::Separator => "separator".into(),
            Token::Eof => "end of input".into(),
        }
    }
}

pub(super) struct Lexer<'a> {
    input: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    line_start: usize,
    /// Characters (not bytes) between `line_start` and `pos`.
    column_chars: usize,
}

impl<'a> Lexer<'a> {
    pub(super) fn new(input: &'a str) -> Self {
        let mut lexer = Lexer { input, bytes: input.as_bytes(), pos: 0, line: 1, line_start: 0, column_chars: 0 };
        if input.starts_with('\u{feff}') {
            lexer.advance_char();
        }
        lexer
    }

    fn advance_char(&mut self) {
        let c = self.input[self.pos..].chars().next().expect("not at end");
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.line_start = self.pos;
            self.column_chars = 0;
        } else {
            self.column_chars += 1;
        }
    }

    fn here(&self) -> SourceSpan {
        SourceSpan { start: self.pos, end: self.pos, line: self.line, column: self.column_chars + 1 }
    }

    fn finish(&self, mut span: SourceSpan) -> SourceSpan {
        span.end = self.pos;
        span
    }

    fn skip_trivia(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.advance_char();
                    }
                }
                b if b.is_ascii_whitespace() => self.advance_char(),
                _ => break,
            }
        }
    }

    pub(super) fn next_token(&mut self) -> Result<(Token, SourceSpan), TextProtoError> {
        self.skip_trivia();
        let start = self.here();
        let Some(&b) = self.bytes.get(self.pos) else {
            return Ok((Token::Eof, start));
        };
        let token = match b {
            b':' => {
                self.advance_char();
                Token::Colon
            }
            b'{' => {
                self.advance_char();
                Token::Open
            }
            b'}' => {
                self.advance_char();
                Token::Close
            }
            b';' | b',' => {
                self.advance_char();
                Token::Separator
            }
            b'"' | b'\'' => self.string(b, start)?,
            b'-' | b'+' | b'.' | b'0'..=b'9' => self.number(start)?,
            b if b.is_ascii_alphabetic() || b == b'_' => {
                let begin = self.pos;
                while self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_' || *c == b'.') {
                    self.advance_char();
                }
                Token::Ident(self.input[begin..self.pos].to_string())
            }
            _ => {
                let c = self.input[self.pos..].chars().next().unwrap();
                self.advance_char();
                return Err(TextProtoError::Syntax {
                    expected: "a field name, value or brace".into(),
                    found: format!("{c:?}"),
                    span: self.finish(start),
                });
            }
        };
        Ok((token, self.finish(start)))
    }

    fn string(&mut self, quote: u8, start: SourceSpan) -> Result<Token, TextProtoError> {
        self.advance_char();
        let mut out = String::new();
        loop {
            let Some(c) = self.input[self.pos..].chars().next() else {
                return Err(TextProtoError::UnterminatedString { span: self.finish(start) });
            };
            match c {
                '\n' => return Err(TextProtoError::UnterminatedString { span: self.finish(start) }),
                c if c as u32 == quote as u32 => {
                    self.advance_char();
                    return Ok(Token::Str(out));
                }
                '\\' => {
                    let escape_start = self.here();
                    self.advance_char();
                    let Some(e) = self.input[self.pos..].chars().next() else {
                        return Err(TextProtoError::UnterminatedString { span: self.finish(start) });
                    };
                    let decoded = match e {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        '"' => '"',
                        '\'' => '\'',
                        '\\' => '\\',
                        other => {
                            self.advance_char();
                            return Err(TextProtoError::Syntax {
                                expected: "an escape (\\\" \\\\ \\n \\t \\r \\')".into(),
                                found: format!("'\\{other}'"),
                                span: self.finish(escape_start),
                            });
                        }
                    };
                    self.advance_char();
                    out.push(decoded);
                }
                c => {
                    self.advance_char();
                    out.push(c);
                }
            }
        }
    }

    fn number(&mut self, start: SourceSpan) -> Result<Token, TextProtoError> {
        let begin = self.pos;
        if matches!(self.bytes[self.pos], b'-' | b'+') {
            self.advance_char();
        }
        // Signed special values such as -inf lex as identifiers-in-numbers.
        if self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_alphabetic()) {
            while self.bytes.get(self.pos).is_some_and(u8::is_ascii_alphabetic) {
                self.advance_char();
            }
            let text = &self.input[begin..self.pos];
            return match text.to_ascii_lowercase().as_str() {
                "-inf" | "+inf" | "-infinity" | "+infinity" => {
                    let x = if text.starts_with('-') { f64::NEG_INFINITY } else { f64::INFINITY };
                    Ok(Token::Num(Number::Float(x)))
                }
                _ => Err(TextProtoError::Syntax {
                    expected: "a number".into(),
                    found: format!("'{text}'"),
                    span: self.finish(start),
                }),
            };
        }
        let mut float = false;
        while let Some(&c) = self.bytes.get(self.pos) {
            match c {
                b'0'..=b'9' => self.advance_char(),
                b'.' => {
                    float = true;
                    self.advance_char();
                }
                b'e' | b'E' => {
                    float = true;
                    self.advance_char();
                    if self.bytes.get(self.pos).is_some_and(|c| *c == b'-' || *c == b'+') {
                        self.advance_char();
                    }
                }
                b'f' | b'F' => {
                    // C-style float suffix.
                    float = true;
                    self.advance_char();
                    break;
                }
                _ => break,
            }
        }
        let text = self.input[begin..self.pos].trim_end_matches(['f', 'F']);
        let bad = |lexer: &Self| TextProtoError::Syntax {
            expected: "a number".into(),
            found: format!("'{}'", &lexer.input[begin..lexer.pos]),
            span: lexer.finish(start),
        };
        if self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_alphabetic() || *c == b'_') {
            while self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
                self.advance_char();
            }
            return Err(bad(self));
        }
        if !float {
            if let Ok(i) = text.parse::<i64>() {
                return Ok(Token::Num(Number::Int(i)));
            }
        }
        // `1.` and `.5` are valid floats in Caffe files.
        let normalized = if text.ends_with('.') { format!("{text}0") } else { text.to_string() };
        match normalized.parse::<f64>() {
            Ok(x) if text.bytes().any(|c| c.is_ascii_digit()) => Ok(Token::Num(Number::Float(x))),
            _ => Err(bad(self)),
        }
    }
}
