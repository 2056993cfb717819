//! Tokenizer for kernel sources.
//!
//! Comments are dropped, `#pragma` lines become a single token, and
//! object-like `#define NAME <integer>` constants are substituted inline.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float {
        value: f64,
        single: bool,
    },
    Punct(&'static str),
    /// Text after `#pragma`.
    Pragma(String),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

impl Token {
    pub fn text(&self) -> String {
        match &self.tok {
            Tok::Ident(s) => s.clone(),
            Tok::Int(v) => v.to_string(),
            Tok::Float { value, single } => format_float(*value, *single),
            Tok::Punct(p) => (*p).to_string(),
            Tok::Pragma(p) => format!("#pragma {p}"),
            Tok::Eof => String::new(),
        }
    }
}

pub fn format_float(value: f64, single: bool) -> String {
    let mut s = format!("{value:?}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    if single {
        s.push('f');
    }
    s
}

const PUNCTS: &[&str] = &[
    "<<=", ">>=", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "<=",
    ">=", "==", "!=", "&&", "||", "->", "+", "-", "*", "/", "%", "<", ">", "=", "!", "~", "&", "|",
    "^", "(", ")", "[", "]", "{", "}", ",", ";", "?", ":", ".",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut lexer = Lexer {
        chars: src.chars().collect(),
        pos: 0,
        line: 1,
        col: 1,
        defines: HashMap::new(),
        out: Vec::new(),
    };
    lexer.run()?;
    Ok(lexer.out)
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
    defines: HashMap<String, Tok>,
    out: Vec<Token>,
}

impl Lexer {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn rest_of_line(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if c == '\n' {
                break;
            }
            if c == '\\' && self.peek(1) == Some('\n') {
                self.bump();
                self.bump();
                s.push(' ');
                continue;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn run(&mut self) -> Result<()> {
        while let Some(c) = self.peek(0) {
            let (line, col) = (self.line, self.col);
            if c.is_whitespace() {
                self.bump();
            } else if c == '/' && self.peek(1) == Some('/') {
                self.rest_of_line();
            } else if c == '/' && self.peek(1) == Some('*') {
                self.bump();
                self.bump();
                loop {
                    match self.peek(0) {
                        None => return Err(self.err("unterminated block comment")),
                        Some('*') if self.peek(1) == Some('/') => {
                            self.bump();
                            self.bump();
                            break;
                        }
                        _ => {
                            self.bump();
                        }
                    }
                }
            } else if c == '#' {
                self.bump();
                let text = self.rest_of_line();
                self.directive(text.trim(), line, col)?;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let mut s = String::new();
                while let Some(c) = self.peek(0) {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                let tok = match self.defines.get(&s) {
                    Some(t) => t.clone(),
                    None => Tok::Ident(s),
                };
                self.out.push(Token { tok, line, col });
            } else if c.is_ascii_digit()
                || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit()))
            {
                let tok = self.number()?;
                self.out.push(Token { tok, line, col });
            } else {
                let mut matched = None;
                for p in PUNCTS {
                    if p.chars()
                        .enumerate()
                        .all(|(i, pc)| self.peek(i) == Some(pc))
                    {
                        matched = Some(*p);
                        break;
                    }
                }
                let p = matched.ok_or_else(|| self.err(format!("unexpected character `{c}`")))?;
                for _ in 0..p.len() {
                    self.bump();
                }
                self.out.push(Token {
                    tok: Tok::Punct(p),
                    line,
                    col,
                });
            }
        }
        self.out.push(Token {
            tok: Tok::Eof,
            line: self.line,
            col: self.col,
        });
        Ok(())
    }

    fn directive(&mut self, text: &str, line: usize, col: usize) -> Result<()> {
        if let Some(rest) = text.strip_prefix("pragma") {
            self.out.push(Token {
                tok: Tok::Pragma(rest.trim().to_string()),
                line,
                col,
            });
            return Ok(());
        }
        if let Some(rest) = text.strip_prefix("define") {
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| self.err("#define without a name"))?
                .to_string();
            let value: String = parts.collect::<Vec<_>>().join(" ");
            let value = value.trim().trim_start_matches('(').trim_end_matches(')');
            let tok = if let Ok(v) = value.parse::<i64>() {
                Tok::Int(v)
            } else if let Some(v) = value.strip_suffix('f').and_then(|v| v.parse::<f64>().ok()) {
                Tok::Float {
                    value: v,
                    single: true,
                }
            } else if let Ok(v) = value.parse::<f64>() {
                Tok::Float {
                    value: v,
                    single: false,
                }
            } else {
                return Err(self.err(format!(
                    "unsupported #define `{name}`: only numeric constants are accepted"
                )));
            };
            self.defines.insert(name, tok);
            return Ok(());
        }
        // Include guards and extension enables carry no semantics here.
        if text.starts_with("include")
            || text.starts_with("if")
            || text.starts_with("endif")
            || text.starts_with("else")
        {
            return Ok(());
        }
        Err(self.err(format!("unsupported preprocessor directive `#{text}`")))
    }

    fn number(&mut self) -> Result<Tok> {
        let mut s = String::new();
        if self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X')) {
            self.bump();
            self.bump();
            while let Some(c) = self.peek(0) {
                if c.is_ascii_hexdigit() {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            while matches!(self.peek(0), Some('u' | 'U' | 'l' | 'L')) {
                self.bump();
            }
            return i64::from_str_radix(&s, 16)
                .map(Tok::Int)
                .map_err(|_| self.err("bad hex literal"));
        }
        let mut is_float = false;
        while let Some(c) = self.peek(0) {
            if c.is_ascii_digit() {
                s.push(c);
            } else if c == '.' {
                is_float = true;
                s.push(c);
            } else if (c == 'e' || c == 'E')
                && (self.peek(1).is_some_and(|d| d.is_ascii_digit())
                    || (matches!(self.peek(1), Some('+' | '-'))
                        && self.peek(2).is_some_and(|d| d.is_ascii_digit())))
            {
                is_float = true;
                s.push(c);
                self.bump();
                s.push(self.peek(0).unwrap_or('0'));
            } else {
                break;
            }
            self.bump();
        }
        let mut single = false;
        match self.peek(0) {
            Some('f' | 'F') => {
                self.bump();
                single = true;
                is_float = true;
            }
            Some('u' | 'U' | 'l' | 'L') => {
                while matches!(self.peek(0), Some('u' | 'U' | 'l' | 'L')) {
                    self.bump();
                }
            }
            _ => {}
        }
        if is_float {
            s.parse::<f64>()
                .map(|value| Tok::Float { value, single })
                .map_err(|_| self.err(format!("bad float literal `{s}`")))
        } else {
            s.parse::<i64>()
                .map(Tok::Int)
                .map_err(|_| self.err(format!("bad integer literal `{s}`")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defines_are_substituted() {
        let toks = tokenize("#define BSIZE 4\nx = BSIZE;").unwrap();
        assert_eq!(toks[2].tok, Tok::Int(4));
    }

    #[test]
    fn float_suffixes() {
        let toks = tokenize("0.5f 1e3 2.").unwrap();
        assert_eq!(
            toks[0].tok,
            Tok::Float {
                value: 0.5,
                single: true
            }
        );
        assert_eq!(
            toks[1].tok,
            Tok::Float {
                value: 1000.0,
                single: false
            }
        );
        assert_eq!(
            toks[2].tok,
            Tok::Float {
                value: 2.0,
                single: false
            }
        );
    }

    #[test]
    fn reports_position_of_bad_char() {
        match tokenize("int a;\n  @") {
            Err(Error::Parse { line, col, .. }) => assert_eq!((line, col), (2, 3)),
            other => panic!("{other:?}"),
        }
    }
}
