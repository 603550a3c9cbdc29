//! Canonical structured-text encoding.
//!
//! The encoding is a strict subset of JSON:
//!
//! * object keys sorted byte-lexicographically, no duplicates
//! * no whitespace outside strings
//! * integers only, in minimal decimal form (no `-0`, no leading zeros)
//! * strings are raw UTF-8; only `"`, `\` and control characters below
//!   U+0020 are escaped, using the two-character forms `\b \f \n \r \t`
//!   where they exist and `\u00xx` (lowercase hex) otherwise
//!
//! [`parse`] accepts exactly the byte strings [`encode`] can produce, so
//! `encode(parse(b)?) == b` for every accepted `b`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use thiserror::Error;

const MAX_DEPTH: usize = 64;

/// A node of the canonical tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i128),
    Str(String),
    Array(Vec<Value>),
    Object(BTreeMap<String, Value>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn opt<T>(v: Option<T>, f: impl FnOnce(T) -> Value) -> Self {
        v.map_or(Value::Null, f)
    }

    pub fn as_object(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Object(m) => Some(m),
            _ => None,
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v.into())
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v.into())
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.into())
    }
}

/// Builder for object nodes; keeps call sites flat.
#[derive(Debug, Default, Clone)]
pub struct Object(BTreeMap<String, Value>);

impl Object {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

impl From<Object> for Value {
    fn from(o: Object) -> Self {
        o.build()
    }
}

pub fn encode(value: &Value) -> Vec<u8> {
    let mut out = String::new();
    write_value(&mut out, value);
    out.into_bytes()
}

fn write_value(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(true) => out.push_str("true"),
        Value::Bool(false) => out.push_str("false"),
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Str(s) => write_str(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            // BTreeMap<String, _> iterates in byte-lexicographic key order.
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_str(out, k);
                out.push(':');
                write_value(out, v);
            }
            out.push('}');
        }
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("non-canonical input at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: &'static str,
}

/// Strictly parses canonical bytes. Anything [`encode`] would not have
/// produced is rejected.
pub fn parse(bytes: &[u8]) -> Result<Value, ParseError> {
    let mut p = Parser { bytes, pos: 0 };
    let v = p.value(0)?;
    if p.pos != bytes.len() {
        return p.fail("trailing bytes");
    }
    Ok(v)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, reason: &'static str) -> Result<T, ParseError> {
        Err(ParseError { offset: self.pos, reason })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8, reason: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(reason)
        }
    }

    fn literal(&mut self, lit: &[u8], v: Value) -> Result<Value, ParseError> {
        if self.bytes[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(v)
        } else {
            self.fail("invalid literal")
        }
    }

    fn value(&mut self, depth: usize) -> Result<Value, ParseError> {
        if depth > MAX_DEPTH {
            return self.fail("nesting too deep");
        }
        match self.peek() {
            Some(b'n') => self.literal(b"null", Value::Null),
            Some(b't') => self.literal(b"true", Value::Bool(true)),
            Some(b'f') => self.literal(b"false", Value::Bool(false)),
            Some(b'"') => self.string().map(Value::Str),
            Some(b'[') => self.array(depth),
            Some(b'{') => self.object(depth),
            Some(b'-' | b'0'..=b'9') => self.int(),
            Some(_) => self.fail("unexpected byte"),
            None => self.fail("unexpected end of input"),
        }
    }

    fn int(&mut self) -> Result<Value, ParseError> {
        let start = self.pos;
        let neg = self.peek() == Some(b'-');
        if neg {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let digits = &self.bytes[digits_start..self.pos];
        if digits.is_empty() {
            return self.fail("expected digits");
        }
        if digits.len() > 1 && digits[0] == b'0' {
            return self.fail("leading zero");
        }
        if neg && digits == b"0" {
            return self.fail("negative zero");
        }
        if matches!(self.peek(), Some(b'.' | b'e' | b'E')) {
            return self.fail("non-integer number");
        }
        // ASCII digits with optional sign: always valid UTF-8.
        let text = core::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
        match text.parse::<i128>() {
            Ok(i) => Ok(Value::Int(i)),
            Err(_) => self.fail("integer out of range"),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.expect(b'"', "expected string")?;
        let mut out = Vec::new();
        loop {
            let Some(b) = self.peek() else {
                return self.fail("unterminated string");
            };
            match b {
                b'"' => {
                    self.pos += 1;
                    break;
                }
                b'\\' => {
                    self.pos += 1;
                    let esc = match self.peek() {
                        Some(b'"') => b'"',
                        Some(b'\\') => b'\\',
                        Some(b'b') => 0x08,
                        Some(b'f') => 0x0c,
                        Some(b'n') => b'\n',
                        Some(b'r') => b'\r',
                        Some(b't') => b'\t',
                        Some(b'u') => {
                            self.pos += 1;
                            let hex = self.bytes.get(self.pos..self.pos + 4);
                            let code = match hex {
                                Some([b'0', b'0', hi @ (b'0' | b'1'), lo]) => {
                                    let lo = match lo {
                                        b'0'..=b'9' => lo - b'0',
                                        b'a'..=b'f' => lo - b'a' + 10,
                                        _ => return self.fail("non-canonical \\u escape"),
                                    };
                                    (hi - b'0') * 16 + lo
                                }
                                _ => return self.fail("non-canonical \\u escape"),
                            };
                            if matches!(code, 0x08 | 0x0c | b'\n' | b'\r' | b'\t') {
                                return self.fail("non-canonical \\u escape");
                            }
                            out.push(code);
                            self.pos += 4;
                            continue;
                        }
                        _ => return self.fail("invalid escape"),
                    };
                    out.push(esc);
                    self.pos += 1;
                }
                0x00..=0x1f => return self.fail("unescaped control character"),
                _ => {
                    out.push(b);
                    self.pos += 1;
                }
            }
        }
        match String::from_utf8(out) {
            Ok(s) => Ok(s),
            Err(_) => self.fail("invalid utf-8 in string"),
        }
    }

    fn array(&mut self, depth: usize) -> Result<Value, ParseError> {
        self.expect(b'[', "expected array")?;
        let mut items = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::Array(items));
        }
        loop {
            items.push(self.value(depth + 1)?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                _ => return self.fail("expected ',' or ']'"),
            }
        }
    }

    fn object(&mut self, depth: usize) -> Result<Value, ParseError> {
        self.expect(b'{', "expected object")?;
        let mut map = BTreeMap::new();
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Value::Object(map));
        }
        let mut last: Option<String> = None;
        loop {
            let key_at = self.pos;
            let key = self.string()?;
            if let Some(prev) = &last {
                if prev.as_bytes() >= key.as_bytes() {
                    return Err(ParseError {
                        offset: key_at,
                        reason: "keys not strictly increasing",
                    });
                }
            }
            self.expect(b':', "expected ':'")?;
            let v = self.value(depth + 1)?;
            last = Some(key.clone());
            map.insert(key, v);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Value::Object(map));
                }
                _ => return self.fail("expected ',' or '}'"),
            }
        }
    }
}

/// Typed field access over a parsed object. Every field must be taken
/// exactly once; [`Fields::finish`] rejects leftovers.
pub struct Fields {
    map: BTreeMap<String, Value>,
    context: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("{context}: expected an object")]
    NotObject { context: &'static str },
    #[error("{context}: missing field `{field}`")]
    Missing { context: &'static str, field: String },
    #[error("{context}: field `{field}` has the wrong type")]
    WrongType { context: &'static str, field: String },
    #[error("{context}: unexpected field `{field}`")]
    Unexpected { context: &'static str, field: String },
    #[error("{context}: field `{field}` is out of range")]
    Range { context: &'static str, field: String },
}

impl Fields {
    pub fn new(value: Value, context: &'static str) -> Result<Self, FieldError> {
        match value {
            Value::Object(map) => Ok(Self { map, context }),
            _ => Err(FieldError::NotObject { context }),
        }
    }

    pub fn take(&mut self, field: &str) -> Result<Value, FieldError> {
        self.map.remove(field).ok_or_else(|| FieldError::Missing {
            context: self.context,
            field: field.into(),
        })
    }

    fn wrong(&self, field: &str) -> FieldError {
        FieldError::WrongType { context: self.context, field: field.into() }
    }

    fn range(&self, field: &str) -> FieldError {
        FieldError::Range { context: self.context, field: field.into() }
    }

    pub fn string(&mut self, field: &str) -> Result<String, FieldError> {
        match self.take(field)? {
            Value::Str(s) => Ok(s),
            _ => Err(self.wrong(field)),
        }
    }

    pub fn opt_string(&mut self, field: &str) -> Result<Option<String>, FieldError> {
        match self.take(field)? {
            Value::Null => Ok(None),
            Value::Str(s) => Ok(Some(s)),
            _ => Err(self.wrong(field)),
        }
    }

    pub fn int(&mut self, field: &str) -> Result<i128, FieldError> {
        match self.take(field)? {
            Value::Int(i) => Ok(i),
            _ => Err(self.wrong(field)),
        }
    }

    pub fn u64(&mut self, field: &str) -> Result<u64, FieldError> {
        let i = self.int(field)?;
        u64::try_from(i).map_err(|_| self.range(field))
    }

    pub fn opt_u64(&mut self, field: &str) -> Result<Option<u64>, FieldError> {
        match self.take(field)? {
            Value::Null => Ok(None),
            Value::Int(i) => u64::try_from(i).map(Some).map_err(|_| self.range(field)),
            _ => Err(self.wrong(field)),
        }
    }

    pub fn i64(&mut self, field: &str) -> Result<i64, FieldError> {
        let i = self.int(field)?;
        i64::try_from(i).map_err(|_| self.range(field))
    }

    pub fn array(&mut self, field: &str) -> Result<Vec<Value>, FieldError> {
        match self.take(field)? {
            Value::Array(a) => Ok(a),
            _ => Err(self.wrong(field)),
        }
    }

    pub fn strings(&mut self, field: &str) -> Result<Vec<String>, FieldError> {
        let items = self.array(field)?;
        items
            .into_iter()
            .map(|v| match v {
                Value::Str(s) => Ok(s),
                _ => Err(self.wrong(field)),
            })
            .collect()
    }

    pub fn finish(self) -> Result<(), FieldError> {
        match self.map.into_keys().next() {
            None => Ok(()),
            Some(field) => Err(FieldError::Unexpected { context: self.context, field }),
        }
    }
}
