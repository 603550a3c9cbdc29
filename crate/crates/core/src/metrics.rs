//! Metric extraction from process output.
//!
//! Output is split into lines on `\n` (a trailing `\r` is dropped) and each
//! line is decoded as UTF-8 with invalid sequences replaced. Every line is
//! tried against each pattern in order and the first match wins, so a line
//! yields at most one metric. Only the first [`MAX_LINE_BYTES`] bytes of a
//! line take part in matching.
//!
//! # Pattern syntax
//!
//! `default` is the built-in grammar `<name><sep><number>`:
//!
//! * name: `[A-Za-z_][A-Za-z0-9_./-]*`, not preceded by a name character
//! * sep: optional blanks, `:` or `=`, optional blanks
//! * number: `[+-]?(digits[.digits*] | .digits)([eE][+-]?digits)?`, not
//!   followed by a letter, digit, `_`, or `.digit`
//!
//! Custom patterns are templates with placeholders:
//!
//! * `{name}` captures a name as above
//! * `{name=top1}` assigns the fixed name `top1` without consuming input
//! * `{value}` captures a number (exactly one required)
//! * a run of blanks matches one or more blanks
//! * everything else is literal; `{{` and `}}` escape braces
//! * a leading `^` anchors the pattern at the start of the line

use alloc::borrow::Cow;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Literal(String),
    Blanks,
    Name,
    FixedName(String),
    Sep,
    Value,
}

/// A line-oriented metric pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricPattern {
    source: String,
    anchored: bool,
    tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("pattern must contain exactly one {{value}} placeholder")]
    ValueCount,
    #[error("pattern must name the metric with {{name}} or {{name=...}}")]
    NoName,
    #[error("unknown placeholder `{{{0}}}`")]
    Placeholder(String),
    #[error("invalid fixed metric name `{0}`")]
    FixedName(String),
    #[error("unbalanced brace")]
    Brace,
}

impl MetricPattern {
    pub const DEFAULT_SOURCE: &'static str = "default";

    pub fn default_grammar() -> Self {
        Self {
            source: Self::DEFAULT_SOURCE.into(),
            anchored: false,
            tokens: alloc::vec![Token::Name, Token::Sep, Token::Value],
        }
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// Matches a single line, returning `(name, lexical value)`.
    pub fn match_line<'a>(&'a self, line: &'a str) -> Option<(Cow<'a, str>, &'a str)> {
        let b = line.as_bytes();
        let starts: &mut dyn Iterator<Item = usize> =
            if self.anchored { &mut core::iter::once(0) } else { &mut (0..=b.len()) };
        for start in starts {
            if !line.is_char_boundary(start) {
                continue;
            }
            if matches!(self.tokens.first(), Some(Token::Name)) && start > 0 && is_name_char(b[start - 1]) {
                continue;
            }
            let mut caps = Captures::default();
            if self.match_at(b, start, 0, &mut caps) {
                let value = &line[caps.value.0..caps.value.1];
                let name = match caps.name {
                    Some(Cap::Span(s, e)) => Cow::Borrowed(&line[s..e]),
                    Some(Cap::Fixed(i)) => match &self.tokens[i] {
                        Token::FixedName(n) => Cow::Borrowed(n.as_str()),
                        _ => unreachable!(),
                    },
                    None => unreachable!("validated at construction"),
                };
                return Some((name, value));
            }
        }
        None
    }

    fn match_at(&self, b: &[u8], pos: usize, ti: usize, caps: &mut Captures) -> bool {
        let Some(tok) = self.tokens.get(ti) else {
            return true;
        };
        match tok {
            Token::Literal(lit) => {
                b[pos..].starts_with(lit.as_bytes()) && self.match_at(b, pos + lit.len(), ti + 1, caps)
            }
            Token::Blanks => {
                let n = b[pos..].iter().take_while(|c| is_blank(**c)).count();
                (1..=n).rev().any(|k| self.match_at(b, pos + k, ti + 1, caps))
            }
            Token::Sep => {
                let mut p = pos;
                while p < b.len() && is_blank(b[p]) {
                    p += 1;
                }
                if !matches!(b.get(p), Some(b':' | b'=')) {
                    return false;
                }
                p += 1;
                let n = b[p..].iter().take_while(|c| is_blank(**c)).count();
                (0..=n).rev().any(|k| self.match_at(b, p + k, ti + 1, caps))
            }
            Token::FixedName(_) => {
                caps.name = Some(Cap::Fixed(ti));
                self.match_at(b, pos, ti + 1, caps)
            }
            Token::Name => {
                if !b.get(pos).is_some_and(|c| c.is_ascii_alphabetic() || *c == b'_') {
                    return false;
                }
                let n = b[pos..].iter().take_while(|c| is_name_char(**c)).count();
                (1..=n).rev().any(|k| {
                    caps.name = Some(Cap::Span(pos, pos + k));
                    self.match_at(b, pos + k, ti + 1, caps)
                })
            }
            Token::Value => number_ends(b, pos).into_iter().rev().any(|end| {
                if !value_boundary(b, end) {
                    return false;
                }
                caps.value = (pos, end);
                self.match_at(b, end, ti + 1, caps)
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Cap {
    Span(usize, usize),
    Fixed(usize),
}

#[derive(Debug, Default)]
struct Captures {
    name: Option<Cap>,
    value: (usize, usize),
}

fn is_blank(c: u8) -> bool {
    c == b' ' || c == b'\t'
}

fn is_name_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, b'_' | b'.' | b'/' | b'-')
}

fn value_boundary(b: &[u8], end: usize) -> bool {
    match b.get(end) {
        None => true,
        Some(c) if c.is_ascii_alphanumeric() || *c == b'_' => false,
        Some(b'.') => !b.get(end + 1).is_some_and(u8::is_ascii_digit),
        Some(_) => true,
    }
}

/// All end offsets at which a valid number lexeme starting at `pos` can end,
/// in increasing order.
fn number_ends(b: &[u8], pos: usize) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut p = pos;
    if matches!(b.get(p), Some(b'+' | b'-')) {
        p += 1;
    }
    let int_start = p;
    while b.get(p).is_some_and(u8::is_ascii_digit) {
        p += 1;
        ends.push(p);
    }
    let int_digits = p - int_start;
    if b.get(p) == Some(&b'.') {
        p += 1;
        if int_digits > 0 {
            ends.push(p);
        }
        let mut frac = 0;
        while b.get(p).is_some_and(u8::is_ascii_digit) {
            p += 1;
            frac += 1;
            ends.push(p);
        }
        if int_digits == 0 && frac == 0 {
            return ends;
        }
    } else if int_digits == 0 {
        return ends;
    }
    if matches!(b.get(p), Some(b'e' | b'E')) {
        let mut q = p + 1;
        if matches!(b.get(q), Some(b'+' | b'-')) {
            q += 1;
        }
        while b.get(q).is_some_and(u8::is_ascii_digit) {
            q += 1;
            ends.push(q);
        }
    }
    ends
}

/// True when `s` is exactly one number lexeme of the metric grammar.
pub fn is_number_lexeme(s: &str) -> bool {
    let b = s.as_bytes();
    !b.is_empty() && number_ends(b, 0).last() == Some(&b.len())
}

impl FromStr for MetricPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == Self::DEFAULT_SOURCE {
            return Ok(Self::default_grammar());
        }
        let (anchored, body) = match s.strip_prefix('^') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let mut tokens = Vec::new();
        let mut lit = String::new();
        let flush = |lit: &mut String, tokens: &mut Vec<Token>| {
            if !lit.is_empty() {
                tokens.push(Token::Literal(core::mem::take(lit)));
            }
        };
        let mut chars = body.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '}' => return Err(PatternError::Brace),
                '{' => {
                    let mut inner = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) => inner.push(c),
                            None => return Err(PatternError::Brace),
                        }
                    }
                    flush(&mut lit, &mut tokens);
                    let tok = match inner.as_str() {
                        "name" => Token::Name,
                        "value" => Token::Value,
                        _ => match inner.strip_prefix("name=") {
                            Some(fixed) if valid_name(fixed) => Token::FixedName(fixed.into()),
                            Some(fixed) => return Err(PatternError::FixedName(fixed.into())),
                            None => return Err(PatternError::Placeholder(inner)),
                        },
                    };
                    tokens.push(tok);
                }
                ' ' | '\t' => {
                    while chars.peek().is_some_and(|c| *c == ' ' || *c == '\t') {
                        chars.next();
                    }
                    flush(&mut lit, &mut tokens);
                    tokens.push(Token::Blanks);
                }
                c => lit.push(c),
            }
        }
        flush(&mut lit, &mut tokens);
        if tokens.iter().filter(|t| **t == Token::Value).count() != 1 {
            return Err(PatternError::ValueCount);
        }
        let names = tokens.iter().filter(|t| matches!(t, Token::Name | Token::FixedName(_))).count();
        if names != 1 {
            return Err(PatternError::NoName);
        }
        Ok(Self { source: s.to_string(), anchored, tokens })
    }
}

impl fmt::Display for MetricPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn valid_name(s: &str) -> bool {
    let b = s.as_bytes();
    !b.is_empty() && (b[0].is_ascii_alphabetic() || b[0] == b'_') && b.iter().all(|c| is_name_char(*c))
}

/// A metric found in a stream, before a timestamp is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricMatch {
    pub name: String,
    pub lexical_value: String,
    /// Offset of the first byte of the line.
    pub line_offset: u64,
}

/// Incremental line splitter and matcher, fed raw output chunks.
#[derive(Debug)]
pub struct LineScanner<'p> {
    patterns: &'p [MetricPattern],
    line: Vec<u8>,
    line_start: u64,
    consumed: u64,
}

impl<'p> LineScanner<'p> {
    pub fn new(patterns: &'p [MetricPattern]) -> Self {
        Self { patterns, line: Vec::new(), line_start: 0, consumed: 0 }
    }

    /// Feeds a chunk, returning matches for every line it completes.
    pub fn feed(&mut self, mut chunk: &[u8]) -> Vec<MetricMatch> {
        let mut out = Vec::new();
        while !chunk.is_empty() {
            match chunk.iter().position(|&c| c == b'\n') {
                Some(nl) => {
                    self.push(&chunk[..nl]);
                    self.consumed += nl as u64 + 1;
                    self.end_line(&mut out);
                    chunk = &chunk[nl + 1..];
                }
                None => {
                    self.push(chunk);
                    self.consumed += chunk.len() as u64;
                    chunk = &[];
                }
            }
        }
        out
    }

    /// Flushes a final line that lacks a trailing newline.
    pub fn finish(mut self) -> Vec<MetricMatch> {
        let mut out = Vec::new();
        if self.consumed > self.line_start {
            self.end_line(&mut out);
        }
        out
    }

    fn push(&mut self, bytes: &[u8]) {
        let room = MAX_LINE_BYTES.saturating_sub(self.line.len());
        self.line.extend_from_slice(&bytes[..bytes.len().min(room)]);
    }

    fn end_line(&mut self, out: &mut Vec<MetricMatch>) {
        let mut bytes = &self.line[..];
        if let [rest @ .., b'\r'] = bytes {
            bytes = rest;
        }
        let text = String::from_utf8_lossy(bytes);
        for p in self.patterns {
            if let Some((name, value)) = p.match_line(&text) {
                out.push(MetricMatch {
                    name: name.into_owned(),
                    lexical_value: value.to_string(),
                    line_offset: self.line_start,
                });
                break;
            }
        }
        self.line.clear();
        self.line_start = self.consumed;
    }
}

/// Extracts metrics from a complete transcript.
pub fn parse_metrics(transcript: &[u8], patterns: &[MetricPattern]) -> Vec<MetricMatch> {
    let mut scanner = LineScanner::new(patterns);
    let mut out = scanner.feed(transcript);
    out.extend(scanner.finish());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn default() -> Vec<MetricPattern> {
        vec![MetricPattern::default_grammar()]
    }

    fn one(line: &str) -> Option<(String, String)> {
        MetricPattern::default_grammar().match_line(line).map(|(n, v)| (n.into_owned(), v.into()))
    }

    fn pair(n: &str, v: &str) -> Option<(String, String)> {
        Some((n.into(), v.into()))
    }

    #[test]
    fn default_grammar_examples() {
        assert_eq!(one("val_accuracy: 0.913"), pair("val_accuracy", "0.913"));
        assert_eq!(one("loss=1.065107"), pair("loss", "1.065107"));
        assert_eq!(one("Epoch 3/10 starting…"), None);
        assert_eq!(one("  lr = 1e-3"), pair("lr", "1e-3"));
        assert_eq!(one("train/loss :-2.5E+04 (best)"), pair("train/loss", "-2.5E+04"));
        assert_eq!(one("step 10 - loss: 0.51 - acc: 0.8"), pair("loss", "0.51"));
        assert_eq!(one("acc: 0.913."), pair("acc", "0.913"));
        assert_eq!(one("version: 1.2.3"), None);
        assert_eq!(one("ratio: .5"), pair("ratio", ".5"));
        assert_eq!(one("ratio: 5."), pair("ratio", "5."));
        assert_eq!(one("see http://host:8080/x"), None);
        assert_eq!(one("epochs: 10x"), None);
        assert_eq!(one("3acc: 1"), None);
    }

    #[test]
    fn templates() {
        let p: MetricPattern = "Top-1 accuracy is {value}{name=top1}%".parse().unwrap();
        assert_eq!(p.match_line("  Top-1 accuracy is 76.1%").map(|(n, v)| (n.into_owned(), v)), Some(("top1".into(), "76.1")));
        assert_eq!(p.match_line("Top-1 accuracy is 76.1"), None);

        let p: MetricPattern = "^[{name}] {value}".parse().unwrap();
        assert_eq!(p.match_line("[f1]   0.5").map(|(n, v)| (n.into_owned(), v)), Some(("f1".into(), "0.5")));
        assert_eq!(p.match_line("x [f1] 0.5"), None);

        let p: MetricPattern = "{{{name}}} -> {value}".parse().unwrap();
        assert!(p.match_line("{bleu} -> 31.2").is_some());

        assert_eq!("{name}".parse::<MetricPattern>(), Err(PatternError::ValueCount));
        assert_eq!("{value}".parse::<MetricPattern>(), Err(PatternError::NoName));
        assert_eq!("{x} {value}".parse::<MetricPattern>(), Err(PatternError::Placeholder("x".into())));
        assert_eq!("{name=9x} {value}".parse::<MetricPattern>(), Err(PatternError::FixedName("9x".into())));
        assert!("{name {value}".parse::<MetricPattern>().is_err());
    }

    #[test]
    fn first_pattern_wins_per_line() {
        let ps = vec!["{name=custom} v={value}".parse().unwrap(), MetricPattern::default_grammar()];
        let m = parse_metrics(b"x v=1\nloss: 2\n", &ps);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].name.as_str(), m[0].lexical_value.as_str()), ("custom", "1"));
        assert_eq!((m[1].name.as_str(), m[1].lexical_value.as_str()), ("loss", "2"));
    }

    #[test]
    fn offsets_are_line_starts() {
        // Offsets by hand: line 1 is 22 bytes incl. newline, line 2 is 19.
        let t = b"Epoch 1/2 starting...\nloss=1.065107 done\nval_accuracy: 0.913";
        let m = parse_metrics(t, &default());
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].name.as_str(), m[0].line_offset), ("loss", 22));
        assert_eq!((m[1].name.as_str(), m[1].line_offset), ("val_accuracy", 41));
    }

    #[test]
    fn crlf_and_invalid_utf8() {
        let m = parse_metrics(b"\xff\xfe acc=0.5\r\nf1=0.25\r\n", &default());
        let got: Vec<_> = m.iter().map(|m| (m.lexical_value.as_str(), m.line_offset)).collect();
        assert_eq!(got, [("0.5", 0), ("0.25", 12)]);
    }

    #[test]
    fn long_lines_only_match_on_prefix() {
        let mut t = vec![b'x'; MAX_LINE_BYTES];
        t.extend_from_slice(b" acc=1\nacc=2\n");
        let m = parse_metrics(&t, &default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].line_offset, MAX_LINE_BYTES as u64 + 7);
    }

    proptest! {
        #[test]
        fn chunking_does_not_change_results(
            lines in prop::collection::vec("[a-z_]{1,6}(: |=| )[-+]?[0-9]{0,3}(\\.[0-9]{0,3})?[ a-z]{0,3}", 0..12),
            cuts in prop::collection::vec(0usize..400, 0..8),
        ) {
            let text = lines.join("\n");
            let bytes = text.as_bytes();
            let whole = parse_metrics(bytes, &default());
            let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(bytes.len())).collect();
            cuts.sort_unstable();
            let patterns = default();
            let mut sc = LineScanner::new(&patterns);
            let mut got = Vec::new();
            let mut prev = 0;
            for c in cuts.into_iter().chain(core::iter::once(bytes.len())) {
                got.extend(sc.feed(&bytes[prev..c]));
                prev = c;
            }
            got.extend(sc.finish());
            prop_assert_eq!(got, whole);
        }

        #[test]
        fn lexemes_round_trip_through_f64(
            int in "[+-]?[0-9]{1,12}",
            frac in "(\\.[0-9]{0,9})?",
            exp in "([eE][+-]?[0-9]{1,2})?",
        ) {
            let lexeme = alloc::format!("{int}{frac}{exp}");
            prop_assert!(is_number_lexeme(&lexeme));
            let line = alloc::format!("m: {lexeme}");
            let grammar = MetricPattern::default_grammar();
            let (_, v) = grammar.match_line(&line).unwrap();
            prop_assert_eq!(v, lexeme.as_str());
            let x: f64 = v.parse().unwrap();
            let again: f64 = alloc::format!("{x}").parse().unwrap();
            prop_assert_eq!(x.to_bits(), again.to_bits());
        }
    }
}
