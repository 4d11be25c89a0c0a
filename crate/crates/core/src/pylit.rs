//! Python-literal rendering and a small tolerant reader for the same syntax.
//!
//! Model prompts show lists the way Python's `repr` prints them
//! (`['中国', '保险']`), and models answer in the same style, so both
//! directions live here.

use std::fmt::Write;

/// Quote a string the way Python's `repr(str)` does.
pub fn repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// `['a', 'b']`
pub fn repr_list<S: AsRef<str>>(items: &[S]) -> String {
    let inner: Vec<String> = items.iter().map(|s| repr_str(s.as_ref())).collect();
    format!("[{}]", inner.join(", "))
}

/// A parsed Python/JSON literal, restricted to what model answers contain.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    List(Vec<Literal>),
    /// Object entries in source order.
    Dict(Vec<(Literal, Literal)>),
    /// Numbers, `None`, `null`, booleans: kept as raw text.
    Atom(String),
}

/// Cursor-based reader over a char slice.
pub(crate) struct Reader<'a> {
    chars: &'a [char],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(chars: &'a [char], pos: usize) -> Self {
        Self { chars, pos }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Parse one literal starting at the current position.
    pub(crate) fn literal(&mut self, depth: usize) -> Option<Literal> {
        if depth > 64 {
            return None;
        }
        self.skip_ws();
        match self.peek()? {
            '[' => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.eat(']') {
                    return Some(Literal::List(items));
                }
                loop {
                    items.push(self.literal(depth + 1)?);
                    if self.eat(',') {
                        if self.eat(']') {
                            return Some(Literal::List(items));
                        }
                        continue;
                    }
                    if self.eat(']') {
                        return Some(Literal::List(items));
                    }
                    return None;
                }
            }
            '{' => {
                self.pos += 1;
                let mut entries = Vec::new();
                if self.eat('}') {
                    return Some(Literal::Dict(entries));
                }
                loop {
                    let key = self.literal(depth + 1)?;
                    if !self.eat(':') {
                        return None;
                    }
                    let value = self.literal(depth + 1)?;
                    entries.push((key, value));
                    if self.eat(',') {
                        if self.eat('}') {
                            return Some(Literal::Dict(entries));
                        }
                        continue;
                    }
                    if self.eat('}') {
                        return Some(Literal::Dict(entries));
                    }
                    return None;
                }
            }
            q @ ('\'' | '"') => {
                self.pos += 1;
                self.string_body(q).map(Literal::Str)
            }
            c if c.is_ascii_alphanumeric() || c == '-' || c == '.' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || matches!(c, '-' | '+' | '.'))
                {
                    self.pos += 1;
                }
                Some(Literal::Atom(self.chars[start..self.pos].iter().collect()))
            }
            _ => None,
        }
    }

    fn string_body(&mut self, quote: char) -> Option<String> {
        let mut out = String::new();
        loop {
            let c = self.peek()?;
            self.pos += 1;
            match c {
                c if c == quote => return Some(out),
                '\n' => return None,
                '\\' => {
                    let e = self.peek()?;
                    self.pos += 1;
                    match e {
                        'n' => out.push('\n'),
                        'r' => out.push('\r'),
                        't' => out.push('\t'),
                        '0' => out.push('\0'),
                        'x' => out.push(self.hex_escape(2)?),
                        'u' => out.push(self.hex_escape(4)?),
                        other => out.push(other),
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn hex_escape(&mut self, digits: usize) -> Option<char> {
        let end = self.pos.checked_add(digits)?;
        if end > self.chars.len() {
            return None;
        }
        let hex: String = self.chars[self.pos..end].iter().collect();
        let code = u32::from_str_radix(&hex, 16).ok()?;
        self.pos = end;
        char::from_u32(code)
    }
}

/// Parse `text` as exactly one literal (surrounding whitespace allowed).
pub fn parse_literal(text: &str) -> Option<Literal> {
    let chars: Vec<char> = text.chars().collect();
    let mut r = Reader::new(&chars, 0);
    let lit = r.literal(0)?;
    r.skip_ws();
    (r.pos == chars.len()).then_some(lit)
}

/// Every complete top-level `[...]` list in `text`, in order of appearance,
/// together with its char range. Lists nested inside an earlier match are
/// not reported separately.
pub fn scan_lists(text: &str) -> Vec<(std::ops::Range<usize>, Literal)> {
    let chars: Vec<char> = text.chars().collect();
    let mut found = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '[' {
            let mut r = Reader::new(&chars, i);
            if let Some(lit) = r.literal(0) {
                found.push((i..r.pos, lit));
                i = r.pos;
                continue;
            }
        }
        i += 1;
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repr_matches_python() {
        assert_eq!(repr_str("中国"), "'中国'");
        assert_eq!(repr_str("it's"), "\"it's\"");
        assert_eq!(repr_str("a'b\"c"), "'a\\'b\"c'");
        assert_eq!(repr_str("a\\b"), "'a\\\\b'");
        assert_eq!(repr_list(&["中国", "京"]), "['中国', '京']");
        assert_eq!(repr_list::<&str>(&[]), "[]");
    }

    #[test]
    fn reads_back_repr() {
        for s in [
            "plain",
            "it's",
            "a'b\"c",
            "tab\there",
            "back\\slash",
            "\u{1}",
        ] {
            let lit = parse_literal(&repr_str(s)).unwrap();
            assert_eq!(lit, Literal::Str(s.to_string()));
        }
    }

    #[test]
    fn scans_nested_and_trailing_commas() {
        let found = scan_lists("x [['a'], ['b'],] y [1, 2]");
        assert_eq!(found.len(), 2);
        assert_eq!(
            found[0].1,
            Literal::List(vec![
                Literal::List(vec![Literal::Str("a".into())]),
                Literal::List(vec![Literal::Str("b".into())]),
            ])
        );
    }

    #[test]
    fn unterminated_is_rejected() {
        assert!(parse_literal("['a', 'b'").is_none());
        assert!(parse_literal("[{'a' 'b'}]").is_none());
    }
}
