//! Lexical helpers for the pattern-based Solidity parser: comment/string
//! masking, line indexing and bracket matching.
//!
//! All helpers work on byte offsets into ASCII-masked text. Masking keeps
//! the byte length and every newline of the input, so offsets and line
//! numbers computed on the masked text are valid for the original.

/// Replace comment bodies and string-literal contents with spaces.
///
/// Quote characters of string literals are kept so that `"..."` still reads
/// as a single atom. Newlines are preserved everywhere.
pub fn mask(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    let blank = |b: u8| if b == b'\n' { b'\n' } else { b' ' };
    while i < bytes.len() {
        let b = bytes[i];
        let next = bytes.get(i + 1).copied();
        if b == b'/' && next == Some(b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                out.push(b' ');
                i += 1;
            }
        } else if b == b'/' && next == Some(b'*') {
            out.extend_from_slice(b"  ");
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                out.push(blank(bytes[i]));
                i += 1;
            }
            if i < bytes.len() {
                out.extend_from_slice(b"  ");
                i += 2;
            }
        } else if b == b'"' || b == b'\'' {
            let quote = b;
            out.push(quote);
            i += 1;
            while i < bytes.len() && bytes[i] != quote && bytes[i] != b'\n' {
                if bytes[i] == b'\\' && i + 1 < bytes.len() {
                    out.push(b' ');
                    i += 1;
                }
                out.push(blank(bytes[i]));
                i += 1;
            }
            if i < bytes.len() && bytes[i] == quote {
                out.push(quote);
                i += 1;
            }
        } else {
            out.push(b);
            i += 1;
        }
    }
    // Non-ASCII bytes only occur inside comments/strings (blanked) or are
    // copied as complete UTF-8 sequences, so this cannot fail.
    String::from_utf8(out).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned())
}

/// Byte offset to 1-based line lookup.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(
            text.bytes()
                .enumerate()
                .filter(|&(_, b)| b == b'\n')
                .map(|(i, _)| i + 1),
        );
        LineIndex { starts }
    }

    /// 1-based line containing `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        self.starts.partition_point(|&s| s <= offset)
    }

    /// Byte offset of the first character of a 1-based line.
    pub fn line_start(&self, line: usize) -> Option<usize> {
        self.starts.get(line.checked_sub(1)?).copied()
    }
}

/// Given `open` at `bytes[at]`, return the offset of its matching closer.
pub fn matching(bytes: &[u8], at: usize) -> Option<usize> {
    let (open, close) = match bytes.get(at)? {
        b'(' => (b'(', b')'),
        b'[' => (b'[', b']'),
        b'{' => (b'{', b'}'),
        _ => return None,
    };
    let mut depth = 0i64;
    for (i, &b) in bytes.iter().enumerate().skip(at) {
        if b == open {
            depth += 1;
        } else if b == close {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

/// Split on `sep` occurring outside any bracket pair.
pub fn split_top_level(s: &str, sep: u8) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i64;
    let mut start = 0;
    for (i, b) in s.bytes().enumerate() {
        match b {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            _ if b == sep && depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect()
}

pub fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b'$'
}

pub fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// An identifier token with its byte span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ident<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// All identifier tokens of `s`, skipping numeric literals such as `1e18`.
pub fn identifiers(s: &str) -> Vec<Ident<'_>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_digit() {
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
        } else if is_ident_start(b) {
            let start = i;
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            out.push(Ident {
                text: &s[start..i],
                start,
                end: i,
            });
        } else {
            i += 1;
        }
    }
    out
}

/// Previous non-whitespace byte before `at`, with its offset.
pub fn prev_non_ws(bytes: &[u8], at: usize) -> Option<(usize, u8)> {
    bytes[..at]
        .iter()
        .enumerate()
        .rev()
        .find(|(_, b)| !b.is_ascii_whitespace())
        .map(|(i, &b)| (i, b))
}

/// Next non-whitespace byte at or after `at`, with its offset.
pub fn next_non_ws(bytes: &[u8], at: usize) -> Option<(usize, u8)> {
    bytes
        .iter()
        .enumerate()
        .skip(at)
        .find(|(_, b)| !b.is_ascii_whitespace())
        .map(|(i, &b)| (i, b))
}

/// The identifier ending right before `at` (skipping whitespace), if any.
pub fn word_before(s: &str, at: usize) -> Option<&str> {
    let bytes = s.as_bytes();
    let (end, b) = prev_non_ws(bytes, at)?;
    if !is_ident_char(b) {
        return None;
    }
    let mut start = end;
    while start > 0 && is_ident_char(bytes[start - 1]) {
        start -= 1;
    }
    Some(&s[start..=end])
}
