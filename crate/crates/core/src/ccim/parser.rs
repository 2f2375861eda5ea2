//! Pattern-based Solidity parser producing contract summaries and
//! per-function records.
//!
//! The parser works on comment/string-masked text so that regexes and
//! bracket matching never see literal contents. Offsets in the masked text
//! are offsets in the original, so every line number is exact.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use log::warn;
use regex::Regex;

use super::model::*;
use crate::ingest::AuditSource;
use crate::lexer::{self, LineIndex};
use crate::types::{normalize_ws, FnRef, VarId};

/// Output of [`parse`].
#[derive(Debug, Clone, Default)]
pub struct Parsed {
    pub contracts: Vec<ContractInfo>,
    pub records: Vec<FunctionRecord>,
    pub diagnostics: Vec<String>,
}

static DECL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(abstract\s+contract|contract|interface|library)\s+([A-Za-z_$][A-Za-z0-9_$]*)")
        .unwrap()
});
static TOP_TYPE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(struct|enum)\s+([A-Za-z_$][A-Za-z0-9_$]*)|\btype\s+([A-Za-z_$][A-Za-z0-9_$]*)\s+is\b").unwrap());
static LOCAL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b((?:uint|int)\d*|bool|address(?:\s+payable)?|bytes\d*|string|[A-Z][A-Za-z0-9_$]*(?:\.[A-Z][A-Za-z0-9_$]*)?)(?:\s*\[[^\]]*\])*\s+(?:(memory|storage|calldata)\s+)?([A-Za-z_$][A-Za-z0-9_$]*)\s*([=;,)])",
    )
    .unwrap()
});
static REQUIRE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(require|assert)\s*\(").unwrap());
static IF_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bif\s*\(").unwrap());
static CHECK_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(_check[A-Za-z0-9_]*|_only[A-Za-z0-9_]*|_require(?:Owner|Role|Admin|Auth)[A-Za-z0-9_]*|_authorize[A-Za-z0-9_]*)\s*\(").unwrap()
});
static ACCESS_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"msg\.sender\s*(==|!=)|(==|!=)\s*msg\.sender|_msgSender\(\)\s*(==|!=)|(==|!=)\s*_msgSender\(\)|tx\.origin\s*(==|!=)|(==|!=)\s*tx\.origin|\bhasRole\s*\(|^!?\(?\s*[A-Za-z_$][A-Za-z0-9_$]*\s*\[\s*(msg\.sender|_msgSender\(\))\s*\]\s*\)?$|\bisAuthorized\b|\bauthorized\s*\[",
    )
    .unwrap()
});
static FLOW_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\.\s*(transfer|send|transferFrom|safeTransfer|safeTransferFrom)\s*\(").unwrap()
});
static LOWLEVEL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\.\s*(call|delegatecall|staticcall)\s*(\{)?").unwrap());
static SENDVALUE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(sendValue|selfdestruct)\s*\(").unwrap());
static RETURN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\breturn\b").unwrap());
static EMIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bemit\s+([A-Za-z_$][A-Za-z0-9_$]*)\s*\(").unwrap());
static BLOCK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(unchecked|assembly)\b[^{;]*\{").unwrap());

const ELEMENTARY: &[&str] = &["address", "bool", "string", "bytes", "byte"];
const HEADER_KEYWORDS: &[&str] = &[
    "public", "external", "internal", "private", "view", "pure", "payable", "nonpayable",
    "virtual", "constant",
];

fn is_elementary(ty: &str) -> bool {
    let t = ty.trim();
    let head = t.split_whitespace().next().unwrap_or("");
    ELEMENTARY.contains(&head)
        || head.starts_with("uint")
        || head.starts_with("int")
        || (head.starts_with("bytes") && head[5..].chars().all(|c| c.is_ascii_digit()))
        || head.starts_with("mapping")
        || head.starts_with("function")
        || t.ends_with(']')
}

/// Comment lines directly preceding `offset`, in source order.
fn natspec_above(text: &str, li: &LineIndex, offset: usize) -> String {
    let line = li.line_of(offset);
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut l = line.saturating_sub(1);
    while l >= 1 {
        let t = lines.get(l - 1).map_or("", |s| s.trim());
        if t.starts_with("///") || t.starts_with("/**") || t.starts_with('*') || t.starts_with("*/") || t.starts_with("//") {
            out.push(t.to_string());
            l -= 1;
        } else {
            break;
        }
    }
    out.reverse();
    out.join("\n")
}

struct RawContract {
    info: ContractInfo,
    body_open: usize,
    body_close: usize,
}

struct RawFunction {
    owner: String,
    kind: FunctionKind,
    name: String,
    item_start: usize,
    params_open: usize,
    params_close: usize,
    body_open: usize,
    body_close: usize,
}

/// Top-level declarations with their body ranges in `masked`.
fn scan_contracts(
    masked: &str,
    text: &str,
    li: &LineIndex,
    source: &AuditSource,
    diags: &mut Vec<String>,
) -> Vec<RawContract> {
    let bytes = masked.as_bytes();
    let decls: Vec<_> = DECL_RE.captures_iter(masked).collect();
    let mut out = Vec::new();
    let mut cursor = 0;
    for (i, cap) in decls.iter().enumerate() {
        let m = cap.get(0).unwrap();
        if m.start() < cursor {
            continue;
        }
        let Some(open) = masked[m.end()..].find(['{', ';']).map(|p| p + m.end()) else {
            continue;
        };
        if bytes[open] != b'{' {
            continue;
        }
        let kw = cap.get(1).unwrap().as_str();
        let kind = if kw.starts_with("abstract") {
            ContractKind::Abstract
        } else {
            match kw {
                "contract" => ContractKind::Contract,
                "interface" => ContractKind::Interface,
                _ => ContractKind::Library,
            }
        };
        let name = cap[2].to_string();
        let close = match lexer::matching(bytes, open) {
            Some(c) => c,
            None => {
                let next = decls
                    .get(i + 1..)
                    .and_then(|rest| rest.iter().map(|c| c.get(0).unwrap().start()).find(|&s| s > open));
                let c = next.map_or(masked.len().saturating_sub(1), |s| s.saturating_sub(1));
                let msg = format!(
                    "unbalanced braces in `{name}` at line {}; recovered at next declaration",
                    li.line_of(m.start())
                );
                warn!("{msg}");
                diags.push(msg);
                c
            }
        };
        let header = &masked[m.end()..open];
        static IS_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bis\b").unwrap());
        let bases = match IS_RE.find(header) {
            Some(is) => lexer::split_top_level(&header[is.end()..], b',')
                .into_iter()
                .filter_map(|b| lexer::identifiers(b).first().map(|i| i.text.to_string()))
                .collect(),
            None => Vec::new(),
        };
        let start_line = li.line_of(m.start());
        let file = source
            .offsets
            .file_of(start_line)
            .unwrap_or_default()
            .to_string();
        let in_scope = source.scope.contains(&name) && matches!(kind, ContractKind::Contract | ContractKind::Abstract);
        out.push(RawContract {
            info: ContractInfo {
                name,
                kind,
                bases,
                state_vars: Vec::new(),
                modifiers: Vec::new(),
                functions: Vec::new(),
                structs: Vec::new(),
                enums: Vec::new(),
                span: (start_line, li.line_of(close)),
                file,
                in_scope,
                natspec: natspec_above(text, li, m.start()),
            },
            body_open: open,
            body_close: close,
        });
        cursor = close + 1;
    }
    out
}

/// Split a contract body into items: `(start, end_inclusive)` offsets.
fn contract_items(masked: &str, open: usize, close: usize) -> Vec<(usize, usize)> {
    let bytes = masked.as_bytes();
    let mut items = Vec::new();
    let mut i = open + 1;
    let mut start: Option<usize> = None;
    let mut paren = 0i64;
    while i < close {
        let b = bytes[i];
        if start.is_none() {
            if b.is_ascii_whitespace() || b == b';' {
                i += 1;
                continue;
            }
            start = Some(i);
        }
        match b {
            b'(' | b'[' => paren += 1,
            b')' | b']' => paren -= 1,
            b'{' if paren <= 0 => {
                let end = lexer::matching(bytes, i).unwrap_or(close.saturating_sub(1)).min(close - 1);
                // `{` of an initializer list inside a statement is not an item end.
                items.push((start.take().unwrap(), end));
                paren = 0;
                i = end + 1;
                continue;
            }
            b';' if paren <= 0 => {
                items.push((start.take().unwrap(), i));
                paren = 0;
            }
            _ => {}
        }
        i += 1;
    }
    if let Some(s) = start {
        if !masked[s..close].trim().is_empty() {
            items.push((s, close - 1));
        }
    }
    items
}

/// Offset of the first top-level `=` that is an assignment.
fn top_level_assign(s: &str) -> Option<usize> {
    let b = s.as_bytes();
    let mut depth = 0i64;
    for i in 0..b.len() {
        match b[i] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b'=' if depth == 0 => {
                let next = b.get(i + 1).copied();
                let prev = if i > 0 { b[i - 1] } else { b' ' };
                if next != Some(b'=') && next != Some(b'>') && !matches!(prev, b'=' | b'!' | b'<' | b'>') {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_state_var(item: &str, line: usize) -> Option<StateVar> {
    let item = item.trim().trim_end_matches(';');
    let (lhs, init) = match top_level_assign(item) {
        Some(p) => (&item[..p], true),
        None => (item, false),
    };
    static OVERRIDE_RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"\boverride\s*(\([^)]*\))?").unwrap());
    let lhs = OVERRIDE_RE.replace_all(lhs, " ");
    let idents = lexer::identifiers(&lhs);
    let name = idents.last()?;
    let ty_part = &lhs[..name.start];
    let mut constant = false;
    let mut immutable = false;
    let mut ty_tokens = Vec::new();
    // Keep the mapping(...) group intact while dropping attribute words.
    let ty_norm = normalize_ws(ty_part);
    for tok in ty_norm.split(' ') {
        match tok {
            "public" | "private" | "internal" | "transient" => {}
            "constant" => constant = true,
            "immutable" => immutable = true,
            t => ty_tokens.push(t),
        }
    }
    let ty = ty_tokens.join(" ");
    if ty.is_empty() {
        return None;
    }
    Some(StateVar {
        name: name.text.to_string(),
        ty,
        line,
        constant,
        immutable,
        initialized: init,
    })
}

fn parse_params(p: &str) -> Vec<Param> {
    lexer::split_top_level(p, b',')
        .into_iter()
        .map(|decl| {
            let ids = lexer::identifiers(decl);
            let words: Vec<&str> = ids.iter().map(|i| i.text).collect();
            let is_loc = |w: &str| matches!(w, "memory" | "storage" | "calldata" | "indexed" | "payable");
            let ty_like = decl.contains('(') || decl.contains(')');
            if words.len() >= 2 && !is_loc(words[words.len() - 1]) && !ty_like {
                let name = ids.last().unwrap();
                let ty = normalize_ws(&decl[..name.start]);
                let ty = ty
                    .split(' ')
                    .filter(|w| !matches!(*w, "memory" | "storage" | "calldata" | "indexed"))
                    .collect::<Vec<_>>()
                    .join(" ");
                Param {
                    ty,
                    name: name.text.to_string(),
                }
            } else if words.len() >= 2 && ty_like {
                // Function-typed or mapping params: last identifier is the name.
                let name = ids.last().unwrap();
                Param {
                    ty: normalize_ws(&decl[..name.start]),
                    name: name.text.to_string(),
                }
            } else {
                Param {
                    ty: normalize_ws(decl),
                    name: String::new(),
                }
            }
        })
        .collect()
}

/// Guard expression classification: does it check the caller?
pub fn is_access_expr(expr: &str) -> bool {
    ACCESS_RE.is_match(expr)
}

struct Requires {
    all: Vec<Guard>,
}

/// `require`/`assert`, `if (...) revert` and guard-helper calls in a body.
fn scan_requires(masked: &str, base: usize, li: &LineIndex) -> Requires {
    let bytes = masked.as_bytes();
    let mut all = Vec::new();
    for m in REQUIRE_RE.find_iter(masked) {
        if lexer::prev_non_ws(bytes, m.start()).is_some_and(|(_, b)| b == b'.') {
            continue;
        }
        let open = m.end() - 1;
        if let Some(close) = lexer::matching(bytes, open) {
            let args = lexer::split_top_level(&masked[open + 1..close], b',');
            if let Some(cond) = args.first() {
                all.push(Guard {
                    expr: normalize_ws(cond),
                    line: li.line_of(base + m.start()),
                    kind: GuardKind::Require,
                });
            }
        }
    }
    for m in IF_RE.find_iter(masked) {
        let open = m.end() - 1;
        let Some(close) = lexer::matching(bytes, open) else { continue };
        let Some((after, b)) = lexer::next_non_ws(bytes, close + 1) else { continue };
        let reverts = if b == b'{' {
            lexer::next_non_ws(bytes, after + 1)
                .is_some_and(|(p, _)| masked[p..].starts_with("revert"))
        } else {
            masked[after..].starts_with("revert")
        };
        if reverts {
            all.push(Guard {
                expr: format!("!({})", normalize_ws(&masked[open + 1..close])),
                line: li.line_of(base + m.start()),
                kind: GuardKind::IfRevert,
            });
        }
    }
    for m in CHECK_RE.captures_iter(masked) {
        let whole = m.get(0).unwrap();
        if lexer::prev_non_ws(bytes, whole.start()).is_some_and(|(_, b)| b == b'.') {
            continue;
        }
        let open = whole.end() - 1;
        let args = lexer::matching(bytes, open)
            .map(|c| normalize_ws(&masked[open + 1..c]))
            .unwrap_or_default();
        all.push(Guard {
            expr: format!("{}({})", &m[1], args),
            line: li.line_of(base + whole.start()),
            kind: GuardKind::Check,
        });
    }
    all.sort_by_key(|g| g.line);
    Requires { all }
}

/// Walk backward from `dot` over a primary expression (`a.b[c](d)`).
fn receiver_before(masked: &str, dot: usize) -> String {
    let bytes = masked.as_bytes();
    let mut i = dot;
    loop {
        while i > 0 && bytes[i - 1].is_ascii_whitespace() {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        let b = bytes[i - 1];
        if b == b')' || b == b']' {
            let (open, close) = if b == b')' { (b'(', b')') } else { (b'[', b']') };
            let mut depth = 0i64;
            let mut j = i;
            while j > 0 {
                j -= 1;
                if bytes[j] == close {
                    depth += 1;
                } else if bytes[j] == open {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
            }
            i = j;
        } else if lexer::is_ident_char(b) {
            while i > 0 && lexer::is_ident_char(bytes[i - 1]) {
                i -= 1;
            }
        } else if b == b'.' {
            i -= 1;
            continue;
        } else {
            break;
        }
        // Continue only across `.` or into the callee of `( ... )`.
        let mut k = i;
        while k > 0 && bytes[k - 1].is_ascii_whitespace() {
            k -= 1;
        }
        if k > 0 && (bytes[k - 1] == b'.' || lexer::is_ident_char(bytes[k - 1]) && bytes[i] == b'(') {
            continue;
        }
        if k > 0 && bytes[k - 1] == b'.' {
            continue;
        }
        break;
    }
    normalize_ws(masked[i..dot].trim())
}

/// Argument list of a call whose `(` is at `open`.
fn call_args(masked: &str, open: usize) -> (Vec<String>, Option<usize>) {
    match lexer::matching(masked.as_bytes(), open) {
        Some(close) => (
            lexer::split_top_level(&masked[open + 1..close], b',')
                .into_iter()
                .map(normalize_ws)
                .collect(),
            Some(close),
        ),
        None => (Vec::new(), None),
    }
}

/// Skip an optional `{value: ...}` call-options group; return the `(` offset.
fn call_paren_after(bytes: &[u8], mut at: usize) -> Option<usize> {
    let (p, b) = lexer::next_non_ws(bytes, at)?;
    at = p;
    if b == b'{' {
        let close = lexer::matching(bytes, at)?;
        let (p2, b2) = lexer::next_non_ws(bytes, close + 1)?;
        return (b2 == b'(').then_some(p2);
    }
    (b == b'(').then_some(at)
}

/// Everything the body scanner needs to know about the surrounding code.
struct Scope<'a> {
    /// Visible state variables, most-derived first.
    vars: &'a [(VarId, String)],
    /// Visible implemented functions: name → defining contract.
    funcs: &'a HashMap<String, String>,
    /// Functions reachable through `super.`.
    super_funcs: &'a HashMap<String, String>,
    /// Type names for which `v.method(...)` is never an external call.
    non_callable: &'a HashSet<String>,
}

impl Scope<'_> {
    fn var(&self, name: &str) -> Option<&(VarId, String)> {
        self.vars.iter().find(|(v, _)| v.name == name)
    }

    fn callable(&self, ty: &str) -> bool {
        !is_elementary(ty) && !self.non_callable.contains(ty.trim())
    }
}

#[derive(Default)]
struct BodyFacts {
    reads: BTreeSet<VarId>,
    writes: BTreeSet<VarId>,
    updates: Vec<StateUpdate>,
    call_sites: Vec<CallSite>,
    internal: Vec<InternalCall>,
    flows: Vec<ValueFlow>,
    low_level: Vec<LowLevelCall>,
    unchecked: Vec<Span>,
    assembly: Vec<AsmBlock>,
    posts: Vec<String>,
}

/// Text from `from` to the end of the current statement (depth-0 `;`).
fn statement_rest(masked: &str, from: usize) -> &str {
    let b = masked.as_bytes();
    let mut depth = 0i64;
    for i in from..b.len() {
        match b[i] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => {
                depth -= 1;
                if depth < 0 {
                    return &masked[from..i];
                }
            }
            b';' if depth == 0 => return &masked[from..i],
            _ => {}
        }
    }
    &masked[from..]
}

fn update_kind_for_assign(var: &str, rhs: &str) -> UpdateKind {
    let r = normalize_ws(rhs);
    let ids = lexer::identifiers(&r);
    if ids.first().is_some_and(|i| i.text == var && i.start == 0) {
        let after = r[ids[0].end..].trim_start();
        // Skip an index/member suffix on the repeated variable.
        let after = skip_lvalue_suffix(after);
        if after.starts_with('+') {
            return UpdateKind::Add;
        }
        if after.starts_with('-') {
            return UpdateKind::Sub;
        }
    }
    UpdateKind::Assign
}

fn skip_lvalue_suffix(s: &str) -> &str {
    let b = s.as_bytes();
    let mut i = 0;
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < b.len() && b[i] == b'[' {
            match lexer::matching(b, i) {
                Some(c) => i = c + 1,
                None => return &s[i..],
            }
        } else if i < b.len() && b[i] == b'.' && b.get(i + 1).is_some_and(|&c| lexer::is_ident_start(c)) {
            i += 1;
            while i < b.len() && lexer::is_ident_char(b[i]) {
                i += 1;
            }
        } else {
            return s[i..].trim_start();
        }
    }
}

fn scan_body(
    masked_full: &str,
    open: usize,
    close: usize,
    li: &LineIndex,
    scope: &Scope<'_>,
    locals: &HashSet<String>,
    aliases: &HashMap<String, VarId>,
) -> BodyFacts {
    let mut facts = BodyFacts::default();
    // Blank assembly blocks; record them and unchecked spans.
    let mut body: Vec<u8> = masked_full.as_bytes()[open + 1..close].to_vec();
    let base = open + 1;
    let body_str = masked_full[open + 1..close].to_string();
    for m in BLOCK_RE.captures_iter(&body_str) {
        let whole = m.get(0).unwrap();
        let brace = whole.end() - 1;
        let Some(end) = lexer::matching(body_str.as_bytes(), brace) else { continue };
        let (l0, l1) = (li.line_of(base + whole.start()), li.line_of(base + end));
        if &m[1] == "unchecked" {
            facts.unchecked.push((l0, l1));
        } else {
            facts.assembly.push(AsmBlock {
                line: l0,
                text: normalize_ws(&body_str[brace + 1..end]),
            });
            for b in body.iter_mut().take(end).skip(brace + 1) {
                if *b != b'\n' {
                    *b = b' ';
                }
            }
        }
    }
    let body = String::from_utf8(body).unwrap_or_default();
    let bytes = body.as_bytes();
    let line_at = |off: usize| li.line_of(base + off);

    for ident in lexer::identifiers(&body) {
        let prev = lexer::prev_non_ws(bytes, ident.start);
        if prev.is_some_and(|(_, b)| b == b'.') {
            continue;
        }
        let (var, via_alias) = if let Some(v) = aliases.get(ident.text) {
            (v.clone(), true)
        } else if locals.contains(ident.text) {
            continue;
        } else if let Some((v, _)) = scope.var(ident.text) {
            (v.clone(), false)
        } else {
            continue;
        };
        let next = lexer::next_non_ws(bytes, ident.end);
        if next.is_some_and(|(_, b)| b == b'(') {
            continue;
        }
        // Declaration of the alias itself (`X storage p = ...`).
        if via_alias && word_is_storage_decl(&body, ident.start) {
            continue;
        }
        let line = line_at(ident.start);
        let ty = scope.var(&var.name).map(|(_, t)| t.as_str()).unwrap_or("");

        // Member call directly on the variable: `v.method(...)` / `v.method{..}(...)`.
        if let Some((dot, b'.')) = next {
            let after = &body[dot + 1..];
            let m_ids = lexer::identifiers(after);
            if let Some(mid) = m_ids.first().filter(|i| after[..i.start].trim().is_empty()) {
                let m_end = dot + 1 + mid.end;
                if let Some(paren) = call_paren_after(bytes, m_end) {
                    let method = mid.text;
                    if matches!(method, "push" | "pop") && !via_alias {
                        facts.writes.insert(var.clone());
                        facts.reads.insert(var.clone());
                        facts.updates.push(StateUpdate {
                            var: var.clone(),
                            kind: if method == "push" { UpdateKind::Push } else { UpdateKind::Pop },
                            line,
                            rhs: call_args(&body, paren).0.join(", "),
                        });
                        continue;
                    }
                    if !via_alias && scope.callable(ty) {
                        let (args, _) = call_args(&body, paren);
                        facts.call_sites.push(CallSite {
                            target: var.clone(),
                            method: method.to_string(),
                            line,
                            args,
                            cast: None,
                        });
                        facts.reads.insert(var.clone());
                        continue;
                    }
                }
            }
        }

        // Cast call: `Cast(v).method(...)`.
        if let (Some((p_open, b'(')), Some((p_close, b')'))) = (prev, next) {
            if let Some(cast) = lexer::word_before(&body, p_open) {
                let cast_is_type = cast.chars().next().is_some_and(|c| c.is_ascii_uppercase());
                if cast_is_type {
                    if let Some((dot, b'.')) = lexer::next_non_ws(bytes, p_close + 1) {
                        let after = &body[dot + 1..];
                        if let Some(mid) = lexer::identifiers(after)
                            .first()
                            .filter(|i| after[..i.start].trim().is_empty())
                        {
                            if let Some(paren) = call_paren_after(bytes, dot + 1 + mid.end) {
                                let (args, _) = call_args(&body, paren);
                                facts.call_sites.push(CallSite {
                                    target: var.clone(),
                                    method: mid.text.to_string(),
                                    line,
                                    args,
                                    cast: Some(cast.to_string()),
                                });
                                facts.reads.insert(var.clone());
                                continue;
                            }
                        }
                    }
                }
            }
        }

        // Write detection.
        let suffix_start = ident.end;
        let rest = &body[suffix_start..];
        let after = skip_lvalue_suffix(rest);
        let after_off = body.len() - after.len();
        let prefix_write = {
            let before = body[..ident.start].trim_end();
            if before.ends_with("++") || before.ends_with("--") {
                Some(if before.ends_with("++") { UpdateKind::Add } else { UpdateKind::Sub })
            } else if before.ends_with("delete") && lexer::word_before(&body, ident.start) == Some("delete") {
                Some(UpdateKind::Delete)
            } else {
                None
            }
        };
        let mut write: Option<(UpdateKind, String, bool)> = prefix_write.map(|k| (k, String::new(), k != UpdateKind::Delete));
        if write.is_none() {
            const COMPOUND: &[(&str, UpdateKind)] = &[
                ("<<=", UpdateKind::Other),
                (">>=", UpdateKind::Other),
                ("+=", UpdateKind::Add),
                ("-=", UpdateKind::Sub),
                ("*=", UpdateKind::Other),
                ("/=", UpdateKind::Other),
                ("%=", UpdateKind::Other),
                ("|=", UpdateKind::Other),
                ("&=", UpdateKind::Other),
                ("^=", UpdateKind::Other),
            ];
            if after.starts_with("++") {
                write = Some((UpdateKind::Add, String::new(), true));
            } else if after.starts_with("--") {
                write = Some((UpdateKind::Sub, String::new(), true));
            } else if let Some((op, k)) = COMPOUND.iter().find(|(op, _)| after.starts_with(op)) {
                let rhs = statement_rest(&body, after_off + op.len());
                write = Some((*k, normalize_ws(rhs), true));
            } else if after.starts_with('=') && !after.starts_with("==") && !after.starts_with("=>") {
                let rhs = statement_rest(&body, after_off + 1);
                write = Some((update_kind_for_assign(&var.name, rhs), normalize_ws(rhs), false));
            } else if (after.starts_with(',') || after.starts_with(')'))
                && tuple_assignment_target(&body, ident.start) {
                    write = Some((UpdateKind::Assign, String::new(), false));
                }
        }
        match write {
            Some((kind, rhs, also_read)) => {
                facts.writes.insert(var.clone());
                if also_read {
                    facts.reads.insert(var.clone());
                }
                facts.updates.push(StateUpdate {
                    var: var.clone(),
                    kind,
                    line,
                    rhs,
                });
            }
            None => {
                facts.reads.insert(var.clone());
            }
        }
    }

    // Internal calls.
    for ident in lexer::identifiers(&body) {
        let Some((p, b'(')) = lexer::next_non_ws(bytes, ident.end) else { continue };
        let prev = lexer::prev_non_ws(bytes, ident.start);
        let via_super = prev.is_some_and(|(i, b)| b == b'.' && lexer::word_before(&body, i) == Some("super"));
        if prev.is_some_and(|(_, b)| b == b'.') && !via_super {
            continue;
        }
        if matches!(lexer::word_before(&body, ident.start), Some("emit" | "new" | "revert" | "function")) {
            continue;
        }
        let table = if via_super { scope.super_funcs } else { scope.funcs };
        if let Some(def) = table.get(ident.text) {
            let (args, _) = call_args(&body, p);
            facts.internal.push(InternalCall {
                callee: FnRef::new(def.clone(), ident.text),
                line: line_at(ident.start),
                args,
            });
        }
    }

    // Value flows.
    for m in FLOW_RE.captures_iter(&body) {
        let whole = m.get(0).unwrap();
        let method = &m[1];
        let (args, _) = call_args(&body, whole.end() - 1);
        let kind = match (method, args.len()) {
            ("transfer", 1) | ("send", _) => FlowKind::Native,
            ("transfer", 2) | ("transferFrom", 3) => FlowKind::Token,
            ("safeTransfer" | "safeTransferFrom", _) => FlowKind::Token,
            _ => continue,
        };
        facts.flows.push(ValueFlow {
            kind,
            method: method.to_string(),
            line: line_at(whole.start()),
            receiver: receiver_before(&body, whole.start()),
            args,
        });
    }
    for m in LOWLEVEL_RE.captures_iter(&body) {
        let whole = m.get(0).unwrap();
        let kind = &m[1];
        let mut with_value = false;
        let paren = if m.get(2).is_some() {
            let brace = whole.end() - 1;
            let Some(c) = lexer::matching(bytes, brace) else { continue };
            with_value = body[brace..c].contains("value");
            lexer::next_non_ws(bytes, c + 1).filter(|&(_, b)| b == b'(').map(|(p, _)| p)
        } else {
            lexer::next_non_ws(bytes, whole.end()).filter(|&(_, b)| b == b'(').map(|(p, _)| p)
        };
        if paren.is_none() {
            continue;
        }
        let receiver = receiver_before(&body, whole.start());
        let line = line_at(whole.start());
        facts.low_level.push(LowLevelCall {
            receiver: receiver.clone(),
            kind: kind.to_string(),
            line,
            with_value,
        });
        if with_value && kind == "call" {
            facts.flows.push(ValueFlow {
                kind: FlowKind::Native,
                method: "call".into(),
                line,
                receiver,
                args: Vec::new(),
            });
        }
    }
    for m in SENDVALUE_RE.captures_iter(&body) {
        let whole = m.get(0).unwrap();
        let (args, _) = call_args(&body, whole.end() - 1);
        facts.flows.push(ValueFlow {
            kind: FlowKind::Native,
            method: m[1].to_string(),
            line: line_at(whole.start()),
            receiver: String::new(),
            args,
        });
    }
    facts.flows.sort_by_key(|f| f.line);

    // Post-conditions.
    for m in RETURN_RE.find_iter(&body) {
        let rest = statement_rest(&body, m.end());
        let e = normalize_ws(rest);
        if !e.is_empty() {
            facts.posts.push(format!("return {e}"));
        }
    }
    for m in EMIT_RE.captures_iter(&body) {
        let whole = m.get(0).unwrap();
        let (args, _) = call_args(&body, whole.end() - 1);
        facts.posts.push(format!("emit {}({})", &m[1], args.join(", ")));
    }
    facts
}

fn word_is_storage_decl(body: &str, at: usize) -> bool {
    lexer::word_before(body, at) == Some("storage")
}

/// Is the identifier at `at` inside `(a, b) = ...` destructuring?
fn tuple_assignment_target(body: &str, at: usize) -> bool {
    let b = body.as_bytes();
    let mut depth = 0i64;
    let mut i = at;
    while i > 0 {
        i -= 1;
        match b[i] {
            b')' | b']' => depth += 1,
            b'(' | b'[' if depth > 0 => depth -= 1,
            b'(' => {
                let stmt_start = lexer::prev_non_ws(b, i).is_none_or(|(_, c)| matches!(c, b';' | b'{' | b'}'));
                if !stmt_start {
                    return false;
                }
                let Some(close) = lexer::matching(b, i) else { return false };
                return lexer::next_non_ws(b, close + 1)
                    .is_some_and(|(p, c)| c == b'=' && b.get(p + 1) != Some(&b'='));
            }
            b';' | b'{' | b'}' => return false,
            _ => {}
        }
    }
    false
}

/// Locals and storage aliases declared in a body.
fn scan_locals(body: &str, scope: &Scope<'_>) -> (HashSet<String>, HashMap<String, VarId>) {
    let mut locals = HashSet::new();
    let mut aliases = HashMap::new();
    for c in LOCAL_RE.captures_iter(body) {
        let name = c[3].to_string();
        if matches!(name.as_str(), "memory" | "storage" | "calldata" | "returns" | "is") {
            continue;
        }
        let loc = c.get(2).map(|m| m.as_str());
        if loc == Some("storage") && &c[4] == "=" {
            let rhs = &body[c.get(4).unwrap().end()..];
            if let Some(first) = lexer::identifiers(rhs).first() {
                if rhs[..first.start].trim().is_empty() {
                    if let Some((v, _)) = scope.var(first.text) {
                        aliases.insert(name.clone(), v.clone());
                        continue;
                    }
                }
            }
        }
        locals.insert(name);
    }
    (locals, aliases)
}

/// Parse `source` into contract summaries and function records for every
/// in-scope contract.
pub fn parse(source: &AuditSource) -> Parsed {
    let text = source.text.as_str();
    let masked = lexer::mask(text);
    let li = LineIndex::new(text);
    let mut diags = Vec::new();
    let mut raws = scan_contracts(&masked, text, &li, source, &mut diags);

    let mut non_callable: HashSet<String> = HashSet::new();
    for c in TOP_TYPE_RE.captures_iter(&masked) {
        if let Some(n) = c.get(2).or(c.get(3)) {
            non_callable.insert(n.as_str().to_string());
        }
    }
    for r in &raws {
        if r.info.kind == ContractKind::Library {
            non_callable.insert(r.info.name.clone());
        }
    }

    // Pass 1: items of every contract.
    let mut raw_fns: Vec<RawFunction> = Vec::new();
    let mut implemented: HashMap<String, Vec<String>> = HashMap::new();
    for rc in raws.iter_mut() {
        let mut impls = Vec::new();
        for (s, e) in contract_items(&masked, rc.body_open, rc.body_close) {
            let item = &masked[s..=e.min(masked.len() - 1)];
            let ids = lexer::identifiers(item);
            let Some(first) = ids.first() else { continue };
            let line = li.line_of(s);
            match first.text {
                "function" | "constructor" | "receive" | "fallback" | "modifier" => {
                    let (kind, name, name_end) = match first.text {
                        "function" => match ids.get(1) {
                            Some(n) if item[first.end..n.start].trim().is_empty() => {
                                (FunctionKind::Function, n.text.to_string(), n.end)
                            }
                            _ => (FunctionKind::Fallback, "fallback".to_string(), first.end),
                        },
                        "constructor" => (FunctionKind::Constructor, "constructor".into(), first.end),
                        "receive" => (FunctionKind::Receive, "receive".into(), first.end),
                        "fallback" => (FunctionKind::Fallback, "fallback".into(), first.end),
                        _ => match ids.get(1) {
                            Some(n) => (FunctionKind::Function, n.text.to_string(), n.end),
                            None => continue,
                        },
                    };
                    let is_modifier = first.text == "modifier";
                    let ib = item.as_bytes();
                    let params_open = match lexer::next_non_ws(ib, name_end) {
                        Some((p, b'(')) => Some(p),
                        _ => None,
                    };
                    let params_close = params_open.and_then(|p| lexer::matching(ib, p));
                    let body_open = item.rfind('{').and_then(|_| {
                        let from = params_close.map_or(name_end, |c| c + 1);
                        find_body_open(item, from)
                    });
                    if is_modifier {
                        let params = match (params_open, params_close) {
                            (Some(o), Some(c)) => parse_params(&item[o + 1..c]),
                            _ => Vec::new(),
                        };
                        let requires = match body_open.and_then(|o| lexer::matching(ib, o).map(|c| (o, c))) {
                            Some((o, c)) => scan_requires(&item[o + 1..c], s + o + 1, &li).all,
                            None => Vec::new(),
                        };
                        rc.info.modifiers.push(ModifierDef {
                            name,
                            line,
                            params: params.into_iter().map(|p| p.name).collect(),
                            requires,
                        });
                        continue;
                    }
                    if !rc.info.functions.contains(&name) {
                        rc.info.functions.push(name.clone());
                    }
                    let (Some(po), Some(pc), Some(bo)) = (params_open, params_close, body_open) else {
                        if params_close.is_none() {
                            let msg = format!("unparseable function header `{}.{}` at line {line}", rc.info.name, name);
                            warn!("{msg}");
                            diags.push(msg);
                        }
                        continue;
                    };
                    let Some(bc) = lexer::matching(ib, bo) else {
                        let msg = format!("unbalanced body in `{}.{}` at line {line}", rc.info.name, name);
                        warn!("{msg}");
                        diags.push(msg);
                        continue;
                    };
                    if !impls.contains(&name) {
                        impls.push(name.clone());
                    }
                    if rc.info.in_scope {
                        raw_fns.push(RawFunction {
                            owner: rc.info.name.clone(),
                            kind,
                            name,
                            item_start: s,
                            params_open: s + po,
                            params_close: s + pc,
                            body_open: s + bo,
                            body_close: s + bc,
                        });
                    }
                }
                "event" | "error" | "using" | "pragma" | "import" => {}
                "struct" | "enum" => {
                    if let Some(n) = ids.get(1) {
                        non_callable.insert(n.text.to_string());
                        if first.text == "struct" {
                            rc.info.structs.push(n.text.to_string());
                        } else {
                            rc.info.enums.push(n.text.to_string());
                        }
                    }
                }
                "type" => {
                    if let Some(n) = ids.get(1) {
                        non_callable.insert(n.text.to_string());
                    }
                }
                _ => {
                    if let Some(v) = parse_state_var(item, line) {
                        rc.info.state_vars.push(v);
                    } else {
                        let msg = format!("unrecognized item in `{}` at line {line}", rc.info.name);
                        diags.push(msg);
                    }
                }
            }
        }
        implemented.insert(rc.info.name.clone(), impls);
    }

    let contracts: Vec<ContractInfo> = raws.into_iter().map(|r| r.info).collect();
    let by_name: HashMap<&str, &ContractInfo> = contracts.iter().map(|c| (c.name.as_str(), c)).collect();
    let scope_set: HashSet<&str> = contracts.iter().filter(|c| c.in_scope).map(|c| c.name.as_str()).collect();

    // Pass 2: function bodies.
    let mut records: Vec<FunctionRecord> = Vec::new();
    let mut lin_cache: HashMap<String, Vec<String>> = HashMap::new();
    for rf in &raw_fns {
        let lin = lin_cache
            .entry(rf.owner.clone())
            .or_insert_with(|| linearize(&rf.owner, &by_name))
            .clone();
        let mut vars: Vec<(VarId, String)> = Vec::new();
        for c in &lin {
            if let Some(ci) = by_name.get(c.as_str()) {
                for v in &ci.state_vars {
                    if !vars.iter().any(|(x, _)| x.name == v.name) {
                        vars.push((VarId::new(&ci.name, &v.name), v.ty.clone()));
                    }
                }
            }
        }
        let mut funcs = HashMap::new();
        let mut super_funcs = HashMap::new();
        for (i, c) in lin.iter().enumerate() {
            if !scope_set.contains(c.as_str()) {
                continue;
            }
            for f in implemented.get(c).into_iter().flatten() {
                funcs.entry(f.clone()).or_insert_with(|| c.clone());
                if i > 0 {
                    super_funcs.entry(f.clone()).or_insert_with(|| c.clone());
                }
            }
        }
        let scope = Scope {
            vars: &vars,
            funcs: &funcs,
            super_funcs: &super_funcs,
            non_callable: &non_callable,
        };
        records.push(build_record(rf, text, &masked, &li, &scope, &by_name, &lin, &contracts));
    }

    // Fold overloads into one record per (owner, name).
    let mut merged: Vec<FunctionRecord> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in records {
        match index.get(&(r.owner.clone(), r.name.clone())) {
            Some(&i) => fold_overload(&mut merged[i], r),
            None => {
                index.insert((r.owner.clone(), r.name.clone()), merged.len());
                merged.push(r);
            }
        }
    }
    for r in &mut merged {
        r.internal_calls = r.internal_call_sites.iter().map(|c| c.callee.clone()).collect();
    }

    Parsed {
        contracts,
        records: merged,
        diagnostics: diags,
    }
}

fn fold_overload(into: &mut FunctionRecord, r: FunctionRecord) {
    into.other_spans.push(r.src);
    into.other_spans.extend(r.other_spans);
    for m in r.modifiers {
        if !into.modifiers.contains(&m) {
            into.modifiers.push(m);
        }
    }
    into.guards.extend(r.guards);
    into.requires.extend(r.requires);
    into.reads.extend(r.reads);
    into.writes.extend(r.writes);
    into.call_sites.extend(r.call_sites);
    into.internal_call_sites.extend(r.internal_call_sites);
    into.value_flows.extend(r.value_flows);
    into.fund_flag |= r.fund_flag;
    into.low_level_calls.extend(r.low_level_calls);
    into.updates.extend(r.updates);
    into.unchecked.extend(r.unchecked);
    into.assembly.extend(r.assembly);
    into.posts.extend(r.posts);
    into.body.push('\n');
    into.body.push_str(&r.body);
    if r.vis.is_entry() && !into.vis.is_entry() {
        into.vis = r.vis;
    }
    if r.mutability == Mutability::Payable || (!r.mutability.is_readonly() && into.mutability.is_readonly()) {
        into.mutability = r.mutability;
    }
}

/// The body `{` after a function header, skipping `returns (...)` and
/// modifier argument groups.
fn find_body_open(item: &str, from: usize) -> Option<usize> {
    let b = item.as_bytes();
    let mut i = from;
    while i < b.len() {
        match b[i] {
            b'(' | b'[' => i = lexer::matching(b, i)? + 1,
            b'{' => return Some(i),
            b';' => return None,
            _ => i += 1,
        }
    }
    None
}

/// The owner followed by its ancestors, most-derived first.
pub fn linearize(name: &str, by_name: &HashMap<&str, &ContractInfo>) -> Vec<String> {
    fn go(n: &str, by_name: &HashMap<&str, &ContractInfo>, out: &mut Vec<String>, depth: usize) {
        if out.iter().any(|x| x == n) || depth > 64 {
            return;
        }
        out.push(n.to_string());
        if let Some(c) = by_name.get(n) {
            for b in c.bases.iter().rev() {
                go(b, by_name, out, depth + 1);
            }
        }
    }
    let mut out = Vec::new();
    go(name, by_name, &mut out, 0);
    out
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    rf: &RawFunction,
    text: &str,
    masked: &str,
    li: &LineIndex,
    scope: &Scope<'_>,
    by_name: &HashMap<&str, &ContractInfo>,
    lin: &[String],
    contracts: &[ContractInfo],
) -> FunctionRecord {
    let header = &masked[rf.params_close + 1..rf.body_open];
    let params = parse_params(&masked[rf.params_open + 1..rf.params_close]);
    let owner_info = by_name.get(rf.owner.as_str());
    let bases: Vec<&str> = owner_info.map(|c| c.bases.iter().map(String::as_str).collect()).unwrap_or_default();

    let mut vis = match rf.kind {
        FunctionKind::Receive | FunctionKind::Fallback => Visibility::External,
        _ => Visibility::Public,
    };
    let mut mutability = Mutability::Nonpayable;
    let mut modifiers = Vec::new();
    let mut returns = String::new();
    let hb = header.as_bytes();
    let ids = lexer::identifiers(header);
    let mut skip_until = 0;
    for id in &ids {
        if id.start < skip_until {
            continue;
        }
        let next_paren = match lexer::next_non_ws(hb, id.end) {
            Some((p, b'(')) => lexer::matching(hb, p).map(|c| (p, c)),
            _ => None,
        };
        match id.text {
            "public" => vis = Visibility::Public,
            "external" => vis = Visibility::External,
            "internal" => vis = Visibility::Internal,
            "private" => vis = Visibility::Private,
            "view" => mutability = Mutability::View,
            "pure" => mutability = Mutability::Pure,
            "payable" => mutability = Mutability::Payable,
            "returns" => {
                if let Some((p, c)) = next_paren {
                    returns = normalize_ws(&header[p + 1..c]);
                    skip_until = c + 1;
                }
            }
            "override" => {
                if let Some((_, c)) = next_paren {
                    skip_until = c + 1;
                }
            }
            w if HEADER_KEYWORDS.contains(&w) => {}
            w => {
                let args = next_paren.map(|(p, c)| normalize_ws(&header[p + 1..c])).unwrap_or_default();
                if let Some((_, c)) = next_paren {
                    skip_until = c + 1;
                }
                if rf.kind == FunctionKind::Constructor && bases.contains(&w) {
                    continue;
                }
                modifiers.push(ModifierUse {
                    name: w.to_string(),
                    args,
                    line: li.line_of(rf.params_close + 1 + id.start),
                });
            }
        }
    }

    // Locals: params, named returns, body declarations.
    let body_masked = &masked[rf.body_open + 1..rf.body_close];
    let (mut locals, aliases) = scan_locals(body_masked, scope);
    for p in &params {
        if !p.name.is_empty() {
            locals.insert(p.name.clone());
        }
    }
    for p in parse_params(&returns) {
        if !p.name.is_empty() {
            locals.insert(p.name);
        }
    }
    let facts = scan_body(masked, rf.body_open, rf.body_close, li, scope, &locals, &aliases);
    let requires = scan_requires(body_masked, rf.body_open + 1, li).all;

    let mut guards: BTreeSet<Guard> = requires
        .iter()
        .filter(|g| g.kind == GuardKind::Check || is_access_expr(&g.expr))
        .cloned()
        .collect();
    for mu in &modifiers {
        let def = lin
            .iter()
            .filter_map(|c| by_name.get(c.as_str()))
            .find_map(|c| c.modifiers.iter().find(|m| m.name == mu.name))
            .or_else(|| contracts.iter().find_map(|c| c.modifiers.iter().find(|m| m.name == mu.name)));
        if let Some(def) = def {
            for g in &def.requires {
                if g.kind == GuardKind::Check || is_access_expr(&g.expr) {
                    guards.insert(g.clone());
                }
            }
        }
    }

    let start_line = li.line_of(rf.item_start);
    let end_line = li.line_of(rf.body_close);
    let sig_end = rf.body_open;
    FunctionRecord {
        name: rf.name.clone(),
        owner: rf.owner.clone(),
        kind: rf.kind,
        vis,
        mutability,
        modifiers,
        guards,
        requires,
        reads: facts.reads,
        writes: facts.writes,
        call_sites: facts.call_sites,
        internal_calls: BTreeSet::new(),
        internal_call_sites: facts.internal,
        fund_flag: !facts.flows.is_empty(),
        value_flows: facts.flows,
        low_level_calls: facts.low_level,
        updates: facts.updates,
        unchecked: facts.unchecked,
        assembly: facts.assembly,
        posts: facts.posts,
        params,
        returns,
        signature: normalize_ws(&masked[rf.item_start..sig_end]),
        natspec: natspec_above(text, li, rf.item_start),
        src: (start_line, end_line),
        other_spans: Vec::new(),
        body: text[rf.item_start..=rf.body_close].to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_one(src: &str) -> Parsed {
        parse(&AuditSource::single("T.sol", src))
    }

    fn rec<'a>(p: &'a Parsed, name: &str) -> &'a FunctionRecord {
        p.records.iter().find(|r| r.name == name).unwrap()
    }

    fn names(s: &BTreeSet<VarId>) -> Vec<&str> {
        s.iter().map(|v| v.name.as_str()).collect()
    }

    #[test]
    fn empty_source_has_no_records() {
        let p = parse_one("");
        assert!(p.records.is_empty() && p.contracts.is_empty());
    }

    #[test]
    fn set_owner_record() {
        let p = parse_one(
            "contract A {\n  address public owner;\n  modifier onlyOwner() { require(msg.sender == owner, \"no\"); _; }\n  function setOwner(address o) external onlyOwner { owner = o; }\n}\n",
        );
        let r = rec(&p, "setOwner");
        assert_eq!(r.vis, Visibility::External);
        assert_eq!(r.modifiers.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(), vec!["onlyOwner"]);
        assert_eq!(names(&r.writes), vec!["owner"]);
        assert!(r.reads.is_empty());
        assert!(!r.fund_flag);
        assert_eq!(r.src, (4, 4));
        assert!(r.guards.iter().any(|g| g.expr == "msg.sender == owner" && g.line == 3));
    }

    #[test]
    fn sweep_moves_funds_without_writes() {
        let p = parse_one(
            "contract A {\n  function sweep() external { payable(msg.sender).transfer(address(this).balance); }\n}\n",
        );
        let r = rec(&p, "sweep");
        assert!(r.fund_flag);
        assert!(r.writes.is_empty());
        assert_eq!(r.value_flows[0].kind, FlowKind::Native);
    }

    #[test]
    fn writes_reads_and_updates() {
        let src = "contract V {\n  mapping(address => uint256) public balances;\n  uint256 public total;\n  struct P { uint a; }\n  mapping(uint => P) ps;\n  function f(uint amount) external {\n    uint local = total;\n    balances[msg.sender] += amount;\n    total = total - amount;\n    P storage p = ps[1];\n    p.a = 3;\n    delete total;\n    local++;\n  }\n}\n";
        let p = parse_one(src);
        let r = rec(&p, "f");
        assert_eq!(names(&r.writes), vec!["balances", "ps", "total"]);
        assert_eq!(names(&r.reads), vec!["balances", "ps", "total"]);
        let kinds: Vec<_> = r.updates.iter().map(|u| (u.var.name.as_str(), u.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                ("balances", UpdateKind::Add),
                ("total", UpdateKind::Sub),
                ("ps", UpdateKind::Assign),
                ("total", UpdateKind::Delete)
            ]
        );
    }

    #[test]
    fn params_shadow_state() {
        let p = parse_one("contract V {\n uint x;\n function f(uint x) external { x = 1; }\n}\n");
        assert!(rec(&p, "f").writes.is_empty());
    }

    #[test]
    fn call_sites_and_casts() {
        let src = "interface IOracle { function latestPrice() external view returns (uint); }\ncontract V {\n  IOracle public oracle;\n  address public token;\n  function price() external view returns (uint) { return oracle.latestPrice(); }\n  function pay(address to, uint a) external { IERC20(token).transfer(to, a); }\n}\n";
        let p = parse_one(src);
        let price = rec(&p, "price");
        assert_eq!(price.call_sites.len(), 1);
        assert_eq!(price.call_sites[0].method, "latestPrice");
        assert_eq!(price.call_sites[0].line, 5);
        assert_eq!(price.posts, vec!["return oracle.latestPrice()"]);
        let pay = rec(&p, "pay");
        assert_eq!(pay.call_sites[0].cast.as_deref(), Some("IERC20"));
        assert!(pay.fund_flag);
        assert_eq!(pay.value_flows[0].kind, FlowKind::Token);
    }

    #[test]
    fn internal_calls_and_inheritance() {
        let src = "abstract contract B {\n  uint totalSupply;\n  function _burn(uint a) internal { totalSupply -= a; }\n}\ncontract V is B {\n  function withdraw(uint a) external { _burn(a); }\n}\n";
        let p = parse_one(src);
        let w = rec(&p, "withdraw");
        assert_eq!(w.internal_calls.iter().next(), Some(&FnRef::new("B", "_burn")));
        assert_eq!(p.contracts[1].bases, vec!["B"]);
    }

    #[test]
    fn if_revert_and_unchecked() {
        let src = "contract V {\n  address owner;\n  error No();\n  function f(uint a) external payable {\n    if (msg.sender != owner) revert No();\n    unchecked {\n      a = a + 1;\n    }\n  }\n}\n";
        let p = parse_one(src);
        let r = rec(&p, "f");
        assert_eq!(r.mutability, Mutability::Payable);
        assert!(r.guards.iter().any(|g| g.kind == GuardKind::IfRevert && g.line == 5));
        assert_eq!(r.unchecked, vec![(6, 8)]);
    }

    #[test]
    fn receive_and_constructor_base_args() {
        let src = "contract B { constructor(uint x) {} }\ncontract V is B {\n  constructor() B(1) {}\n  receive() external payable {}\n}\n";
        let p = parse_one(src);
        let c = p.records.iter().find(|r| r.owner == "V" && r.name == "constructor").unwrap();
        assert!(c.modifiers.is_empty());
        let r = p.records.iter().find(|r| r.name == "receive").unwrap();
        assert_eq!(r.kind, FunctionKind::Receive);
        assert_eq!(r.mutability, Mutability::Payable);
    }

    #[test]
    fn unbalanced_contract_recovers() {
        let src = "contract A {\n function f() external { \n}\ncontract B {\n uint x;\n function g() external { x = 1; }\n}\n";
        let p = parse_one(src);
        assert!(p.records.iter().any(|r| r.owner == "B" && r.name == "g"));
        assert!(!p.diagnostics.is_empty());
    }

    #[test]
    fn approvals_via_call_site_args() {
        let src = "contract V {\n  IERC20 token;\n  address spender;\n  function a(uint x) external { token.approve(spender, x); }\n}\n";
        let p = parse_one(src);
        let r = rec(&p, "a");
        assert_eq!(r.call_sites[0].args, vec!["spender", "x"]);
        assert!(!r.fund_flag);
        assert_eq!(names(&r.reads), vec!["spender", "token"]);
    }
}
