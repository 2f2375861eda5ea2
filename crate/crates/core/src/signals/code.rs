//! Statement-level views of a function body shared by the detectors.

use std::collections::BTreeSet;

use crate::ccim::{CcimModel, FunctionRecord};
use crate::expr::{self, Expr};
use crate::lexer;
use crate::types::FnRef;

/// One statement or block header of a function body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub line: usize,
    /// Masked, whitespace-normalized text.
    pub text: String,
}

impl Stmt {
    /// `(lhs, rhs)` of a plain or compound assignment.
    pub fn assignment(&self) -> Option<(&str, &str)> {
        let b = self.text.as_bytes();
        let mut depth = 0i32;
        for (i, &c) in b.iter().enumerate() {
            match c {
                b'(' | b'[' => depth += 1,
                b')' | b']' => depth -= 1,
                b'=' if depth == 0 => {
                    let prev = i.checked_sub(1).map(|j| b[j]);
                    let next = b.get(i + 1).copied();
                    if matches!(next, Some(b'=') | Some(b'>')) || matches!(prev, Some(b'=') | Some(b'!') | Some(b'<') | Some(b'>')) {
                        continue;
                    }
                    let lhs_end = if matches!(prev, Some(b'+' | b'-' | b'*' | b'/' | b'%' | b'|' | b'&' | b'^')) {
                        i - 1
                    } else {
                        i
                    };
                    return Some((self.text[..lhs_end].trim(), self.text[i + 1..].trim()));
                }
                _ => {}
            }
        }
        None
    }

    /// Expressions carried by the statement: assignment right-hand side,
    /// returned value, or the statement itself when it is an expression.
    pub fn expressions(&self) -> Vec<Expr> {
        let t = self.text.as_str();
        let t = t.strip_prefix("else ").unwrap_or(t);
        if let Some((_, rhs)) = self.assignment() {
            return expr::parse_expr(rhs).into_iter().collect();
        }
        if let Some(rest) = t.strip_prefix("return ") {
            return expr::parse_expr(rest).into_iter().collect();
        }
        for kw in ["if", "while", "require", "assert"] {
            if let Some(rest) = t.strip_prefix(kw) {
                let rest = rest.trim_start();
                if rest.starts_with('(') {
                    if let Some(close) = lexer::matching(rest.as_bytes(), 0) {
                        let inner = &rest[1..close];
                        let cond = lexer::split_top_level(inner, b',');
                        return cond.first().and_then(|c| expr::parse_expr(c)).into_iter().collect();
                    }
                }
            }
        }
        expr::parse_expr(t).into_iter().collect()
    }
}

/// Split a function body into statements with their concatenation lines.
pub fn statements(r: &FunctionRecord) -> Vec<Stmt> {
    let masked = lexer::mask(&r.body);
    let b = masked.as_bytes();
    let Some(open) = masked.find('{') else { return Vec::new() };
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = open + 1;
    let line_at = |off: usize| r.src.0 + b[..off].iter().filter(|&&c| c == b'\n').count();
    let mut i = open + 1;
    while i < b.len() {
        match b[i] {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b'{' if depth > 0 || is_call_options(&masked[i + 1..]) => {
                // `call{value: x}(...)`
                if let Some(close) = lexer::matching(b, i) {
                    i = close;
                }
            }
            b';' | b'{' | b'}' if depth <= 0 => {
                let seg = &masked[start..i];
                if let Some(off) = seg.find(|c: char| !c.is_whitespace()) {
                    out.push(Stmt {
                        line: line_at(start + off),
                        text: crate::types::normalize_ws(seg),
                    });
                }
                start = i + 1;
                depth = 0;
            }
            _ => {}
        }
        i += 1;
    }
    out.retain(|s| !s.text.is_empty() && s.text != "unchecked" && s.text != "else" && s.text != "assembly");
    out
}

fn is_call_options(after: &str) -> bool {
    let t = after.trim_start();
    ["value", "gas", "salt"].iter().any(|k| {
        t.strip_prefix(k)
            .is_some_and(|rest| rest.trim_start().starts_with(':'))
    })
}

/// Maximal `*`/`/`-rooted subterms of `e`.
pub fn arith_terms(e: &Expr) -> Vec<&Expr> {
    let mut out = Vec::new();
    fn go<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
        match e {
            Expr::Bin(expr::BinOp::Mul | expr::BinOp::Div, ..) => out.push(e),
            Expr::Bin(_, a, b) => {
                go(a, out);
                go(b, out);
            }
            Expr::Unary(_, x) => go(x, out),
            Expr::Call(_, args) => args.iter().for_each(|a| go(a, out)),
            _ => {}
        }
    }
    go(e, &mut out);
    out
}

/// Body text lines `[from, to]` (concatenation lines) of a record.
pub fn body_lines(r: &FunctionRecord, from: usize, to: usize) -> String {
    r.body
        .lines()
        .enumerate()
        .filter(|(i, _)| {
            let l = r.src.0 + i;
            from <= l && l <= to
        })
        .map(|(_, t)| t)
        .collect::<Vec<_>>()
        .join("\n")
}

/// The record plus every internal callee reachable from it.
pub fn reachable<'a>(ccim: &'a CcimModel, r: &'a FunctionRecord) -> Vec<&'a FunctionRecord> {
    let mut seen: BTreeSet<FnRef> = BTreeSet::new();
    let mut stack = vec![r];
    let mut out = Vec::new();
    while let Some(cur) = stack.pop() {
        if !seen.insert(cur.fn_ref()) {
            continue;
        }
        out.push(cur);
        for c in &cur.internal_calls {
            if let Some(rc) = ccim.record(c) {
                stack.push(rc);
            }
        }
    }
    out
}

/// Names of the parameters of `r`.
pub fn param_names(r: &FunctionRecord) -> BTreeSet<&str> {
    r.params.iter().map(|p| p.name.as_str()).filter(|n| !n.is_empty()).collect()
}
