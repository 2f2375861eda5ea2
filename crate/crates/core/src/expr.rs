//! A small Pratt parser for Solidity arithmetic and comparison expressions,
//! with checked constant folding over `i128`.

use std::fmt;

use crate::lexer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    BitOr,
    BitXor,
    BitAnd,
    Shl,
    Shr,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Pow,
}

impl BinOp {
    fn info(tok: &str) -> Option<(BinOp, u8, bool)> {
        // (op, binding power, right-assoc)
        Some(match tok {
            "||" => (BinOp::Or, 1, false),
            "&&" => (BinOp::And, 2, false),
            "==" => (BinOp::Eq, 3, false),
            "!=" => (BinOp::Ne, 3, false),
            "<" => (BinOp::Lt, 4, false),
            "<=" => (BinOp::Le, 4, false),
            ">" => (BinOp::Gt, 4, false),
            ">=" => (BinOp::Ge, 4, false),
            "|" => (BinOp::BitOr, 5, false),
            "^" => (BinOp::BitXor, 6, false),
            "&" => (BinOp::BitAnd, 7, false),
            "<<" => (BinOp::Shl, 8, false),
            ">>" => (BinOp::Shr, 8, false),
            "+" => (BinOp::Add, 9, false),
            "-" => (BinOp::Sub, 9, false),
            "*" => (BinOp::Mul, 10, false),
            "/" => (BinOp::Div, 10, false),
            "%" => (BinOp::Mod, 10, false),
            "**" => (BinOp::Pow, 12, true),
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::BitAnd => "&",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Pow => "**",
        }
    }

    /// `!(a op b)` ⇔ `a negate(op) b`.
    pub fn negate(self) -> BinOp {
        match self {
            BinOp::Lt => BinOp::Ge,
            BinOp::Le => BinOp::Gt,
            BinOp::Gt => BinOp::Le,
            BinOp::Ge => BinOp::Lt,
            BinOp::Eq => BinOp::Ne,
            BinOp::Ne => BinOp::Eq,
            o => o,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }

    /// `a op b` ⇔ `b flip(op) a`.
    pub fn flip(self) -> BinOp {
        match self {
            BinOp::Lt => BinOp::Gt,
            BinOp::Le => BinOp::Ge,
            BinOp::Gt => BinOp::Lt,
            BinOp::Ge => BinOp::Le,
            o => o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
    BitNot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(i128),
    /// Identifier path such as `amount`, `msg.value` or `balances[user]`.
    Var(String),
    Unary(UnOp, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    /// A construct outside the supported subset, kept as text.
    Opaque(String),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) | Expr::Opaque(v) => f.write_str(v),
            Expr::Unary(op, e) => {
                let s = match op {
                    UnOp::Neg => "-",
                    UnOp::Not => "!",
                    UnOp::BitNot => "~",
                };
                write!(f, "{s}{e}")
            }
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(n, args) => {
                write!(f, "{n}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i128),
    BigNum,
    Ident(String),
    Op(String),
    Open(char),
    Close(char),
    Comma,
    Other(char),
}

fn unit_multiplier(word: &str) -> Option<i128> {
    Some(match word {
        "wei" | "seconds" => 1,
        "gwei" => 1_000_000_000,
        "ether" => 1_000_000_000_000_000_000,
        "minutes" => 60,
        "hours" => 3_600,
        "days" => 86_400,
        "weeks" => 604_800,
        _ => return None,
    })
}

fn parse_number(lit: &str) -> Option<i128> {
    let s: String = lit.chars().filter(|&c| c != '_').collect();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return i128::from_str_radix(hex, 16).ok();
    }
    if let Some((m, e)) = s.split_once(['e', 'E']) {
        let exp: u32 = e.parse().ok()?;
        let (int, frac) = m.split_once('.').unwrap_or((m, ""));
        let digits = format!("{int}{frac}");
        let shift = exp.checked_sub(frac.len() as u32)?;
        let base: i128 = digits.parse().ok()?;
        return base.checked_mul(10i128.checked_pow(shift)?);
    }
    s.parse().ok()
}

fn tokenize(s: &str) -> Vec<Tok> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'.') {
                // `1e18`, `0xff`, `1.5e18`
                i += 1;
            }
            match parse_number(&s[start..i]) {
                Some(n) => out.push(Tok::Num(n)),
                None => out.push(Tok::BigNum),
            }
        } else if lexer::is_ident_start(c) {
            let start = i;
            while i < b.len() && lexer::is_ident_char(b[i]) {
                i += 1;
            }
            let w = &s[start..i];
            if let (Some(m), Some(Tok::Num(n))) = (unit_multiplier(w), out.last().cloned()) {
                out.pop();
                out.push(n.checked_mul(m).map_or(Tok::BigNum, Tok::Num));
            } else {
                out.push(Tok::Ident(w.to_string()));
            }
        } else {
            let three = s.get(i..i + 3).unwrap_or("");
            let two = s.get(i..i + 2).unwrap_or("");
            if matches!(three, "<<=" | ">>=") {
                out.push(Tok::Other('='));
                i += 3;
            } else if matches!(two, "||" | "&&" | "==" | "!=" | "<=" | ">=" | "<<" | ">>" | "**") {
                out.push(Tok::Op(two.to_string()));
                i += 2;
            } else {
                match c {
                    b'(' | b'[' => out.push(Tok::Open(c as char)),
                    b')' | b']' => out.push(Tok::Close(c as char)),
                    b',' => out.push(Tok::Comma),
                    b'+' | b'-' | b'*' | b'/' | b'%' | b'<' | b'>' | b'|' | b'^' | b'&' | b'!' | b'~' => {
                        out.push(Tok::Op((c as char).to_string()))
                    }
                    _ => out.push(Tok::Other(c as char)),
                }
                i += 1;
            }
        }
    }
    out
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self, min_bp: u8) -> Option<Expr> {
        let mut lhs = self.prefix()?;
        loop {
            let Some(Tok::Op(op)) = self.peek().cloned() else { break };
            let Some((bin, bp, right)) = BinOp::info(&op) else { break };
            if bp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(if right { bp } else { bp + 1 })?;
            lhs = Expr::Bin(bin, Box::new(lhs), Box::new(rhs));
        }
        Some(lhs)
    }

    fn prefix(&mut self) -> Option<Expr> {
        match self.next()? {
            Tok::Num(n) => Some(Expr::Num(n)),
            Tok::BigNum => Some(Expr::Opaque("<big>".into())),
            Tok::Op(op) if op == "-" => Some(Expr::Unary(UnOp::Neg, Box::new(self.expr(11)?))),
            Tok::Op(op) if op == "!" => Some(Expr::Unary(UnOp::Not, Box::new(self.expr(11)?))),
            Tok::Op(op) if op == "~" => Some(Expr::Unary(UnOp::BitNot, Box::new(self.expr(11)?))),
            Tok::Open('(') => {
                let e = self.expr(0)?;
                match self.next()? {
                    Tok::Close(')') => self.postfix(e),
                    _ => None,
                }
            }
            Tok::Ident(name) => {
                let mut path = name;
                loop {
                    match self.peek() {
                        Some(Tok::Other('.')) => {
                            self.pos += 1;
                            match self.next()? {
                                Tok::Ident(m) => {
                                    path.push('.');
                                    path.push_str(&m);
                                }
                                _ => return None,
                            }
                        }
                        Some(Tok::Open('[')) => {
                            self.pos += 1;
                            let idx = self.expr(0)?;
                            if self.next()? != Tok::Close(']') {
                                return None;
                            }
                            path = format!("{path}[{idx}]");
                        }
                        Some(Tok::Open('(')) => {
                            self.pos += 1;
                            let mut args = Vec::new();
                            if self.peek() == Some(&Tok::Close(')')) {
                                self.pos += 1;
                            } else {
                                loop {
                                    args.push(self.expr(0)?);
                                    match self.next()? {
                                        Tok::Comma => continue,
                                        Tok::Close(')') => break,
                                        _ => return None,
                                    }
                                }
                            }
                            return self.postfix(Expr::Call(path, args));
                        }
                        _ => break,
                    }
                }
                Some(Expr::Var(path))
            }
            _ => None,
        }
    }

    /// Member/index access after a call or parenthesized expression.
    fn postfix(&mut self, e: Expr) -> Option<Expr> {
        let mut text = None;
        loop {
            match self.peek() {
                Some(Tok::Other('.')) => {
                    self.pos += 1;
                    let Tok::Ident(m) = self.next()? else { return None };
                    let base = text.take().unwrap_or_else(|| e.to_string());
                    text = Some(format!("{base}.{m}"));
                }
                Some(Tok::Open('[')) => {
                    self.pos += 1;
                    let idx = self.expr(0)?;
                    if self.next()? != Tok::Close(']') {
                        return None;
                    }
                    let base = text.take().unwrap_or_else(|| e.to_string());
                    text = Some(format!("{base}[{idx}]"));
                }
                Some(Tok::Open('(')) if text.is_some() => {
                    self.pos += 1;
                    let mut depth = 1;
                    while depth > 0 {
                        match self.next()? {
                            Tok::Open(_) => depth += 1,
                            Tok::Close(_) => depth -= 1,
                            _ => {}
                        }
                    }
                    let t = text.take().unwrap();
                    text = Some(format!("{t}(..)"));
                }
                _ => break,
            }
        }
        Some(match text {
            Some(t) => Expr::Var(t),
            None => e,
        })
    }
}

/// Parse one expression; `None` when the text is outside the subset.
pub fn parse_expr(s: &str) -> Option<Expr> {
    let toks = tokenize(s);
    if toks.is_empty() || toks.iter().any(|t| matches!(t, Tok::Other(c) if *c != '.')) {
        return None;
    }
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr(0)?;
    (p.pos == p.toks.len()).then_some(e)
}

/// Checked constant folding. Comparisons fold to 0/1.
pub fn eval(e: &Expr) -> Option<i128> {
    match e {
        Expr::Num(n) => Some(*n),
        Expr::Unary(UnOp::Neg, x) => eval(x)?.checked_neg(),
        Expr::Unary(UnOp::Not, x) => Some((eval(x)? == 0) as i128),
        Expr::Unary(UnOp::BitNot, x) => Some(!eval(x)?),
        Expr::Bin(op, a, b) => {
            let (x, y) = (eval(a)?, eval(b)?);
            match op {
                BinOp::Add => x.checked_add(y),
                BinOp::Sub => x.checked_sub(y),
                BinOp::Mul => x.checked_mul(y),
                BinOp::Div => x.checked_div(y),
                BinOp::Mod => x.checked_rem(y),
                BinOp::Pow => x.checked_pow(u32::try_from(y).ok()?),
                BinOp::Shl => x.checked_shl(u32::try_from(y).ok()?),
                BinOp::Shr => x.checked_shr(u32::try_from(y).ok()?),
                BinOp::BitAnd => Some(x & y),
                BinOp::BitOr => Some(x | y),
                BinOp::BitXor => Some(x ^ y),
                BinOp::Lt => Some((x < y) as i128),
                BinOp::Le => Some((x <= y) as i128),
                BinOp::Gt => Some((x > y) as i128),
                BinOp::Ge => Some((x >= y) as i128),
                BinOp::Eq => Some((x == y) as i128),
                BinOp::Ne => Some((x != y) as i128),
                BinOp::And => Some((x != 0 && y != 0) as i128),
                BinOp::Or => Some((x != 0 || y != 0) as i128),
            }
        }
        _ => None,
    }
}

/// Split a condition into its `&&` conjuncts.
pub fn conjuncts(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Bin(BinOp::And, a, b) => {
            let mut v = conjuncts(a);
            v.extend(conjuncts(b));
            v
        }
        other => vec![other],
    }
}

/// A comparison `subject op bound` with the subject on the left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub subject: String,
    pub op: BinOp,
    pub bound: Expr,
}

impl Comparison {
    pub fn literal_bound(&self) -> Option<i128> {
        eval(&self.bound)
    }
}

/// Normalize a comparison so that the non-constant side is the subject.
/// A negated comparison `!(a < b)` is read as `a >= b`.
pub fn comparison(e: &Expr) -> Option<Comparison> {
    if let Expr::Unary(UnOp::Not, inner) = e {
        if let Expr::Bin(op, a, b) = &**inner {
            if op.is_comparison() {
                return comparison(&Expr::Bin(op.negate(), a.clone(), b.clone()));
            }
        }
        return None;
    }
    let Expr::Bin(op, a, b) = e else { return None };
    if !op.is_comparison() {
        return None;
    }
    let subject_of = |x: &Expr| match x {
        Expr::Var(v) => Some(v.clone()),
        Expr::Call(..) => Some(x.to_string()),
        _ => None,
    };
    match (eval(a), eval(b)) {
        (None, Some(_)) => Some(Comparison {
            subject: subject_of(a)?,
            op: *op,
            bound: (**b).clone(),
        }),
        (Some(_), None) => Some(Comparison {
            subject: subject_of(b)?,
            op: op.flip(),
            bound: (**a).clone(),
        }),
        (None, None) => {
            // Prefer a plain variable subject; the other side is the bound.
            if let Some(s) = subject_of(a) {
                Some(Comparison {
                    subject: s,
                    op: *op,
                    bound: (**b).clone(),
                })
            } else {
                Some(Comparison {
                    subject: subject_of(b)?,
                    op: op.flip(),
                    bound: (**a).clone(),
                })
            }
        }
        _ => None,
    }
}

/// Integer interval `[lo, hi]` implied by a set of literal comparisons on
/// one subject, or `None` when the constraints are unsatisfiable.
pub fn interval(cmps: &[&Comparison]) -> Option<(i128, i128)> {
    let (mut lo, mut hi) = (i128::MIN, i128::MAX);
    for c in cmps {
        let Some(k) = c.literal_bound() else { continue };
        match c.op {
            BinOp::Gt => lo = lo.max(k.saturating_add(1)),
            BinOp::Ge => lo = lo.max(k),
            BinOp::Lt => hi = hi.min(k.saturating_sub(1)),
            BinOp::Le => hi = hi.min(k),
            BinOp::Eq => {
                lo = lo.max(k);
                hi = hi.min(k);
            }
            _ => {}
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Is there a `(x / y) * z` subterm?
pub fn has_div_before_mul(e: &Expr) -> bool {
    match e {
        Expr::Bin(BinOp::Mul, a, b) => {
            matches!(**a, Expr::Bin(BinOp::Div, ..)) || has_div_before_mul(a) || has_div_before_mul(b)
        }
        Expr::Bin(_, a, b) => has_div_before_mul(a) || has_div_before_mul(b),
        Expr::Unary(_, x) => has_div_before_mul(x),
        Expr::Call(_, args) => args.iter().any(has_div_before_mul),
        _ => false,
    }
}

/// Multiplicative operators in evaluation (post-) order.
pub fn muldiv_sequence(e: &Expr) -> Vec<BinOp> {
    let mut out = Vec::new();
    fn go(e: &Expr, out: &mut Vec<BinOp>) {
        match e {
            Expr::Bin(op, a, b) => {
                go(a, out);
                go(b, out);
                if matches!(op, BinOp::Mul | BinOp::Div) {
                    out.push(*op);
                }
            }
            Expr::Unary(_, x) => go(x, out),
            _ => {}
        }
    }
    go(e, &mut out);
    out
}

/// Leaf factors with their role: `true` for numerator, `false` for
/// denominator. Only leaves joined by `*` and `/` are reported.
pub fn factor_roles(e: &Expr) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    fn go(e: &Expr, num: bool, out: &mut Vec<(String, bool)>) {
        match e {
            Expr::Bin(BinOp::Mul, a, b) => {
                go(a, num, out);
                go(b, num, out);
            }
            Expr::Bin(BinOp::Div, a, b) => {
                go(a, num, out);
                go(b, !num, out);
            }
            Expr::Var(v) => out.push((v.clone(), num)),
            Expr::Call(..) => out.push((e.to_string(), num)),
            _ => {}
        }
    }
    go(e, true, &mut out);
    out
}

/// Literal `x / y` subterms: `(x, y)` pairs for constant-folded divisors.
pub fn literal_divisions(e: &Expr) -> Vec<(Option<i128>, i128)> {
    let mut out = Vec::new();
    fn go(e: &Expr, out: &mut Vec<(Option<i128>, i128)>) {
        match e {
            Expr::Bin(op, a, b) => {
                if *op == BinOp::Div {
                    if let Some(y) = eval(b) {
                        out.push((eval(a), y));
                    }
                }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_folding() {
        let e = parse_expr("1 + 2 * 3 ** 2").unwrap();
        assert_eq!(eval(&e), Some(19));
        assert_eq!(eval(&parse_expr("1e18 / 1 ether").unwrap()), Some(1));
        assert_eq!(eval(&parse_expr("2 days").unwrap()), Some(172_800));
        assert_eq!(eval(&parse_expr("10 / 0").unwrap()), None);
        assert_eq!(eval(&parse_expr("(5 - 7) * 3").unwrap()), Some(-6));
    }

    #[test]
    fn paths_calls_and_members() {
        let e = parse_expr("balances[msg.sender] >= amount").unwrap();
        let c = comparison(&e).unwrap();
        assert_eq!(c.subject, "balances[msg.sender]");
        assert_eq!(c.op, BinOp::Ge);
        let e = parse_expr("oracle.price() * amount / 1e18").unwrap();
        assert_eq!(muldiv_sequence(&e), vec![BinOp::Mul, BinOp::Div]);
        let e = parse_expr("address(this).balance > 0").unwrap();
        assert_eq!(comparison(&e).unwrap().subject, "address(this).balance");
    }

    #[test]
    fn constant_on_left_flips() {
        let c = comparison(&parse_expr("100 < x").unwrap()).unwrap();
        assert_eq!((c.subject.as_str(), c.op, c.literal_bound()), ("x", BinOp::Gt, Some(100)));
        let c = comparison(&parse_expr("!(x < 5)").unwrap()).unwrap();
        assert_eq!((c.op, c.literal_bound()), (BinOp::Ge, Some(5)));
    }

    #[test]
    fn intervals() {
        let a = comparison(&parse_expr("x > 10").unwrap()).unwrap();
        let b = comparison(&parse_expr("x < 5").unwrap()).unwrap();
        assert_eq!(interval(&[&a, &b]), None);
        let c = comparison(&parse_expr("x <= 20").unwrap()).unwrap();
        assert_eq!(interval(&[&a, &c]), Some((11, 20)));
    }

    #[test]
    fn div_before_mul_and_roles() {
        assert!(has_div_before_mul(&parse_expr("a / b * c").unwrap()));
        assert!(!has_div_before_mul(&parse_expr("a * c / b").unwrap()));
        let roles = factor_roles(&parse_expr("amount / price * 1e18").unwrap());
        assert_eq!(roles, vec![("amount".into(), true), ("price".into(), false)]);
    }

    #[test]
    fn literal_division_scan() {
        let d = literal_divisions(&parse_expr("x + 1 / 3").unwrap());
        assert_eq!(d, vec![(Some(1), 3)]);
        assert!(parse_expr("a ? b : c").is_none());
    }
}
