//! Identifiers and small value types shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Five-level severity ranking. Ordering is ascending urgency, so
/// `Severity::Critical > Severity::Info`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::Critical,
        Severity::High,
        Severity::Medium,
        Severity::Low,
        Severity::Info,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "INFO",
            Severity::Low => "LOW",
            Severity::Medium => "MEDIUM",
            Severity::High => "HIGH",
            Severity::Critical => "CRITICAL",
        }
    }

    /// Case-insensitive parse that also accepts common tool spellings
    /// ("informational", "warning", ...). Unknown strings yield `None`.
    pub fn parse_loose(s: &str) -> Option<Severity> {
        match s.trim().to_ascii_lowercase().as_str() {
            "critical" | "crit" => Some(Severity::Critical),
            "high" => Some(Severity::High),
            "medium" | "med" | "warning" => Some(Severity::Medium),
            "low" => Some(Severity::Low),
            "info" | "informational" | "optimization" | "note" => Some(Severity::Info),
            _ => None,
        }
    }

    /// One level less urgent, saturating at INFO.
    pub fn down_one(self) -> Severity {
        match self {
            Severity::Critical => Severity::High,
            Severity::High => Severity::Medium,
            Severity::Medium => Severity::Low,
            Severity::Low | Severity::Info => Severity::Info,
        }
    }

    /// One level more urgent, saturating at CRITICAL.
    pub fn up_one(self) -> Severity {
        match self {
            Severity::Info => Severity::Low,
            Severity::Low => Severity::Medium,
            Severity::Medium => Severity::High,
            Severity::High | Severity::Critical => Severity::Critical,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A function identity: owning contract plus function name.
///
/// Overloads share one `FnRef`; every analysis treats an overload set as a
/// single node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FnRef {
    pub owner: String,
    pub name: String,
}

impl FnRef {
    pub fn new(owner: impl Into<String>, name: impl Into<String>) -> Self {
        FnRef {
            owner: owner.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for FnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.owner, self.name)
    }
}

impl FromStr for FnRef {
    type Err = String;

    /// Accepts `Owner.name`; a bare `name` yields an empty owner.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let s = s.strip_suffix("()").unwrap_or(s);
        if s.is_empty() {
            return Err("empty function reference".into());
        }
        match s.rsplit_once('.') {
            Some((owner, name)) if !name.is_empty() => Ok(FnRef::new(owner, name)),
            Some(_) => Err(format!("malformed function reference `{s}`")),
            None => Ok(FnRef::new("", s)),
        }
    }
}

impl Serialize for FnRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FnRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Counter-operation name pairs (action, inverse).
pub const COUNTER_PAIRS: [(&str, &str); 6] = [
    ("deposit", "withdraw"),
    ("mint", "burn"),
    ("lock", "unlock"),
    ("stake", "unstake"),
    ("open", "close"),
    ("pause", "unpause"),
];

/// Are `a` and `b` a counter pair? Names match case-insensitively after
/// stripping leading underscores, with an identical suffix allowed
/// (`depositETH` / `withdrawETH`).
pub fn is_counter_pair(a: &str, b: &str) -> bool {
    let norm = |s: &str| s.trim_start_matches('_').to_ascii_lowercase();
    let (a, b) = (norm(a), norm(b));
    COUNTER_PAIRS.iter().any(|(x, y)| {
        let split = |n: &str, p: &str| n.strip_prefix(p).map(str::to_string);
        match (split(&a, x), split(&b, y)) {
            (Some(sa), Some(sb)) if sa == sb => true,
            _ => matches!((split(&b, x), split(&a, y)), (Some(sa), Some(sb)) if sa == sb),
        }
    })
}

/// A storage variable qualified by the contract that declares it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId {
    pub contract: String,
    pub name: String,
}

impl VarId {
    pub fn new(contract: impl Into<String>, name: impl Into<String>) -> Self {
        VarId {
            contract: contract.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.contract, self.name)
    }
}

impl FromStr for VarId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((c, n)) if !c.is_empty() && !n.is_empty() => Ok(VarId::new(c, n)),
            _ => Err(format!("malformed variable reference `{s}`")),
        }
    }
}

impl Serialize for VarId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VarId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source pipeline of a finding: dossier-driven (`D`) or interaction-driven (`I`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    D,
    I,
}

impl Pipeline {
    pub fn id_prefix(self) -> &'static str {
        match self {
            Pipeline::D => "D",
            Pipeline::I => "I",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id_prefix())
    }
}

/// Collapse runs of whitespace and drop spaces hugging brackets, so two
/// spellings of the same predicate compare equal.
pub fn normalize_ws(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::with_capacity(collapsed.len());
    let chars: Vec<char> = collapsed.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == ' ' {
            let prev = if i > 0 { chars[i - 1] } else { ' ' };
            let next = chars.get(i + 1).copied().unwrap_or(' ');
            if matches!(prev, '(' | '[') || matches!(next, ')' | ']' | ',') {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_order_and_steps() {
        assert!(Severity::Critical > Severity::High);
        assert!(Severity::Low > Severity::Info);
        assert_eq!(Severity::Info.down_one(), Severity::Info);
        assert_eq!(Severity::High.down_one(), Severity::Medium);
        assert_eq!(Severity::Critical.up_one(), Severity::Critical);
        assert_eq!(Severity::parse_loose(" High "), Some(Severity::High));
        assert_eq!(Severity::parse_loose("bogus"), None);
    }

    #[test]
    fn fnref_parse_and_display() {
        let f: FnRef = "Vault.withdraw".parse().unwrap();
        assert_eq!(f, FnRef::new("Vault", "withdraw"));
        assert_eq!(f.to_string(), "Vault.withdraw");
        let bare: FnRef = "withdraw()".parse().unwrap();
        assert_eq!(bare.owner, "");
        assert!("".parse::<FnRef>().is_err());
    }

    #[test]
    fn fnref_serializes_as_map_key() {
        let mut m = std::collections::BTreeMap::new();
        m.insert(FnRef::new("A", "f"), 1);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"A.f":1}"#);
        let back: std::collections::BTreeMap<FnRef, i32> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn counter_pairs_match_with_suffix() {
        assert!(is_counter_pair("deposit", "withdraw"));
        assert!(is_counter_pair("withdrawETH", "depositETH"));
        assert!(is_counter_pair("_lock", "unlock"));
        assert!(!is_counter_pair("mintTo", "burnFrom"));
        assert!(!is_counter_pair("deposit", "deposit"));
    }

    #[test]
    fn whitespace_normalization() {
        assert_eq!(
            normalize_ws("require( msg.sender  ==\n owner )"),
            "require(msg.sender == owner)"
        );
        assert_eq!(normalize_ws("f(a , b)"), "f(a, b)");
    }
}
