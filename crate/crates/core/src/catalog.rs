//! Data catalogues shipped as JSON config: attack vectors, impact keywords,
//! protocol features and coverage classes. Each can be replaced at run time.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::signals::Signal;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackVector {
    pub id: String,
    pub keywords: Vec<String>,
    /// Signal rule names; a trailing `*` matches by prefix.
    pub signal_rules: Vec<String>,
}

impl AttackVector {
    pub fn matches_rule(&self, rule: &str) -> bool {
        self.signal_rules.iter().any(|p| match p.strip_suffix('*') {
            Some(prefix) => rule.starts_with(prefix),
            None => rule == p,
        })
    }

    pub fn matches_text(&self, lower: &str) -> bool {
        self.keywords.iter().any(|k| lower.contains(k.as_str()))
    }

    pub fn matches_signal(&self, s: &Signal) -> bool {
        self.matches_rule(s.rule())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackVectors {
    pub version: u32,
    pub vectors: Vec<AttackVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactClassEntry {
    pub class: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactKeywords {
    pub version: u32,
    /// Checked in order; the first class with a keyword hit wins.
    pub classes: Vec<ImpactClassEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub name: String,
    /// Not among the categories named in the source material.
    #[serde(default)]
    pub extension: bool,
    /// Regexes over lowercased function names.
    pub name_patterns: Vec<String>,
    /// Regexes over modifier names.
    pub modifier_patterns: Vec<String>,
    /// Regexes over `type name` of state variables.
    pub type_patterns: Vec<String>,
    /// Coverage class ids.
    pub bug_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalogue {
    pub version: u32,
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageClass {
    pub id: String,
    pub name: String,
    /// Added to complete the seventeen-class map.
    #[serde(default)]
    pub completion: bool,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageClasses {
    pub version: u32,
    pub classes: Vec<CoverageClass>,
}

impl CoverageClasses {
    pub fn get(&self, id: &str) -> Option<&CoverageClass> {
        self.classes.iter().find(|c| c.id == id)
    }
}

fn parse<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> T {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("embedded catalogue {name} is malformed: {e}"))
}

pub static ATTACK_VECTORS: LazyLock<AttackVectors> =
    LazyLock::new(|| parse("attack_vectors.json", include_str!("../config/attack_vectors.json")));
pub static IMPACT_KEYWORDS: LazyLock<ImpactKeywords> =
    LazyLock::new(|| parse("impact_keywords.json", include_str!("../config/impact_keywords.json")));
pub static FEATURES: LazyLock<FeatureCatalogue> =
    LazyLock::new(|| parse("features.json", include_str!("../config/features.json")));
pub static COVERAGE_CLASSES: LazyLock<CoverageClasses> =
    LazyLock::new(|| parse("coverage_classes.json", include_str!("../config/coverage_classes.json")));

/// Compile patterns, logging and skipping invalid ones.
pub fn compile_all(patterns: &[String], case_insensitive: bool) -> Vec<Regex> {
    patterns
        .iter()
        .filter_map(|p| {
            let src = if case_insensitive { format!("(?i){p}") } else { p.clone() };
            Regex::new(&src)
                .map_err(|e| log::warn!("skipping invalid catalogue pattern `{p}`: {e}"))
                .ok()
        })
        .collect()
}
