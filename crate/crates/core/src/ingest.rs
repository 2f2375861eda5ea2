//! Repository ingestion: file-role classification, remapping resolution and
//! construction of the concatenated, line-attributable audit source.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::lexer;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read input `{path}`: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scope override names unknown contracts: {}", .0.join(", "))]
    UnknownScope(Vec<String>),
    #[error("line {line} outside concatenated source of {total} lines")]
    LineOutOfRange { line: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileRole {
    Source,
    Test,
    Script,
    Interface,
    Library,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    /// Relative path with `/` separators.
    pub path: String,
    pub role: FileRole,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

/// Result of walking a repository: every `.sol` file is either classified or
/// listed as skipped.
#[derive(Debug, Clone, Default)]
pub struct Classification {
    pub files: Vec<SourceFile>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub path: String,
    /// First concatenation line owned by this file (1-based, inclusive).
    pub start: usize,
    /// Last concatenation line owned by this file (inclusive).
    pub end: usize,
    /// Original line number corresponding to `start`.
    pub orig_start: usize,
}

/// Maps concatenation lines back to (file, original line).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetMap {
    pub segments: Vec<Segment>,
}

impl OffsetMap {
    pub fn total_lines(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Concatenation line → (file path, original line).
    pub fn map_line(&self, line: usize) -> Result<(&str, usize), IngestError> {
        let total = self.total_lines();
        if line == 0 || line > total {
            return Err(IngestError::LineOutOfRange { line, total });
        }
        let idx = self.segments.partition_point(|s| s.end < line);
        let seg = &self.segments[idx];
        Ok((seg.path.as_str(), seg.orig_start + (line - seg.start)))
    }

    /// Inverse lookup: (file path, original line) → concatenation line.
    /// Paths match exactly or by suffix (tools often report absolute paths).
    pub fn to_concat(&self, path: &str, orig_line: usize) -> Option<usize> {
        let norm = path.replace('\\', "/");
        self.segments
            .iter()
            .filter(|s| s.path == norm || norm.ends_with(&format!("/{}", s.path)))
            .find_map(|s| {
                let off = orig_line.checked_sub(s.orig_start)?;
                let line = s.start + off;
                (line <= s.end).then_some(line)
            })
    }

    pub fn file_of(&self, line: usize) -> Option<&str> {
        self.map_line(line).ok().map(|(p, _)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Remapping {
    pub prefix: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub path: String,
    pub role: FileRole,
    /// Raw `pragma solidity` constraint, when present.
    pub pragma: Option<String>,
}

/// The concatenated in-scope source with line provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSource {
    pub text: String,
    pub offsets: OffsetMap,
    /// In-scope contract names, in concatenation order.
    pub scope: Vec<String>,
    pub remappings: Vec<Remapping>,
    pub files: Vec<FileMeta>,
}

impl AuditSource {
    /// Build a source from a single in-memory file with everything in scope.
    pub fn single(path: &str, text: &str) -> Self {
        let file = SourceFile {
            path: path.to_string(),
            role: FileRole::Source,
            text: text.to_string(),
        };
        build_audit_source(&[file], None).expect("no scope override cannot fail")
    }

    pub fn line_count(&self) -> usize {
        self.offsets.total_lines()
    }

    /// Text of a concatenation line (without newline).
    pub fn line_text(&self, line: usize) -> Option<&str> {
        self.text.lines().nth(line.checked_sub(1)?)
    }

    pub fn pragma_of_file(&self, path: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.path == path)
            .and_then(|f| f.pragma.as_deref())
    }
}

static DECL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(abstract\s+contract|contract|interface|library)\s+([A-Za-z_$][A-Za-z0-9_$]*)")
        .unwrap()
});
static PRAGMA_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bpragma\s+solidity\s+([^;]+);").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeclKind {
    Contract,
    Abstract,
    Interface,
    Library,
}

fn declarations(text: &str) -> Vec<(DeclKind, String)> {
    let masked = lexer::mask(text);
    DECL_RE
        .captures_iter(&masked)
        .map(|c| {
            let kw = c.get(1).unwrap().as_str();
            let kind = if kw.starts_with("abstract") {
                DeclKind::Abstract
            } else {
                match kw {
                    "contract" => DeclKind::Contract,
                    "interface" => DeclKind::Interface,
                    _ => DeclKind::Library,
                }
            };
            (kind, c[2].to_string())
        })
        .collect()
}

/// Pragma constraint string of a file, e.g. `^0.8.20`.
pub fn pragma_of(text: &str) -> Option<String> {
    let masked = lexer::mask(text);
    PRAGMA_RE
        .captures(&masked)
        .map(|c| c[1].split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Does a pragma constraint guarantee compiler version >= 0.8.0?
///
/// The lower bound is the largest version named by `^`, `~`, `>=`, `>`, `=`
/// or a bare version. Constraints with only upper bounds guarantee nothing.
pub fn pragma_at_least_0_8(pragma: &str) -> bool {
    static VER_RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(\^|~|>=|<=|>|<|=)?\s*(\d+)\.(\d+)(?:\.(\d+))?").unwrap());
    let mut lower: Option<(u64, u64)> = None;
    for c in VER_RE.captures_iter(pragma) {
        let op = c.get(1).map_or("", |m| m.as_str());
        if op == "<" || op == "<=" {
            continue;
        }
        let major: u64 = c[2].parse().unwrap_or(0);
        let minor: u64 = c[3].parse().unwrap_or(0);
        let v = (major, minor);
        lower = Some(lower.map_or(v, |l| l.max(v)));
    }
    lower.is_some_and(|v| v >= (0, 8))
}

fn path_role(rel: &str) -> Option<FileRole> {
    let lower = rel.to_ascii_lowercase();
    let parts: Vec<&str> = lower.split('/').collect();
    let dirs = &parts[..parts.len().saturating_sub(1)];
    let file = parts.last().copied().unwrap_or("");
    let has = |names: &[&str]| dirs.iter().any(|d| names.contains(d));
    if has(&["test", "tests", "mocks", "mock"]) || file.ends_with(".t.sol") {
        Some(FileRole::Test)
    } else if has(&["script", "scripts"]) || file.ends_with(".s.sol") {
        Some(FileRole::Script)
    } else if has(&["lib", "node_modules"]) {
        Some(FileRole::Library)
    } else {
        None
    }
}

/// Role from path first, then from declaration content.
pub fn classify(rel: &str, text: &str) -> FileRole {
    if let Some(role) = path_role(rel) {
        return role;
    }
    let decls = declarations(text);
    if !decls.is_empty() && decls.iter().all(|(k, _)| *k == DeclKind::Interface) {
        FileRole::Interface
    } else if !decls.is_empty() && decls.iter().all(|(k, _)| *k == DeclKind::Library) {
        FileRole::Library
    } else {
        FileRole::Source
    }
}

fn rel_path(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let s = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/");
    if s.is_empty() {
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        s
    }
}

/// Walk `root` (a directory or a single `.sol` file) and classify every
/// Solidity file. Non-UTF-8 or unreadable files are skipped with a reason.
pub fn classify_files(root: &Path) -> Result<Classification, IngestError> {
    let meta = fs::metadata(root).map_err(|source| IngestError::Unreadable {
        path: root.to_path_buf(),
        source,
    })?;
    let base = if meta.is_file() {
        root.parent().unwrap_or(Path::new("")).to_path_buf()
    } else {
        fs::read_dir(root).map_err(|source| IngestError::Unreadable {
            path: root.to_path_buf(),
            source,
        })?;
        root.to_path_buf()
    };

    let mut out = Classification::default();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e
                    .path()
                    .map(|p| rel_path(&base, p))
                    .unwrap_or_else(|| "<unknown>".into());
                warn!("skipping {path}: {e}");
                out.skipped.push(SkippedFile {
                    path,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if !entry.file_type().is_file()
            || entry.path().extension().and_then(|e| e.to_str()) != Some("sol")
        {
            continue;
        }
        let rel = rel_path(&base, entry.path());
        let bytes = match fs::read(entry.path()) {
            Ok(b) => b,
            Err(e) => {
                warn!("skipping {rel}: {e}");
                out.skipped.push(SkippedFile {
                    path: rel,
                    reason: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        match String::from_utf8(bytes) {
            Ok(text) => {
                let role = classify(&rel, &text);
                out.files.push(SourceFile {
                    path: rel,
                    role,
                    text,
                });
            }
            Err(_) => {
                warn!("skipping {rel}: not valid UTF-8");
                out.skipped.push(SkippedFile {
                    path: rel,
                    reason: "not valid UTF-8".into(),
                });
            }
        }
    }
    out.files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn parse_remapping(line: &str) -> Option<Remapping> {
    let line = line.trim();
    // Optional `context:` prefix is dropped.
    let body = match line.split_once(':') {
        Some((ctx, rest)) if !ctx.contains('=') => rest,
        _ => line,
    };
    let (prefix, replacement) = body.split_once('=')?;
    let (prefix, replacement) = (prefix.trim(), replacement.trim());
    if prefix.is_empty() || replacement.is_empty() || replacement.contains('=') {
        return None;
    }
    Some(Remapping {
        prefix: prefix.to_string(),
        replacement: replacement.to_string(),
    })
}

/// Parse `remappings.txt` and the `remappings` arrays of `foundry.toml`.
/// Entries from `remappings.txt` win on duplicate prefixes.
pub fn resolve_remappings(root: &Path) -> Vec<Remapping> {
    let mut out: Vec<Remapping> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |r: Remapping, out: &mut Vec<Remapping>| {
        if seen.insert(r.prefix.clone()) {
            out.push(r);
        }
    };

    if let Ok(text) = fs::read_to_string(root.join("remappings.txt")) {
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match parse_remapping(trimmed) {
                Some(r) => push(r, &mut out),
                None => warn!("remappings.txt: skipping malformed line `{trimmed}`"),
            }
        }
    }

    if let Ok(text) = fs::read_to_string(root.join("foundry.toml")) {
        match text.parse::<toml::Table>() {
            Ok(table) => {
                let mut entries = Vec::new();
                collect_toml_remappings(&toml::Value::Table(table), &mut entries);
                for e in entries {
                    match parse_remapping(&e) {
                        Some(r) => push(r, &mut out),
                        None => warn!("foundry.toml: skipping malformed remapping `{e}`"),
                    }
                }
            }
            Err(e) => warn!("foundry.toml: unparseable ({e}); remappings ignored"),
        }
    }
    out
}

fn collect_toml_remappings(v: &toml::Value, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = v {
        for (k, val) in t {
            if k == "remappings" {
                if let toml::Value::Array(items) = val {
                    out.extend(items.iter().filter_map(|i| i.as_str().map(str::to_string)));
                }
            } else {
                collect_toml_remappings(val, out);
            }
        }
    }
}

/// Concatenate source, interface and library files (tests and scripts are
/// excluded) in lexicographic path order and compute the scope.
pub fn build_audit_source(
    files: &[SourceFile],
    scope_override: Option<&[String]>,
) -> Result<AuditSource, IngestError> {
    let mut included: Vec<&SourceFile> = files
        .iter()
        .filter(|f| !matches!(f.role, FileRole::Test | FileRole::Script))
        .collect();
    included.sort_by(|a, b| a.path.cmp(&b.path));

    let mut text = String::new();
    let mut segments = Vec::new();
    let mut metas = Vec::new();
    let mut default_scope = Vec::new();
    let mut declared_contracts = BTreeSet::new();
    let mut line = 1;

    for f in included {
        let n = f.text.lines().count();
        if n > 0 {
            for l in f.text.lines() {
                text.push_str(l);
                text.push('\n');
            }
            segments.push(Segment {
                path: f.path.clone(),
                start: line,
                end: line + n - 1,
                orig_start: 1,
            });
            line += n;
        }
        metas.push(FileMeta {
            path: f.path.clone(),
            role: f.role,
            pragma: pragma_of(&f.text),
        });
        for (kind, name) in declarations(&f.text) {
            if matches!(kind, DeclKind::Contract | DeclKind::Abstract) {
                declared_contracts.insert(name.clone());
                if f.role == FileRole::Source && !default_scope.contains(&name) {
                    default_scope.push(name);
                }
            }
        }
    }

    let scope = match scope_override {
        Some(names) => {
            let unknown: Vec<String> = names
                .iter()
                .filter(|n| !declared_contracts.contains(n.as_str()))
                .cloned()
                .collect();
            if !unknown.is_empty() {
                return Err(IngestError::UnknownScope(unknown));
            }
            let wanted: BTreeSet<&str> = names.iter().map(String::as_str).collect();
            // Keep concatenation order; names only in library files come last.
            let mut scope: Vec<String> = default_scope
                .iter()
                .filter(|n| wanted.contains(n.as_str()))
                .cloned()
                .collect();
            for n in names {
                if !scope.contains(n) {
                    scope.push(n.clone());
                }
            }
            scope
        }
        None => default_scope,
    };

    Ok(AuditSource {
        text,
        offsets: OffsetMap { segments },
        scope,
        remappings: Vec::new(),
        files: metas,
    })
}

/// Full ingestion of a directory or single file.
pub fn ingest(root: &Path, scope_override: Option<&[String]>) -> Result<(AuditSource, Classification), IngestError> {
    let classification = classify_files(root)?;
    let mut source = build_audit_source(&classification.files, scope_override)?;
    let remap_root = if root.is_file() {
        root.parent().unwrap_or(Path::new("."))
    } else {
        root
    };
    source.remappings = resolve_remappings(remap_root);
    Ok((source, classification))
}

/// Count of files per role, for run summaries.
pub fn role_histogram(files: &[SourceFile]) -> BTreeMap<FileRole, usize> {
    let mut m = BTreeMap::new();
    for f in files {
        *m.entry(f.role).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, rel: &str, text: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    fn lines(n: usize, name: &str) -> String {
        let mut s = format!("contract {name} {{\n");
        for i in 0..n.saturating_sub(2) {
            s.push_str(&format!("    // line {i}\n"));
        }
        s.push_str("}\n");
        s
    }

    #[test]
    fn classifies_source_and_test() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "src/Vault.sol", "contract Vault {}\n");
        write(dir.path(), "test/Vault.t.sol", "contract VaultTest {}\n");
        let c = classify_files(dir.path()).unwrap();
        let roles: Vec<_> = c.files.iter().map(|f| (f.path.as_str(), f.role)).collect();
        assert_eq!(
            roles,
            vec![("src/Vault.sol", FileRole::Source), ("test/Vault.t.sol", FileRole::Test)]
        );
    }

    #[test]
    fn empty_directory_yields_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let c = classify_files(dir.path()).unwrap();
        assert!(c.files.is_empty() && c.skipped.is_empty());
    }

    #[test]
    fn interface_and_library_by_content() {
        assert_eq!(
            classify("src/IOracle.sol", "interface IOracle { function p() external view returns (uint); }"),
            FileRole::Interface
        );
        assert_eq!(classify("src/M.sol", "library M { }"), FileRole::Library);
        assert_eq!(classify("src/V.sol", "interface I {}\ncontract V is I {}"), FileRole::Source);
        assert_eq!(classify("script/Deploy.s.sol", "contract D {}"), FileRole::Script);
        assert_eq!(classify("lib/oz/Ownable.sol", "contract Ownable {}"), FileRole::Library);
        assert_eq!(classify("src/mocks/M.sol", "contract MockToken {}"), FileRole::Test);
    }

    #[test]
    fn non_utf8_is_skipped_and_logged() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "src/A.sol", "contract A {}\n");
        fs::write(dir.path().join("src/Bad.sol"), [0xff, 0xfe, 0x00]).unwrap();
        let c = classify_files(dir.path()).unwrap();
        assert_eq!(c.files.len(), 1);
        assert_eq!(c.skipped.len(), 1);
        assert_eq!(c.skipped[0].path, "src/Bad.sol");
    }

    #[test]
    fn unreadable_root_is_an_error() {
        let err = classify_files(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, IngestError::Unreadable { .. }));
    }

    #[test]
    fn remappings_from_both_files_with_precedence() {
        let dir = tempfile::tempdir().unwrap();
        assert!(resolve_remappings(dir.path()).is_empty());
        write(dir.path(), "remappings.txt", "@oz/=lib/openzeppelin/\nbroken-line\n");
        assert_eq!(
            resolve_remappings(dir.path()),
            vec![Remapping {
                prefix: "@oz/".into(),
                replacement: "lib/openzeppelin/".into()
            }]
        );
        write(
            dir.path(),
            "foundry.toml",
            "[profile.default]\nremappings = [\"@oz/=lib/other/\", \"forge-std/=lib/forge-std/src/\"]\n",
        );
        let r = resolve_remappings(dir.path());
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].replacement, "lib/openzeppelin/");
        assert_eq!(r[1].prefix, "forge-std/");
    }

    #[test]
    fn concatenation_boundaries_and_map_line() {
        let files = vec![
            SourceFile {
                path: "B.sol".into(),
                role: FileRole::Source,
                text: lines(5, "B"),
            },
            SourceFile {
                path: "A.sol".into(),
                role: FileRole::Source,
                text: lines(10, "A"),
            },
        ];
        let src = build_audit_source(&files, None).unwrap();
        assert_eq!(src.line_count(), 15);
        assert_eq!(src.offsets.segments[1].start, 11);
        assert_eq!(src.offsets.map_line(11).unwrap(), ("B.sol", 1));
        assert_eq!(src.offsets.map_line(10).unwrap(), ("A.sol", 10));
        assert!(matches!(
            src.offsets.map_line(16),
            Err(IngestError::LineOutOfRange { line: 16, total: 15 })
        ));
        assert!(src.offsets.map_line(0).is_err());
        assert_eq!(src.scope, vec!["A", "B"]);
        assert_eq!(src.offsets.to_concat("/abs/path/B.sol", 2), Some(12));
    }

    #[test]
    fn single_file_identity_segment() {
        let src = AuditSource::single("V.sol", "contract V {\n}\n");
        assert_eq!(src.offsets.segments.len(), 1);
        assert_eq!(src.offsets.map_line(1).unwrap(), ("V.sol", 1));
    }

    #[test]
    fn scope_override_restricts_and_validates() {
        let files = vec![SourceFile {
            path: "src/All.sol".into(),
            role: FileRole::Source,
            text: "contract Vault {}\ncontract Token {}\nabstract contract Base {}\n".into(),
        }];
        let all = build_audit_source(&files, None).unwrap();
        assert_eq!(all.scope.len(), 3);
        let one = build_audit_source(&files, Some(&["Vault".to_string()])).unwrap();
        assert_eq!(one.scope, vec!["Vault"]);
        let err = build_audit_source(&files, Some(&["Nope".to_string()])).unwrap_err();
        assert!(matches!(err, IngestError::UnknownScope(ref v) if v == &["Nope".to_string()]));
    }

    #[test]
    fn pragma_lower_bounds() {
        assert!(pragma_at_least_0_8("^0.8.20"));
        assert!(pragma_at_least_0_8(">=0.8.0 <0.9.0"));
        assert!(!pragma_at_least_0_8(">=0.7.0 <0.9.0"));
        assert!(!pragma_at_least_0_8("<0.9.0"));
        assert!(!pragma_at_least_0_8("^0.6.12"));
        assert_eq!(pragma_of("// x\npragma solidity  ^0.8.0;\n").as_deref(), Some("^0.8.0"));
    }
}
