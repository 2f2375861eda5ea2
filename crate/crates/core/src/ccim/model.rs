//! Data types of the cross-contract interaction model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::{FnRef, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContractKind {
    Contract,
    Abstract,
    Interface,
    Library,
}

impl ContractKind {
    pub fn is_concrete(self) -> bool {
        self == ContractKind::Contract
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVar {
    pub name: String,
    pub ty: String,
    pub line: usize,
    pub constant: bool,
    pub immutable: bool,
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardKind {
    /// `require(cond)` / `assert(cond)`.
    Require,
    /// `if (cond) revert`, stored as the negated condition.
    IfRevert,
    /// A modifier application, e.g. `onlyOwner` or `onlyRole(ADMIN)`.
    Modifier,
    /// A guard-helper call such as `_checkOwner()`.
    Check,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Guard {
    /// Normalized predicate text.
    pub expr: String,
    pub line: usize,
    pub kind: GuardKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifierDef {
    pub name: String,
    pub line: usize,
    pub params: Vec<String>,
    /// Every precondition checked by the modifier body.
    pub requires: Vec<Guard>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractInfo {
    pub name: String,
    pub kind: ContractKind,
    pub bases: Vec<String>,
    pub state_vars: Vec<StateVar>,
    pub modifiers: Vec<ModifierDef>,
    /// Names of every function declared (with or without body).
    pub functions: Vec<String>,
    pub structs: Vec<String>,
    pub enums: Vec<String>,
    pub span: (usize, usize),
    pub file: String,
    pub in_scope: bool,
    /// Doc comments directly above the declaration.
    pub natspec: String,
}

impl ContractInfo {
    pub fn state_var(&self, name: &str) -> Option<&StateVar> {
        self.state_vars.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
}

impl Visibility {
    pub fn is_entry(self) -> bool {
        matches!(self, Visibility::Public | Visibility::External)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mutability {
    View,
    Pure,
    Payable,
    Nonpayable,
}

impl Mutability {
    pub fn is_readonly(self) -> bool {
        matches!(self, Mutability::View | Mutability::Pure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Function,
    Constructor,
    Receive,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub ty: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifierUse {
    pub name: String,
    /// Normalized argument text, empty when the modifier takes none.
    pub args: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallSite {
    /// Storage variable holding the callee address.
    pub target: VarId,
    pub method: String,
    pub line: usize,
    pub args: Vec<String>,
    /// Interface name when the call is `Cast(target).method(...)`.
    pub cast: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InternalCall {
    pub callee: FnRef,
    pub line: usize,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Native,
    Token,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueFlow {
    pub kind: FlowKind,
    pub method: String,
    pub line: usize,
    pub receiver: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LowLevelCall {
    pub receiver: String,
    /// `call`, `delegatecall` or `staticcall`.
    pub kind: String,
    pub line: usize,
    pub with_value: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateKind {
    Add,
    Sub,
    Assign,
    Delete,
    Push,
    Pop,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateUpdate {
    pub var: VarId,
    pub kind: UpdateKind,
    pub line: usize,
    /// Right-hand side text for assignments and compound operators.
    pub rhs: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmBlock {
    pub line: usize,
    pub text: String,
}

pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub name: String,
    pub owner: String,
    pub kind: FunctionKind,
    pub vis: Visibility,
    #[serde(rename = "mut")]
    pub mutability: Mutability,
    pub modifiers: Vec<ModifierUse>,
    /// Access guards G(f): caller checks in the body plus modifier guards.
    pub guards: BTreeSet<Guard>,
    /// Every precondition in the body, access-related or not.
    pub requires: Vec<Guard>,
    pub reads: BTreeSet<VarId>,
    pub writes: BTreeSet<VarId>,
    pub call_sites: Vec<CallSite>,
    pub internal_calls: BTreeSet<FnRef>,
    pub internal_call_sites: Vec<InternalCall>,
    pub value_flows: Vec<ValueFlow>,
    pub fund_flag: bool,
    pub low_level_calls: Vec<LowLevelCall>,
    pub updates: Vec<StateUpdate>,
    pub unchecked: Vec<Span>,
    pub assembly: Vec<AsmBlock>,
    /// Post-condition predicates from `return` and `emit` statements.
    pub posts: Vec<String>,
    pub params: Vec<Param>,
    pub returns: String,
    pub signature: String,
    pub natspec: String,
    pub src: Span,
    /// Spans of further overloads folded into this record.
    pub other_spans: Vec<Span>,
    pub body: String,
}

impl FunctionRecord {
    pub fn fn_ref(&self) -> FnRef {
        FnRef::new(&self.owner, &self.name)
    }

    pub fn contains_line(&self, line: usize) -> bool {
        std::iter::once(&self.src)
            .chain(&self.other_spans)
            .any(|&(s, e)| s <= line && line <= e)
    }

    pub fn has_modifier(&self, name: &str) -> bool {
        self.modifiers.iter().any(|m| m.name == name)
    }

    pub fn is_non_reentrant(&self) -> bool {
        self.modifiers
            .iter()
            .any(|m| m.name == "nonReentrant" || m.name == "noReentrancy" || m.name == "lock")
    }

    pub fn in_unchecked(&self, line: usize) -> bool {
        self.unchecked.iter().any(|&(s, e)| s <= line && line <= e)
    }

    /// Does the record carry a state-mutating external interaction?
    pub fn has_external_interaction(&self) -> bool {
        !self.call_sites.is_empty() || !self.low_level_calls.is_empty() || !self.value_flows.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionMap {
    /// ρ: storage variable → concrete contract (`None` is ⊥).
    pub rho: BTreeMap<VarId, Option<String>>,
    pub type_map: BTreeMap<VarId, String>,
    /// Direct `(base, derived)` edges from `is` clauses.
    pub inheritance: BTreeSet<(String, String)>,
}

impl ResolutionMap {
    pub fn resolve(&self, v: &VarId) -> Option<&str> {
        self.rho.get(v).and_then(|c| c.as_deref())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub edges: BTreeSet<(FnRef, FnRef)>,
    pub contract_edges: BTreeSet<(String, String)>,
}

impl CallGraph {
    pub fn mentions(&self, f: &FnRef) -> bool {
        self.edges.iter().any(|(a, b)| a == f || b == f)
    }

    pub fn callees_of<'a>(&'a self, f: &'a FnRef) -> impl Iterator<Item = &'a FnRef> + 'a {
        self.edges.iter().filter(move |(a, _)| a == f).map(|(_, b)| b)
    }

    pub fn callers_of<'a>(&'a self, f: &'a FnRef) -> impl Iterator<Item = &'a FnRef> + 'a {
        self.edges.iter().filter(move |(_, b)| b == f).map(|(a, _)| a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub reads: BTreeSet<VarId>,
    pub writes: BTreeSet<VarId>,
    pub fund: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprints {
    pub per_function: BTreeMap<FnRef, Footprint>,
}

impl Footprints {
    pub fn get(&self, f: &FnRef) -> Option<&Footprint> {
        self.per_function.get(f)
    }

    pub fn fund(&self, f: &FnRef) -> bool {
        self.get(f).is_some_and(|fp| fp.fund)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDependencyMap {
    pub writers: BTreeMap<VarId, BTreeSet<FnRef>>,
    pub readers: BTreeMap<VarId, BTreeSet<FnRef>>,
    pub uses: BTreeMap<VarId, BTreeSet<FnRef>>,
    pub approvals: BTreeMap<FnRef, BTreeSet<VarId>>,
    pub rot: BTreeSet<VarId>,
}

impl StateDependencyMap {
    pub fn writers_of(&self, v: &VarId) -> impl Iterator<Item = &FnRef> {
        self.writers.get(v).into_iter().flatten()
    }

    pub fn readers_of(&self, v: &VarId) -> impl Iterator<Item = &FnRef> {
        self.readers.get(v).into_iter().flatten()
    }

    pub fn uses_of(&self, v: &VarId) -> impl Iterator<Item = &FnRef> {
        self.uses.get(v).into_iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustPair {
    pub caller: String,
    pub callee: String,
    pub assumes: BTreeSet<String>,
    pub enforces: BTreeSet<String>,
    pub gap: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustModel {
    /// One entry per directed contract edge of E_C.
    pub pairs: Vec<TrustPair>,
    /// Unordered pairs `(a, b)` with `a <= b` and edges in both directions.
    pub callbacks: BTreeSet<(String, String)>,
}

impl TrustModel {
    pub fn trustgap(&self, caller: &str, callee: &str) -> bool {
        self.pairs
            .iter()
            .any(|p| p.caller == caller && p.callee == callee && p.gap)
    }

    pub fn gaps(&self) -> impl Iterator<Item = &TrustPair> {
        self.pairs.iter().filter(|p| p.gap)
    }
}

/// The assembled model. Immutable after [`super::assemble_ccim`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcimModel {
    pub contracts: Vec<ContractInfo>,
    pub records: Vec<FunctionRecord>,
    pub resolution: ResolutionMap,
    pub graph: CallGraph,
    pub footprints: Footprints,
    pub deps: StateDependencyMap,
    pub trust: TrustModel,
    pub admin_set: BTreeSet<FnRef>,
    pub diagnostics: Vec<String>,
}

impl CcimModel {
    pub fn record(&self, f: &FnRef) -> Option<&FunctionRecord> {
        self.records.iter().find(|r| r.owner == f.owner && r.name == f.name)
    }

    /// Find a record by bare name, or by `Owner.name`. Bare names resolve
    /// only when unambiguous.
    pub fn lookup(&self, name: &str) -> Option<&FunctionRecord> {
        let name = name.trim().trim_end_matches("()");
        match name.rsplit_once('.') {
            Some((owner, n)) => self.records.iter().find(|r| r.owner == owner && r.name == n),
            None => {
                let mut it = self.records.iter().filter(|r| r.name == name);
                let first = it.next()?;
                it.next().is_none().then_some(first)
            }
        }
    }

    pub fn contract(&self, name: &str) -> Option<&ContractInfo> {
        self.contracts.iter().find(|c| c.name == name)
    }

    pub fn is_admin(&self, f: &FnRef) -> bool {
        self.admin_set.contains(f)
    }

    pub fn record_at_line(&self, line: usize) -> Option<&FunctionRecord> {
        self.records.iter().find(|r| r.contains_line(line))
    }

    pub fn in_scope_contracts(&self) -> impl Iterator<Item = &ContractInfo> {
        self.contracts.iter().filter(|c| c.in_scope)
    }

    /// Canonical JSON serialization (sorted maps, fixed field order).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }
}
