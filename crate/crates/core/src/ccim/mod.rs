//! The cross-contract interaction model: per-function records, target
//! resolution, the call graph, fixpoint footprints and the security views
//! built over them.

mod footprint;
mod model;
pub mod parser;
mod resolve;
mod security;

use std::collections::BTreeSet;

pub use footprint::propagate_footprints;
pub use model::*;
pub use resolve::{build_call_graph, build_resolution};
pub use security::{
    approvals_of, caller_guards, classify_admin, compute_state_dependencies, compute_trust_model,
    flag_rotation_risks, CompiledCatalogue, RoleCatalogue,
};

use crate::ingest::AuditSource;
use crate::types::VarId;

/// Parse the records of every in-scope contract.
pub fn parse_function_records(source: &AuditSource) -> Vec<FunctionRecord> {
    parser::parse(source).records
}

/// Build the full model from an audit source with the default catalogue.
pub fn build(source: &AuditSource) -> CcimModel {
    build_with(source, &RoleCatalogue::default())
}

pub fn build_with(source: &AuditSource, catalogue: &RoleCatalogue) -> CcimModel {
    let parsed = parser::parse(source);
    assemble_ccim(parsed, catalogue)
}

/// Compose every layer over one parse result.
pub fn assemble_ccim(parsed: parser::Parsed, catalogue: &RoleCatalogue) -> CcimModel {
    let mut diagnostics = parsed.diagnostics;
    let contracts = parsed.contracts;
    let records = parsed.records;
    let resolution = build_resolution(&contracts, &mut diagnostics);
    let graph = build_call_graph(&records, &resolution, &mut diagnostics);
    let footprints = propagate_footprints(&records);
    let vars: BTreeSet<VarId> = resolution.type_map.keys().cloned().collect();
    let mut deps = compute_state_dependencies(&records, &footprints, &vars);
    let admin_set = classify_admin(&records, catalogue);
    deps.rot = flag_rotation_risks(&deps, &admin_set);
    let trust = compute_trust_model(&graph, &records, catalogue);
    CcimModel {
        contracts,
        records,
        resolution,
        graph,
        footprints,
        deps,
        trust,
        admin_set,
        diagnostics,
    }
}
