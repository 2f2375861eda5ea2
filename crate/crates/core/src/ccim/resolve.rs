//! Target resolution and the cross-contract call graph.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use super::model::*;
use crate::types::{FnRef, VarId};

/// Reflexive-transitive closure of the direct `(base, derived)` edges.
fn implementers(inheritance: &BTreeSet<(String, String)>, iface: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::from([iface.to_string()]);
    let mut stack = vec![iface.to_string()];
    while let Some(n) = stack.pop() {
        for (b, d) in inheritance {
            if *b == n && seen.insert(d.clone()) {
                stack.push(d.clone());
            }
        }
    }
    seen
}

/// Build ρ, the variable type map and the inheritance order.
///
/// `ρ(v) = c` when exactly one concrete in-scope contract `c` satisfies
/// `type(v) ⪯_H c`. Several candidates resolve to ⊥ with a diagnostic.
pub fn build_resolution(contracts: &[ContractInfo], diagnostics: &mut Vec<String>) -> ResolutionMap {
    let mut map = ResolutionMap::default();
    for c in contracts {
        for b in &c.bases {
            map.inheritance.insert((b.clone(), c.name.clone()));
        }
    }
    let concrete: BTreeSet<&str> = contracts
        .iter()
        .filter(|c| c.in_scope && c.kind.is_concrete())
        .map(|c| c.name.as_str())
        .collect();
    let known: BTreeSet<&str> = contracts.iter().map(|c| c.name.as_str()).collect();
    let mut cache: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for c in contracts.iter().filter(|c| c.in_scope) {
        for v in &c.state_vars {
            let id = VarId::new(&c.name, &v.name);
            map.type_map.insert(id.clone(), v.ty.clone());
            let ty = v.ty.trim();
            let rho = if known.contains(ty) {
                let impls = cache
                    .entry(ty.to_string())
                    .or_insert_with(|| implementers(&map.inheritance, ty));
                let cands: Vec<&String> = impls.iter().filter(|i| concrete.contains(i.as_str())).collect();
                match cands.as_slice() {
                    [one] => Some((*one).clone()),
                    [] => None,
                    many => {
                        let names: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
                        let msg = format!(
                            "ambiguous resolution for `{id}` of type `{ty}`: implemented by {}",
                            names.join(", ")
                        );
                        warn!("{msg}");
                        diagnostics.push(msg);
                        None
                    }
                }
            } else {
                None
            };
            map.rho.insert(id, rho);
        }
    }
    map
}

/// Edges `(f, g)` for every call site whose target resolves to `owner(g)`
/// and whose method names `g`.
pub fn build_call_graph(
    records: &[FunctionRecord],
    resolution: &ResolutionMap,
    diagnostics: &mut Vec<String>,
) -> CallGraph {
    let by_owner: BTreeSet<(&str, &str)> = records.iter().map(|r| (r.owner.as_str(), r.name.as_str())).collect();
    let mut g = CallGraph::default();
    for r in records {
        for x in &r.call_sites {
            let Some(c) = resolution.resolve(&x.target) else { continue };
            if by_owner.contains(&(c, x.method.as_str())) {
                let callee = FnRef::new(c, &x.method);
                g.contract_edges.insert((r.owner.clone(), c.to_string()));
                g.edges.insert((r.fn_ref(), callee));
            } else {
                let msg = format!(
                    "resolution miss: {}.{} calls `{}.{}` but `{c}` defines no `{}` (line {})",
                    r.owner, r.name, x.target.name, x.method, x.method, x.line
                );
                warn!("{msg}");
                diagnostics.push(msg);
            }
        }
    }
    g
}
