//! Transitive read/write/fund footprints over internal calls.

use std::collections::BTreeMap;

use super::model::*;
use crate::types::FnRef;

/// Least fixpoint of footprint propagation along `internal_calls`.
///
/// Starts from the direct sets and re-applies the union step until nothing
/// changes. Each pass can only grow finite sets, so cycles terminate.
pub fn propagate_footprints(records: &[FunctionRecord]) -> Footprints {
    let mut fp: BTreeMap<FnRef, Footprint> = records
        .iter()
        .map(|r| {
            (
                r.fn_ref(),
                Footprint {
                    reads: r.reads.clone(),
                    writes: r.writes.clone(),
                    fund: r.fund_flag,
                },
            )
        })
        .collect();
    let calls: Vec<(FnRef, Vec<FnRef>)> = records
        .iter()
        .map(|r| (r.fn_ref(), r.internal_calls.iter().filter(|c| fp.contains_key(c)).cloned().collect()))
        .collect();
    loop {
        let mut changed = false;
        for (f, callees) in &calls {
            let mut acc = fp[f].clone();
            for g in callees {
                let gf = &fp[g];
                acc.reads.extend(gf.reads.iter().cloned());
                acc.writes.extend(gf.writes.iter().cloned());
                acc.fund |= gf.fund;
            }
            if acc != fp[f] {
                fp.insert(f.clone(), acc);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Footprints { per_function: fp }
}
