//! Deterministic machine-state dumps and tree-statistics rendering.
//!
//! Everything here is byte-stable for a given state: arrays instead of
//! maps wherever order matters, capabilities rendered field by field, and
//! fixed float formatting for the miss rate.

use capstone_revtree::{Parent, TreeStats};
use serde_json::{json, Value};

use crate::state::{reg_name, Machine, ThreadState};
use crate::word::{Cap, CapType, Word};

pub fn cap_json(c: &Cap) -> Value {
    let ty = match c.ty {
        CapType::Lin => json!("lin"),
        CapType::Non => json!("non"),
        CapType::Rev => json!("rev"),
        CapType::Sealed(d) => json!({ "sealed": d }),
        CapType::SealedRet(d, r) => json!({ "sealedret": { "domain": d, "reg": reg_name(r as usize) } }),
        CapType::Uninit => json!("uninit"),
    };
    json!({
        "type": ty,
        "base": c.base,
        "end": c.end,
        "cursor": c.cursor,
        "perm": c.perm.to_string(),
        "node": c.node,
    })
}

pub fn word_json(w: &Word) -> Value {
    match w {
        Word::Nat(n) => json!({ "nat": n }),
        Word::Cap(c) => json!({ "cap": cap_json(c) }),
        Word::Insn(i) => json!({ "insn": i.to_string() }),
    }
}

/// Full machine state as JSON. Memory is emitted sparsely (zero words are
/// skipped); tree nodes come out in id order.
pub fn state_json(m: &Machine) -> Value {
    let threads: Vec<Value> = m
        .threads
        .iter()
        .map(|t| match &t.state {
            ThreadState::Running(regs) => {
                let regs: Vec<Value> = regs
                    .iter()
                    .enumerate()
                    .map(|(i, w)| json!({ "reg": reg_name(i), "value": word_json(w) }))
                    .collect();
                json!({ "domain": t.domain, "state": "running", "regs": regs })
            }
            ThreadState::Error => json!({ "domain": t.domain, "state": "error" }),
        })
        .collect();

    let mem: Vec<Value> = m
        .mem
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != Word::ZERO)
        .map(|(addr, w)| json!({ "addr": addr, "value": word_json(w) }))
        .collect();

    let mut nodes = m.tree.live_nodes();
    nodes.sort_by_key(|&(id, _)| id);
    let nodes: Vec<Value> = nodes
        .into_iter()
        .map(|(id, e)| {
            let parent = match e.parent {
                Parent::Root => json!("root"),
                Parent::Null => json!("null"),
                Parent::Node(p) => json!(p),
            };
            let kind = match e.kind {
                capstone_revtree::NodeKind::RLin => "lin",
                capstone_revtree::NodeKind::RNon => "non",
            };
            json!({ "id": id, "parent": parent, "kind": kind, "refcount": e.refcount })
        })
        .collect();

    json!({
        "steps": m.steps,
        "seal_counter": m.seal_counter,
        "exit": m.exit,
        "threads": threads,
        "mem": mem,
        "tree": { "nodes": nodes },
    })
}

/// Column labels for operation statistics, in emission order.
pub const STATS_COLUMNS: [&str; 8] = [
    "Accesses",
    "Misses",
    "Hits",
    "Miss rate (%)",
    "#Allocation",
    "#Query",
    "#RC-update",
    "#Revocation",
];

/// Miss rate in percent, fixed at three decimals; `0.000` when the cache
/// saw no traffic.
pub fn miss_rate_percent(s: &TreeStats) -> String {
    format!("{:.3}", s.miss_rate() * 100.0)
}

fn stats_cells(s: &TreeStats) -> [String; 8] {
    [
        s.cache_accesses().to_string(),
        s.cache_misses.to_string(),
        s.cache_hits.to_string(),
        miss_rate_percent(s),
        s.allocations.to_string(),
        s.queries.to_string(),
        s.rc_updates.to_string(),
        s.revocations.to_string(),
    ]
}

pub fn stats_json(label: &str, s: &TreeStats) -> Value {
    let cells = stats_cells(s);
    json!({
        "label": label,
        "columns": STATS_COLUMNS,
        "values": {
            "accesses": s.cache_accesses(),
            "misses": s.cache_misses,
            "hits": s.cache_hits,
            "miss_rate_percent": miss_rate_percent(s),
            "allocations": s.allocations,
            "queries": s.queries,
            "rc_updates": s.rc_updates,
            "revocations": s.revocations,
        },
        "row": cells,
    })
}

/// Aligned text table, one row per labeled stats record.
pub fn stats_table(rows: &[(String, TreeStats)]) -> String {
    let mut widths: Vec<usize> = STATS_COLUMNS.iter().map(|c| c.len()).collect();
    let mut label_width = "Workload".len();
    let rendered: Vec<(String, [String; 8])> = rows
        .iter()
        .map(|(label, s)| {
            let cells = stats_cells(s);
            label_width = label_width.max(label.len());
            for (w, c) in widths.iter_mut().zip(cells.iter()) {
                *w = (*w).max(c.len());
            }
            (label.clone(), cells)
        })
        .collect();

    let mut out = String::new();
    out.push_str(&format!("{:<label_width$}", "Workload"));
    for (w, c) in widths.iter().zip(STATS_COLUMNS.iter()) {
        out.push_str(&format!("  {c:>w$}"));
    }
    out.push('\n');
    for (label, cells) in rendered {
        out.push_str(&format!("{label:<label_width$}"));
        for (w, c) in widths.iter().zip(cells.iter()) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stats_row_renders_zeros() {
        let s = TreeStats::default();
        assert_eq!(miss_rate_percent(&s), "0.000");
        let cells = stats_cells(&s);
        assert_eq!(cells[0], "0");
        assert_eq!(cells[3], "0.000");
    }

    #[test]
    fn miss_rate_is_a_percentage() {
        let s = TreeStats { cache_hits: 3, cache_misses: 1, ..TreeStats::default() };
        assert_eq!(miss_rate_percent(&s), "25.000");
    }

    #[test]
    fn table_has_all_columns_and_rows() {
        let table = stats_table(&[
            ("a".into(), TreeStats::default()),
            ("bench-long-name".into(), TreeStats { queries: 12, ..TreeStats::default() }),
        ]);
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        for col in STATS_COLUMNS {
            assert!(header.contains(col), "missing column {col}");
        }
        assert_eq!(lines.count(), 2);
    }
}
