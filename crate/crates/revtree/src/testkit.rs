//! Differential test harness driving both tree backends in lockstep.
//!
//! Node ids are not comparable across backends — the linked backend
//! recycles slots — so the harness tracks logical handles, each mapped to a
//! per-backend id, and only compares observations: validity, revocation
//! outcomes, node kinds and reference counts.
//!
//! Handle usage mirrors machine discipline: a handle's reference count
//! models how many machine words would name the node, structural operations
//! are applied only to handles the reference backend still considers valid,
//! and a handle whose count reaches zero is never used again (its linked
//! record may be recycled).

use rand::Rng;

use crate::{LinkedTree, NaiveTree, NodeId, NodeKind, RevTree, TreeConfig};

#[derive(Debug, Clone, Copy)]
struct Handle {
    naive: NodeId,
    linked: NodeId,
    /// Words the machine would currently have naming this node.
    rc: u64,
}

pub struct DualTree {
    naive: NaiveTree,
    linked: LinkedTree,
    handles: Vec<Handle>,
    /// Operations applied so far (for failure reports).
    pub ops: u64,
}

impl Default for DualTree {
    fn default() -> Self {
        Self::new()
    }
}

impl DualTree {
    pub fn new() -> Self {
        DualTree {
            naive: NaiveTree::new(TreeConfig {
                cache: None,
                ..TreeConfig::default()
            }),
            linked: LinkedTree::new(TreeConfig {
                cache: None,
                ..TreeConfig::default()
            }),
            handles: Vec::new(),
            ops: 0,
        }
    }

    fn usable(&self) -> Vec<usize> {
        (0..self.handles.len())
            .filter(|&i| self.handles[i].rc > 0)
            .collect()
    }

    fn valid_usable(&self) -> Vec<usize> {
        self.usable()
            .into_iter()
            .filter(|&i| !self.naive.is_revoked(self.handles[i].naive))
            .collect()
    }

    fn adjust(&mut self, i: usize, delta: i64) {
        let h = self.handles[i];
        self.naive.rc_adjust(h.naive, delta);
        self.linked.rc_adjust(h.linked, delta);
        let h = &mut self.handles[i];
        h.rc = (h.rc as i64 + delta) as u64;
    }

    /// Apply one random operation. Returns a description, for diagnostics.
    pub fn step(&mut self, rng: &mut impl Rng) -> String {
        self.ops += 1;
        let valid = self.valid_usable();
        let usable = self.usable();
        let choice = rng.gen_range(0..100);
        match choice {
            // Keep some allocation pressure so the pool never dries up.
            0..=14 => {
                let n = self.naive.alloc_root().expect("naive store full");
                let l = self.linked.alloc_root().expect("linked store full");
                self.handles.push(Handle { naive: n, linked: l, rc: 0 });
                let i = self.handles.len() - 1;
                self.adjust(i, 1);
                format!("root -> h{i}")
            }
            15..=34 if !valid.is_empty() => {
                let i = valid[rng.gen_range(0..valid.len())];
                let h = self.handles[i];
                let n = self.naive.alloc_split(h.naive).expect("naive store full");
                let l = self.linked.alloc_split(h.linked).expect("linked store full");
                self.handles.push(Handle { naive: n, linked: l, rc: 0 });
                let j = self.handles.len() - 1;
                self.adjust(j, 1);
                format!("split h{i} -> h{j}")
            }
            35..=49 if !valid.is_empty() => {
                let i = valid[rng.gen_range(0..valid.len())];
                let h = self.handles[i];
                let n = self.naive.alloc_mrev(h.naive).expect("naive store full");
                let l = self.linked.alloc_mrev(h.linked).expect("linked store full");
                self.handles.push(Handle { naive: n, linked: l, rc: 0 });
                let j = self.handles.len() - 1;
                self.adjust(j, 1);
                format!("mrev h{i} -> h{j}")
            }
            50..=57 if !valid.is_empty() => {
                let i = valid[rng.gen_range(0..valid.len())];
                let kind = if rng.gen_bool(0.5) { NodeKind::RNon } else { NodeKind::RLin };
                let h = self.handles[i];
                self.naive.set_kind(h.naive, kind);
                self.linked.set_kind(h.linked, kind);
                format!("set_kind h{i} {kind:?}")
            }
            58..=69 if !valid.is_empty() => {
                let i = valid[rng.gen_range(0..valid.len())];
                let h = self.handles[i];
                let a = self.naive.revoke_subtree(h.naive);
                let b = self.linked.revoke_subtree(h.linked);
                assert_eq!(
                    a, b,
                    "revocation outcome diverged on handle {i} after {} ops",
                    self.ops
                );
                format!("revoke h{i} (rlin_child={})", a.had_rlin_child)
            }
            70..=76 if !valid.is_empty() => {
                // Machine `drop`: the register is zeroed first, then the
                // node is removed and its children adopted.
                let candidates: Vec<usize> = valid
                    .iter()
                    .copied()
                    .filter(|&i| self.handles[i].rc == 1)
                    .collect();
                if candidates.is_empty() {
                    return "drop skipped".into();
                }
                let i = candidates[rng.gen_range(0..candidates.len())];
                self.adjust(i, -1);
                let h = self.handles[i];
                self.naive.remove_node(h.naive);
                self.linked.remove_node(h.linked);
                format!("drop h{i}")
            }
            77..=84 if !usable.is_empty() => {
                let i = usable[rng.gen_range(0..usable.len())];
                self.adjust(i, 1);
                format!("rc+ h{i}")
            }
            85..=92 if !usable.is_empty() => {
                let i = usable[rng.gen_range(0..usable.len())];
                self.adjust(i, -1);
                format!("rc- h{i}")
            }
            _ if !usable.is_empty() => {
                let i = usable[rng.gen_range(0..usable.len())];
                let h = self.handles[i];
                let a = self.naive.query(h.naive);
                let b = self.linked.query(h.linked);
                assert_eq!(a, b, "query diverged on handle {i} after {} ops", self.ops);
                format!("query h{i} -> {a}")
            }
            _ => "noop".into(),
        }
    }

    /// Full observation sweep: every handle still referenced by the model
    /// must look identical through both backends.
    pub fn check(&self) {
        for (i, h) in self.handles.iter().enumerate() {
            if h.rc == 0 {
                continue;
            }
            let a = self.naive.is_revoked(h.naive);
            let b = self.linked.is_revoked(h.linked);
            assert_eq!(a, b, "validity diverged on handle {i} after {} ops", self.ops);
            assert_eq!(
                self.naive.refcount(h.naive),
                h.rc,
                "naive refcount drifted on handle {i}"
            );
            assert_eq!(
                self.linked.refcount(h.linked),
                h.rc,
                "linked refcount drifted on handle {i}"
            );
            if !a {
                let ka = self.naive.entry(h.naive).unwrap().kind;
                let kb = self.linked.entry(h.linked).unwrap().kind;
                assert_eq!(ka, kb, "kind diverged on handle {i} after {} ops", self.ops);
            }
        }
        let counters = (
            self.naive.stats().allocations,
            self.naive.stats().queries,
            self.naive.stats().rc_updates,
            self.naive.stats().revocations,
        );
        let linked = (
            self.linked.stats().allocations,
            self.linked.stats().queries,
            self.linked.stats().rc_updates,
            self.linked.stats().revocations,
        );
        assert_eq!(counters, linked, "operation counters diverged");
    }

    pub fn handle_count(&self) -> usize {
        self.handles.len()
    }
}
