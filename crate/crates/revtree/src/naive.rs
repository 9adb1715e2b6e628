//! Reference tree backend: explicit parent map, lazy revocation.
//!
//! Revoking a subtree only detaches the *direct* children of the revoked
//! node; deeper descendants are discovered to be dead when a validity query
//! walks their parent chain and falls off the tree. Records are never
//! recycled. Simple, obviously correct, and linear-time in places where the
//! linked backend is constant-time — which is the point of keeping it.

use std::collections::BTreeMap;

use crate::{
    Meter, NodeEntry, NodeId, NodeKind, Parent, RevTree, RevokeOutcome, TreeConfig, TreeError,
    TreeStats,
};

#[derive(Debug, Clone)]
struct Record {
    parent: Parent,
    kind: NodeKind,
    rc: u64,
}

#[derive(Clone)]
pub struct NaiveTree {
    records: BTreeMap<NodeId, Record>,
    next_id: NodeId,
    max_nodes: usize,
    meter: Meter,
}

impl NaiveTree {
    pub fn new(config: TreeConfig) -> Self {
        NaiveTree {
            records: BTreeMap::new(),
            next_id: 0,
            max_nodes: config.max_nodes,
            meter: Meter::new(config.cache),
        }
    }

    fn alloc(&mut self, parent: Parent, kind: NodeKind) -> Result<NodeId, TreeError> {
        if self.records.len() >= self.max_nodes {
            return Err(TreeError::Exhausted(self.max_nodes));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.records.insert(id, Record { parent, kind, rc: 0 });
        self.meter.stats.allocations += 1;
        self.meter.touch(id);
        Ok(id)
    }

    /// Walk the parent chain; a missing record or a `Null` parent anywhere
    /// on the way up means the node is dead. Returns the records visited so
    /// metered callers can account for them.
    fn walk_revoked(&self, n: NodeId) -> (bool, Vec<NodeId>) {
        let mut touched = Vec::new();
        let mut cur = n;
        let revoked = loop {
            touched.push(cur);
            match self.records.get(&cur) {
                None => break true,
                Some(rec) => match rec.parent {
                    Parent::Null => break true,
                    Parent::Root => break false,
                    Parent::Node(p) => cur = p,
                },
            }
        };
        (revoked, touched)
    }
}

impl RevTree for NaiveTree {
    fn alloc_root(&mut self) -> Result<NodeId, TreeError> {
        self.alloc(Parent::Root, NodeKind::RLin)
    }

    fn alloc_split(&mut self, n: NodeId) -> Result<NodeId, TreeError> {
        let rec = self.records.get(&n).expect("split source must be live");
        let (parent, kind) = (rec.parent, rec.kind);
        self.meter.touch(n);
        self.alloc(parent, kind)
    }

    fn alloc_mrev(&mut self, n: NodeId) -> Result<NodeId, TreeError> {
        let rec = self.records.get(&n).expect("mrev source must be live");
        let (parent, kind) = (rec.parent, rec.kind);
        self.meter.touch(n);
        let fresh = self.alloc(parent, kind)?;
        // The source node is re-attached below the new node and becomes
        // linear again regardless of its previous kind.
        let rec = self.records.get_mut(&n).unwrap();
        rec.parent = Parent::Node(fresh);
        rec.kind = NodeKind::RLin;
        self.meter.touch(n);
        Ok(fresh)
    }

    fn set_kind(&mut self, n: NodeId, kind: NodeKind) {
        if let Some(rec) = self.records.get_mut(&n) {
            rec.kind = kind;
        }
        self.meter.touch(n);
    }

    fn query(&mut self, n: NodeId) -> bool {
        self.meter.stats.queries += 1;
        let (revoked, touched) = self.walk_revoked(n);
        for id in touched {
            self.meter.touch(id);
        }
        revoked
    }

    fn is_revoked(&self, n: NodeId) -> bool {
        self.walk_revoked(n).0
    }

    fn revoke_subtree(&mut self, n: NodeId) -> RevokeOutcome {
        self.meter.stats.revocations += 1;
        let mut had_rlin_child = false;
        // Finding the children of a node takes a full table scan here: the
        // map is keyed by child, not by parent.
        let ids: Vec<NodeId> = self.records.keys().copied().collect();
        for id in ids {
            self.meter.touch(id);
            let rec = self.records.get_mut(&id).unwrap();
            if rec.parent == Parent::Node(n) {
                had_rlin_child |= rec.kind == NodeKind::RLin;
                rec.parent = Parent::Null;
            }
        }
        RevokeOutcome { had_rlin_child }
    }

    fn revoke_subtree_sparing_first_child(&mut self, n: NodeId) -> RevokeOutcome {
        self.meter.stats.revocations += 1;
        let mut had_rlin_child = false;
        let mut spared = None;
        let ids: Vec<NodeId> = self.records.keys().copied().collect();
        for id in ids {
            self.meter.touch(id);
            let rec = self.records.get_mut(&id).unwrap();
            if rec.parent == Parent::Node(n) {
                had_rlin_child |= rec.kind == NodeKind::RLin;
                // Deliberately leave the lowest-numbered child attached.
                if spared.is_none() {
                    spared = Some(id);
                } else {
                    rec.parent = Parent::Null;
                }
            }
        }
        RevokeOutcome { had_rlin_child }
    }

    fn remove_node(&mut self, n: NodeId) {
        let Some(rec) = self.records.remove(&n) else {
            return;
        };
        self.meter.touch(n);
        let adopted_by = rec.parent;
        let ids: Vec<NodeId> = self.records.keys().copied().collect();
        for id in ids {
            self.meter.touch(id);
            let child = self.records.get_mut(&id).unwrap();
            if child.parent == Parent::Node(n) {
                child.parent = adopted_by;
            }
        }
    }

    fn rc_adjust(&mut self, n: NodeId, delta: i64) {
        debug_assert!(delta == 1 || delta == -1);
        self.meter.stats.rc_updates += 1;
        self.meter.touch(n);
        if let Some(rec) = self.records.get_mut(&n) {
            if delta > 0 {
                rec.rc += delta as u64;
            } else {
                let sub = (-delta) as u64;
                debug_assert!(rec.rc >= sub, "refcount underflow on node {n}");
                rec.rc = rec.rc.saturating_sub(sub);
            }
        }
    }

    fn refcount(&self, n: NodeId) -> u64 {
        self.records.get(&n).map_or(0, |r| r.rc)
    }

    fn contains(&self, n: NodeId) -> bool {
        self.records.contains_key(&n)
    }

    fn entry(&self, n: NodeId) -> Option<NodeEntry> {
        self.records.get(&n).map(|r| NodeEntry {
            parent: r.parent,
            kind: r.kind,
            refcount: r.rc,
        })
    }

    fn live_nodes(&self) -> Vec<(NodeId, NodeEntry)> {
        self.records
            .iter()
            .map(|(&id, r)| {
                (
                    id,
                    NodeEntry {
                        parent: r.parent,
                        kind: r.kind,
                        refcount: r.rc,
                    },
                )
            })
            .collect()
    }

    fn stats(&self) -> TreeStats {
        self.meter.stats
    }

    fn reset_stats(&mut self) {
        self.meter.reset();
    }

    fn clone_box(&self) -> Box<dyn RevTree> {
        Box::new(self.clone())
    }
}
