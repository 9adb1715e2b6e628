//! Optimized tree backend: doubly linked node records in DFS order.
//!
//! Each record carries the depth of its node, so a subtree is exactly the
//! contiguous run of records following its head whose depth is greater than
//! the head's. That makes the key operations cheap:
//!
//! * splitting inserts a fresh leaf sibling immediately before the source
//!   node — O(1);
//! * `mrev` inserts the new parent at the source node's position and pushes
//!   the depths of the source's run down one level — O(subtree);
//! * revocation unlinks precisely the run of the revoked node — O(subtree),
//!   independent of the total tree size.
//!
//! Records whose node has been cut stay allocated until their reference
//! count drains to zero (capabilities in registers or memory may still name
//! them); after that the record is recycled through a free list.

use crate::{
    Meter, NodeEntry, NodeId, NodeKind, Parent, RevTree, RevokeOutcome, TreeConfig, TreeError,
    TreeStats,
};

#[derive(Debug, Clone)]
struct Slot {
    prev: Option<u32>,
    next: Option<u32>,
    depth: u32,
    rc: u64,
    kind: NodeKind,
    /// Attached to the tree (not revoked).
    valid: bool,
    /// Record allocated: either valid, or cut and waiting for its refcount
    /// to drain before the slot can be recycled.
    in_use: bool,
}

#[derive(Clone)]
pub struct LinkedTree {
    slots: Vec<Slot>,
    free: Vec<u32>,
    head: Option<u32>,
    tail: Option<u32>,
    in_use: usize,
    max_nodes: usize,
    meter: Meter,
}

impl LinkedTree {
    pub fn new(config: TreeConfig) -> Self {
        LinkedTree {
            slots: Vec::new(),
            free: Vec::new(),
            head: None,
            tail: None,
            in_use: 0,
            max_nodes: config.max_nodes,
            meter: Meter::new(config.cache),
        }
    }

    fn alloc_slot(&mut self, depth: u32, kind: NodeKind) -> Result<u32, TreeError> {
        if self.in_use >= self.max_nodes {
            return Err(TreeError::Exhausted(self.max_nodes));
        }
        let idx = match self.free.pop() {
            Some(idx) => idx,
            None => {
                self.slots.push(Slot {
                    prev: None,
                    next: None,
                    depth: 0,
                    rc: 0,
                    kind: NodeKind::RLin,
                    valid: false,
                    in_use: false,
                });
                (self.slots.len() - 1) as u32
            }
        };
        let slot = &mut self.slots[idx as usize];
        *slot = Slot {
            prev: None,
            next: None,
            depth,
            rc: 0,
            kind,
            valid: true,
            in_use: true,
        };
        self.in_use += 1;
        self.meter.stats.allocations += 1;
        Ok(idx)
    }

    fn insert_before(&mut self, x: u32, at: u32) {
        let prev = self.slots[at as usize].prev;
        self.slots[x as usize].prev = prev;
        self.slots[x as usize].next = Some(at);
        self.slots[at as usize].prev = Some(x);
        match prev {
            Some(p) => self.slots[p as usize].next = Some(x),
            None => self.head = Some(x),
        }
    }

    fn insert_at_tail(&mut self, x: u32) {
        self.slots[x as usize].prev = self.tail;
        self.slots[x as usize].next = None;
        match self.tail {
            Some(t) => self.slots[t as usize].next = Some(x),
            None => self.head = Some(x),
        }
        self.tail = Some(x);
    }

    fn unlink(&mut self, x: u32) {
        let (prev, next) = {
            let s = &self.slots[x as usize];
            (s.prev, s.next)
        };
        match prev {
            Some(p) => self.slots[p as usize].next = next,
            None => self.head = next,
        }
        match next {
            Some(n) => self.slots[n as usize].prev = prev,
            None => self.tail = prev,
        }
        let s = &mut self.slots[x as usize];
        s.prev = None;
        s.next = None;
    }

    /// Recycle a cut record once nothing references it any more.
    fn release_if_drained(&mut self, x: u32) {
        let s = &self.slots[x as usize];
        if s.in_use && !s.valid && s.rc == 0 {
            self.slots[x as usize].in_use = false;
            self.free.push(x);
            self.in_use -= 1;
        }
    }

    fn slot(&self, n: NodeId) -> Option<&Slot> {
        self.slots.get(n as usize).filter(|s| s.in_use)
    }

    fn live_slot(&self, n: NodeId) -> &Slot {
        let s = self.slot(n).expect("operation on unknown node");
        assert!(s.valid, "operation on revoked node {n}");
        s
    }
}

impl RevTree for LinkedTree {
    fn alloc_root(&mut self) -> Result<NodeId, TreeError> {
        let x = self.alloc_slot(0, NodeKind::RLin)?;
        self.insert_at_tail(x);
        self.meter.touch(x as NodeId);
        Ok(x as NodeId)
    }

    fn alloc_split(&mut self, n: NodeId) -> Result<NodeId, TreeError> {
        let (depth, kind) = {
            let s = self.live_slot(n);
            (s.depth, s.kind)
        };
        self.meter.touch(n);
        let x = self.alloc_slot(depth, kind)?;
        // A fresh leaf immediately before `n` shares all of `n`'s ancestors
        // and captures none of `n`'s subtree.
        self.insert_before(x, n as u32);
        self.meter.touch(x as NodeId);
        Ok(x as NodeId)
    }

    fn alloc_mrev(&mut self, n: NodeId) -> Result<NodeId, TreeError> {
        let (depth, kind) = {
            let s = self.live_slot(n);
            (s.depth, s.kind)
        };
        self.meter.touch(n);
        let x = self.alloc_slot(depth, kind)?;
        self.insert_before(x, n as u32);
        self.meter.touch(x as NodeId);
        // Push `n` and its whole run one level down; the new node takes over
        // `n`'s old position in the tree. Depth tests run against the values
        // still untouched ahead of the cursor, so the run boundary is judged
        // on original depths.
        let mut cur = Some(n as u32);
        let mut first = true;
        while let Some(c) = cur {
            let s = &mut self.slots[c as usize];
            if !first && s.depth <= depth {
                break;
            }
            first = false;
            s.depth += 1;
            let next = s.next;
            self.meter.touch(c as NodeId);
            cur = next;
        }
        // The displaced node is pinned below its new parent as linear.
        self.slots[n as usize].kind = NodeKind::RLin;
        Ok(x as NodeId)
    }

    fn set_kind(&mut self, n: NodeId, kind: NodeKind) {
        if let Some(s) = self.slots.get_mut(n as usize) {
            if s.in_use {
                s.kind = kind;
            }
        }
        self.meter.touch(n);
    }

    fn query(&mut self, n: NodeId) -> bool {
        self.meter.stats.queries += 1;
        self.meter.touch(n);
        self.is_revoked(n)
    }

    fn is_revoked(&self, n: NodeId) -> bool {
        !self.slot(n).is_some_and(|s| s.valid)
    }

    fn revoke_subtree(&mut self, n: NodeId) -> RevokeOutcome {
        self.meter.stats.revocations += 1;
        self.meter.touch(n);
        let depth = self.live_slot(n).depth;
        let mut had_rlin_child = false;
        // Direct children appear along the run with weakly decreasing
        // depths (each sibling follows the previous sibling's subtree), so
        // a node is a direct child exactly when its depth does not exceed
        // the last direct child's.
        let mut child_depth: Option<u32> = None;
        let mut cur = self.slots[n as usize].next;
        while let Some(c) = cur {
            let s = &self.slots[c as usize];
            if s.depth <= depth {
                break;
            }
            if child_depth.is_none_or(|cd| s.depth <= cd) {
                child_depth = Some(s.depth);
                had_rlin_child |= s.kind == NodeKind::RLin;
            }
            let next = s.next;
            self.meter.touch(c as NodeId);
            self.unlink(c);
            self.slots[c as usize].valid = false;
            self.release_if_drained(c);
            cur = next;
        }
        RevokeOutcome { had_rlin_child }
    }

    fn revoke_subtree_sparing_first_child(&mut self, n: NodeId) -> RevokeOutcome {
        self.meter.stats.revocations += 1;
        self.meter.touch(n);
        let depth = self.live_slot(n).depth;
        let mut had_rlin_child = false;
        let mut child_depth: Option<u32> = None;
        let mut cur = self.slots[n as usize].next;
        // Deliberately jump over the first direct child's run, leaving it
        // attached, before cutting the rest as `revoke_subtree` would.
        if let Some(c) = cur {
            let cs = &self.slots[c as usize];
            if cs.depth > depth {
                had_rlin_child |= cs.kind == NodeKind::RLin;
                child_depth = Some(cs.depth);
                let cd = cs.depth;
                self.meter.touch(c as NodeId);
                cur = cs.next;
                while let Some(g) = cur {
                    let gs = &self.slots[g as usize];
                    if gs.depth <= cd {
                        break;
                    }
                    cur = gs.next;
                }
            }
        }
        while let Some(c) = cur {
            let s = &self.slots[c as usize];
            if s.depth <= depth {
                break;
            }
            if child_depth.is_none_or(|cd| s.depth <= cd) {
                child_depth = Some(s.depth);
                had_rlin_child |= s.kind == NodeKind::RLin;
            }
            let next = s.next;
            self.meter.touch(c as NodeId);
            self.unlink(c);
            self.slots[c as usize].valid = false;
            self.release_if_drained(c);
            cur = next;
        }
        RevokeOutcome { had_rlin_child }
    }

    fn remove_node(&mut self, n: NodeId) {
        if self.slot(n).is_none() {
            return;
        }
        self.meter.touch(n);
        let depth = self.slots[n as usize].depth;
        // Children are adopted by `n`'s parent: pulling the run one level
        // up keeps the DFS ordering invariant intact once `n` is unlinked.
        let mut cur = self.slots[n as usize].next;
        while let Some(c) = cur {
            let s = &mut self.slots[c as usize];
            if s.depth <= depth {
                break;
            }
            s.depth -= 1;
            let next = s.next;
            self.meter.touch(c as NodeId);
            cur = next;
        }
        self.unlink(n as u32);
        self.slots[n as usize].valid = false;
        self.release_if_drained(n as u32);
    }

    fn rc_adjust(&mut self, n: NodeId, delta: i64) {
        debug_assert!(delta == 1 || delta == -1);
        self.meter.stats.rc_updates += 1;
        self.meter.touch(n);
        let Some(s) = self.slots.get_mut(n as usize) else {
            debug_assert!(false, "refcount update on unknown node {n}");
            return;
        };
        debug_assert!(s.in_use, "refcount update on recycled node {n}");
        if !s.in_use {
            return;
        }
        if delta > 0 {
            s.rc += delta as u64;
        } else {
            debug_assert!(s.rc >= 1, "refcount underflow on node {n}");
            s.rc = s.rc.saturating_sub(1);
        }
        self.release_if_drained(n as u32);
    }

    fn refcount(&self, n: NodeId) -> u64 {
        self.slot(n).map_or(0, |s| s.rc)
    }

    fn contains(&self, n: NodeId) -> bool {
        self.slot(n).is_some()
    }

    fn entry(&self, n: NodeId) -> Option<NodeEntry> {
        let s = self.slot(n)?;
        let parent = if !s.valid {
            Parent::Null
        } else {
            // The parent is the nearest preceding record with smaller depth.
            let mut cur = s.prev;
            loop {
                match cur {
                    None => break Parent::Root,
                    Some(p) => {
                        let ps = &self.slots[p as usize];
                        if ps.depth < s.depth {
                            break Parent::Node(p as NodeId);
                        }
                        cur = ps.prev;
                    }
                }
            }
        };
        Some(NodeEntry {
            parent,
            kind: s.kind,
            refcount: s.rc,
        })
    }

    fn live_nodes(&self) -> Vec<(NodeId, NodeEntry)> {
        let mut out = Vec::new();
        // Walk the list once, tracking the ancestor chain by depth.
        let mut stack: Vec<(u32, NodeId)> = Vec::new();
        let mut cur = self.head;
        while let Some(c) = cur {
            let s = &self.slots[c as usize];
            while stack.last().is_some_and(|&(d, _)| d >= s.depth) {
                stack.pop();
            }
            let parent = match stack.last() {
                Some(&(_, id)) => Parent::Node(id),
                None => Parent::Root,
            };
            out.push((
                c as NodeId,
                NodeEntry {
                    parent,
                    kind: s.kind,
                    refcount: s.rc,
                },
            ));
            stack.push((s.depth, c as NodeId));
            cur = s.next;
        }
        // Cut records still draining their refcounts are part of the store,
        // mirroring the reference backend's lazily dead entries.
        for (i, s) in self.slots.iter().enumerate() {
            if s.in_use && !s.valid {
                out.push((
                    i as NodeId,
                    NodeEntry {
                        parent: Parent::Null,
                        kind: s.kind,
                        refcount: s.rc,
                    },
                ));
            }
        }
        out.sort_by_key(|&(id, _)| id);
        out
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
