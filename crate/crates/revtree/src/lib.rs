//! Revocation tree backends for the Capstone capability machine.
//!
//! Every linear capability in the machine is tied to a node in a global
//! revocation tree. Revoking a capability cuts the subtree below its node,
//! which transitively invalidates all capabilities derived from it. Two
//! interchangeable backends are provided:
//!
//! * [`NaiveTree`] keeps an explicit parent map and resolves revocation
//!   lazily by walking parent chains. It is the reference implementation.
//! * [`LinkedTree`] stores nodes in a doubly linked list in DFS order,
//!   annotated with depths and reference counts, so that a subtree is a
//!   contiguous run and revocation touches exactly the nodes it kills.
//!   Freed records are recycled through a free list once their reference
//!   count drops to zero.
//!
//! Both backends meter their node-record traffic through an optional
//! set-associative [`NodeCache`] model and keep operation counters in
//! [`TreeStats`].

use serde::Serialize;
use thiserror::Error;

mod cache;
mod linked;
mod naive;
pub mod testkit;

pub use cache::{CacheConfig, NodeCache};
pub use linked::LinkedTree;
pub use naive::NaiveTree;

/// Identifier of a revocation tree node.
///
/// The machine stores these inside capabilities. `NODE_NULL` is the
/// distinguished "no node" value used by non-linear capabilities.
pub type NodeId = u64;

/// Node id carried by capabilities that are not tracked by the tree.
pub const NODE_NULL: NodeId = u64::MAX;

/// Parent pointer of a tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Parent {
    /// Child of another node.
    Node(NodeId),
    /// Attached directly to the tree root; never revoked from above.
    Root,
    /// Detached by a revocation; the node (and everything below it) is dead.
    Null,
}

/// Kind of a tree node.
///
/// Linear nodes (`RLin`) are what `revoke` looks for when deciding whether
/// the revoked region may have been written through: a revoked capability
/// whose node still had a linear child may cover initialized-but-lost data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    RLin,
    RNon,
}

/// Snapshot of a live node, used for dumps and inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeEntry {
    pub parent: Parent,
    pub kind: NodeKind,
    pub refcount: u64,
}

/// Outcome of cutting a subtree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RevokeOutcome {
    /// Whether the revoked node had a *direct* child of kind `RLin` at the
    /// moment of the cut.
    pub had_rlin_child: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    /// The node store is full; the machine turns this into a thread fault.
    #[error("revocation tree node store exhausted (limit {0})")]
    Exhausted(usize),
}

/// Backend configuration shared by both tree implementations.
#[derive(Debug, Clone)]
pub struct TreeConfig {
    /// Maximum number of live node records.
    pub max_nodes: usize,
    /// Cache model for node-record accesses; `None` disables metering of
    /// hits and misses (operation counters are always kept).
    pub cache: Option<CacheConfig>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_nodes: 1 << 20,
            cache: Some(CacheConfig::default()),
        }
    }
}

/// Operation counters, including cache traffic when a cache is attached.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    pub allocations: u64,
    pub queries: u64,
    pub rc_updates: u64,
    pub revocations: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl TreeStats {
    pub fn cache_accesses(&self) -> u64 {
        self.cache_hits + self.cache_misses
    }

    pub fn miss_rate(&self) -> f64 {
        let total = self.cache_accesses();
        if total == 0 {
            0.0
        } else {
            self.cache_misses as f64 / total as f64
        }
    }
}

/// Shared metering state: counters plus the optional cache model.
#[derive(Debug, Clone)]
pub(crate) struct Meter {
    pub stats: TreeStats,
    pub cache: Option<NodeCache>,
}

impl Meter {
    pub fn new(cache: Option<CacheConfig>) -> Self {
        Meter {
            stats: TreeStats::default(),
            cache: cache.map(NodeCache::new),
        }
    }

    /// Record one access to the node record of `n`.
    pub fn touch(&mut self, n: NodeId) {
        if let Some(cache) = &mut self.cache {
            if cache.access(n) {
                self.stats.cache_hits += 1;
            } else {
                self.stats.cache_misses += 1;
            }
        }
    }

    pub fn reset(&mut self) {
        self.stats = TreeStats::default();
        if let Some(cache) = &mut self.cache {
            cache.clear();
        }
    }
}

/// Interface the machine uses to talk to a revocation tree.
///
/// `query` is the *metered* validity check used while executing an
/// instruction's operand checks; `is_revoked` is the same predicate without
/// metering, for use by fetch, dumps and external checkers so that reported
/// query counts reflect only the instructions under study.
pub trait RevTree {
    /// Allocate a fresh node attached directly under the root (boot-time
    /// capability creation).
    fn alloc_root(&mut self) -> Result<NodeId, TreeError>;

    /// Allocate a sibling of `n`: same parent, same kind (`split`, `seal`
    /// and friends — operations that create a peer capability).
    fn alloc_split(&mut self, n: NodeId) -> Result<NodeId, TreeError>;

    /// Allocate a node *above* `n`: the new node takes over `n`'s place in
    /// the tree and `n` becomes its linear child (`mrev`).
    fn alloc_mrev(&mut self, n: NodeId) -> Result<NodeId, TreeError>;

    /// Change the kind of `n` (`delin` marks a node `RNon`).
    fn set_kind(&mut self, n: NodeId, kind: NodeKind);

    /// Metered validity check: false iff `n` is still attached to the root.
    fn query(&mut self, n: NodeId) -> bool;

    /// Unmetered validity check with identical semantics to [`RevTree::query`].
    fn is_revoked(&self, n: NodeId) -> bool;

    /// Cut all strict descendants of `n`. `n` itself stays valid.
    fn revoke_subtree(&mut self, n: NodeId) -> RevokeOutcome;

    /// Buggy cut that leaves one direct child of `n` (and that child's
    /// subtree) attached — which child is backend-defined. Fault injection
    /// for validating that the external checkers notice incomplete
    /// revocation; never used on the normal execution path.
    fn revoke_subtree_sparing_first_child(&mut self, n: NodeId) -> RevokeOutcome;

    /// Remove `n` itself; its children are adopted by `n`'s parent (`drop`).
    fn remove_node(&mut self, n: NodeId);

    /// Adjust the reference count of `n` by `delta`.
    fn rc_adjust(&mut self, n: NodeId, delta: i64);

    /// Current reference count of `n` (0 for unknown nodes).
    fn refcount(&self, n: NodeId) -> u64;

    /// Whether `n` currently has a live record.
    fn contains(&self, n: NodeId) -> bool;

    /// Snapshot of a live node, if any.
    fn entry(&self, n: NodeId) -> Option<NodeEntry>;

    /// All live nodes in ascending id order (deterministic dumps).
    fn live_nodes(&self) -> Vec<(NodeId, NodeEntry)>;

    fn stats(&self) -> TreeStats;
    fn reset_stats(&mut self);

    fn clone_box(&self) -> Box<dyn RevTree>;
}

impl Clone for Box<dyn RevTree> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Which backend a machine should instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    Naive,
    #[default]
    Linked,
}

impl Backend {
    pub fn build(self, config: TreeConfig) -> Box<dyn RevTree> {
        match self {
            Backend::Naive => Box::new(NaiveTree::new(config)),
            Backend::Linked => Box::new(LinkedTree::new(config)),
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Backend::Naive),
            "linked" | "optimized" => Ok(Backend::Linked),
            other => Err(format!("unknown tree backend `{other}`")),
        }
    }
}
