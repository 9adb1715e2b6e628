//! Machine state: threads, register files, memory, the revocation tree and
//! the reference-count plumbing that ties capability words to tree nodes.

use std::collections::BTreeMap;

use capstone_revtree::{Backend, NodeId, RevTree, TreeConfig};
use serde::Serialize;

use crate::image::Image;
use crate::insn::Insn;
use crate::word::{Cap, CapType, Perm, Word};

/// Register indices. The file is `[pc, epc, ret, r1..rM]`.
pub const PC: usize = 0;
pub const EPC: usize = 1;
pub const RET: usize = 2;
/// Index of r1; rK lives at `GPR + K - 1`.
pub const GPR: usize = 3;

pub fn reg_name(i: usize) -> String {
    match i {
        PC => "pc".into(),
        EPC => "epc".into(),
        RET => "ret".into(),
        _ => format!("r{}", i - GPR + 1),
    }
}

pub fn reg_index(name: &str, m: usize) -> Option<usize> {
    match name {
        "pc" => Some(PC),
        "epc" => Some(EPC),
        "ret" => Some(RET),
        _ => {
            let k: usize = name.strip_prefix('r')?.parse().ok()?;
            if 1 <= k && k <= m {
                Some(GPR + k - 1)
            } else {
                None
            }
        }
    }
}

/// A thread is either running with a register file or permanently faulted.
#[derive(Debug, Clone, PartialEq)]
pub enum ThreadState {
    Running(Vec<Word>),
    Error,
}

#[derive(Debug, Clone)]
pub struct Thread {
    pub state: ThreadState,
    /// Domain currently executing on this thread.
    pub domain: u64,
}

/// Deliberately introduced emulator bugs, used to validate that the
/// abstract-model checker actually catches unsound implementations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// `revoke` leaves one direct child subtree attached.
    RevokeSkipsDescendant,
    /// Moving a linear capability leaves the source intact (aliasing bug).
    SkipMovedZeroing,
    /// `ld` omits the LinearCap ⟹ Writable side condition.
    SkipLdLinearWritableCheck,
    /// `return` skips zeroing the vacated context region.
    SkipClearSealed,
    /// `revoke` inverts its LIN-vs-UNINIT result rule.
    RevokeWrongResultType,
}

#[derive(Debug, Clone)]
pub struct MachineConfig {
    /// Memory size in words.
    pub mem_size: usize,
    /// Number of general-purpose registers (r1..rM).
    pub m: usize,
    pub backend: Backend,
    pub tree: TreeConfig,
    /// Pin epc per thread: context switches neither save nor restore it and
    /// overwriting a set epc faults.
    pub strict_epc: bool,
    /// Storing a Nat to this cell halts the machine with that value.
    pub exit_cell: Option<u64>,
    pub mutation: Option<Mutation>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        let mem_size = 65536;
        MachineConfig {
            mem_size,
            m: 31,
            backend: Backend::default(),
            tree: TreeConfig::default(),
            strict_epc: false,
            exit_cell: Some(mem_size as u64 - 1),
            mutation: None,
        }
    }
}

impl MachineConfig {
    /// Small-machine config convenient for tests: `mem_size` words and the
    /// exit cell at the top.
    pub fn small(mem_size: usize, m: usize) -> Self {
        MachineConfig {
            mem_size,
            m,
            exit_cell: Some(mem_size as u64 - 1),
            ..MachineConfig::default()
        }
    }

    pub fn reg_count(&self) -> usize {
        self.m + 3
    }

    /// Context regions span M + 4 words (one reserved slot).
    pub fn context_words(&self) -> usize {
        self.m + 4
    }
}

/// Region given to one boot thread: its boot capability covers
/// `[base, end)` with the pc cursor at `entry`.
#[derive(Debug, Clone, Copy)]
pub struct BootPartition {
    pub base: u64,
    pub end: u64,
    pub entry: u64,
}

/// Non-linear window handed to every boot thread (rK = GPR slot `reg`).
#[derive(Debug, Clone, Copy)]
pub struct SharedWindow {
    pub base: u64,
    pub end: u64,
    pub perm: Perm,
    /// Register (index into the file) receiving the window capability.
    pub reg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    GuestExit,
    MaxSteps,
    NoRunnableThread,
    ScheduleExhausted,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunOutcome {
    pub steps: u64,
    pub exit: Option<u64>,
    pub stop: StopReason,
}

/// Report of a single scheduled step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub step: u64,
    pub thread: usize,
    /// Domain that was running when the step began.
    pub domain: u64,
    /// Instruction executed; `None` when the thread was already in ERROR.
    pub insn: Option<Insn>,
    /// Thread entered ERROR during this step.
    pub faulted: bool,
    /// Guest exit value if the step fired the exit convention.
    pub exit: Option<u64>,
}

#[derive(Clone)]
pub struct Machine {
    pub config: MachineConfig,
    pub threads: Vec<Thread>,
    pub mem: Vec<Word>,
    pub tree: Box<dyn RevTree>,
    /// Next fresh domain id (N in the transition rules).
    pub seal_counter: u64,
    pub steps: u64,
    pub exit: Option<u64>,
    /// Set by a strict-epc violation during the effects phase; consumed by
    /// `step`, which faults the thread.
    pub(crate) pending_fault: bool,
}

impl Machine {
    /// Blank machine: zeroed memory, no threads. Test rigs and boot build
    /// on this.
    pub fn new(config: MachineConfig) -> Machine {
        let tree = config.backend.build(config.tree.clone());
        Machine {
            mem: vec![Word::ZERO; config.mem_size],
            threads: Vec::new(),
            tree,
            seal_counter: 0,
            steps: 0,
            exit: None,
            pending_fault: false,
            config,
        }
    }

    /// Standard single-thread boot: thread 0 holds one linear RWX
    /// capability over all of memory in its pc, cursor at the image entry.
    pub fn boot(image: &Image, config: MachineConfig) -> Result<Machine, String> {
        let end = config.mem_size as u64;
        let entry = image.entry;
        let mut m = Machine::new(config);
        m.load_image(image)?;
        m.spawn_boot_thread(BootPartition { base: 0, end, entry })?;
        m.seal_counter = 1;
        m.tree.reset_stats();
        Ok(m)
    }

    /// Multi-thread boot: disjoint linear partitions, one thread and domain
    /// per partition, plus shared non-linear windows visible to all
    /// threads.
    pub fn boot_threads(
        image: &Image,
        config: MachineConfig,
        parts: &[BootPartition],
        shared: &[SharedWindow],
    ) -> Result<Machine, String> {
        if parts.is_empty() {
            return Err("at least one boot partition required".into());
        }
        let mut sorted: Vec<&BootPartition> = parts.iter().collect();
        sorted.sort_by_key(|p| p.base);
        for pair in sorted.windows(2) {
            if pair[0].end > pair[1].base {
                return Err(format!(
                    "boot partitions overlap: [{},{}) and [{},{})",
                    pair[0].base, pair[0].end, pair[1].base, pair[1].end
                ));
            }
        }
        let mut m = Machine::new(config);
        m.load_image(image)?;
        for p in parts {
            m.spawn_boot_thread(*p)?;
        }
        for w in shared {
            if w.end > m.config.mem_size as u64 || w.base >= w.end {
                return Err(format!("bad shared window [{},{})", w.base, w.end));
            }
            if w.reg < GPR || w.reg >= m.config.reg_count() {
                return Err(format!("bad shared window register {}", w.reg));
            }
            let node = m.tree.alloc_root().map_err(|e| e.to_string())?;
            m.tree.set_kind(node, capstone_revtree::NodeKind::RNon);
            let cap = Cap {
                ty: CapType::Non,
                base: w.base,
                end: w.end,
                cursor: w.base,
                perm: w.perm,
                node,
            };
            for k in 0..m.threads.len() {
                m.write_reg(k, w.reg, Word::Cap(cap));
            }
        }
        m.seal_counter = parts.len() as u64;
        m.tree.reset_stats();
        Ok(m)
    }

    fn spawn_boot_thread(&mut self, p: BootPartition) -> Result<(), String> {
        if p.end > self.config.mem_size as u64 || p.base >= p.end {
            return Err(format!("bad boot partition [{},{})", p.base, p.end));
        }
        let node = self.tree.alloc_root().map_err(|e| e.to_string())?;
        let cap = Cap {
            ty: CapType::Lin,
            base: p.base,
            end: p.end,
            cursor: p.entry,
            perm: Perm::Rwx,
            node,
        };
        let mut regs = vec![Word::ZERO; self.config.reg_count()];
        regs[PC] = Word::Cap(cap);
        self.tree.rc_adjust(node, 1);
        let domain = self.threads.len() as u64;
        self.threads.push(Thread {
            state: ThreadState::Running(regs),
            domain,
        });
        Ok(())
    }

    pub fn load_image(&mut self, image: &Image) -> Result<(), String> {
        if image.m != self.config.m {
            return Err(format!(
                "image register count M={} does not match machine M={}",
                image.m, self.config.m
            ));
        }
        if let Some(span) = image.span() {
            if span > self.config.mem_size as u64 {
                return Err(format!(
                    "image spans {span} words but memory holds {}",
                    self.config.mem_size
                ));
            }
        }
        for &(addr, word) in &image.cells {
            match word {
                Word::Nat(_) | Word::Insn(_) => self.mem[addr as usize] = word,
                Word::Cap(_) => return Err(format!("image cell {addr} holds a capability")),
            }
        }
        Ok(())
    }

    pub fn regs(&self, k: usize) -> Option<&Vec<Word>> {
        match &self.threads.get(k)?.state {
            ThreadState::Running(regs) => Some(regs),
            ThreadState::Error => None,
        }
    }

    pub fn reg(&self, k: usize, r: usize) -> Word {
        self.regs(k).expect("thread not running")[r]
    }

    pub fn is_errored(&self, k: usize) -> bool {
        matches!(self.threads[k].state, ThreadState::Error)
    }

    /// Write one register, keeping node reference counts in sync. In
    /// strict-epc mode an overwrite of an armed epc with a different value
    /// is rejected and flags a pending fault instead.
    pub fn write_reg(&mut self, k: usize, r: usize, w: Word) {
        if self.config.strict_epc && r == EPC {
            let old = self.reg(k, EPC);
            if old != Word::ZERO && old != w {
                self.pending_fault = true;
                return;
            }
        }
        let ThreadState::Running(regs) = &mut self.threads[k].state else {
            panic!("register write on errored thread");
        };
        let old = regs[r];
        regs[r] = w;
        // Increment before decrement: a same-node rewrite must never let
        // the count drain, or the backend could recycle the node mid-write.
        if let Some(n) = w.cap_node() {
            self.tree.rc_adjust(n, 1);
        }
        if let Some(n) = old.cap_node() {
            self.tree.rc_adjust(n, -1);
        }
    }

    /// Write one memory word, keeping reference counts in sync and firing
    /// the exit convention when a Nat lands in the exit cell.
    pub fn write_mem(&mut self, addr: u64, w: Word) {
        let old = self.mem[addr as usize];
        self.mem[addr as usize] = w;
        // Increment before decrement; see write_reg.
        if let Some(n) = w.cap_node() {
            self.tree.rc_adjust(n, 1);
        }
        if let Some(n) = old.cap_node() {
            self.tree.rc_adjust(n, -1);
        }
        if self.exit.is_none() && Some(addr) == self.config.exit_cell {
            if let Word::Nat(code) = w {
                self.exit = Some(code);
            }
        }
    }

    /// Fault transition: the register file is destroyed (reference counts
    /// drop) and the thread is permanently stuck.
    pub fn destroy_regfile(&mut self, k: usize) {
        if let ThreadState::Running(regs) = &self.threads[k].state {
            let nodes: Vec<NodeId> = regs.iter().filter_map(|w| w.cap_node()).collect();
            for n in nodes {
                self.tree.rc_adjust(n, -1);
            }
        }
        self.threads[k].state = ThreadState::Error;
    }

    /// Count every capability word in live register files and memory,
    /// grouped by node — the independent oracle for backend refcounts.
    pub fn recount_refcounts(&self) -> BTreeMap<NodeId, u64> {
        let mut counts: BTreeMap<NodeId, u64> = BTreeMap::new();
        for t in &self.threads {
            if let ThreadState::Running(regs) = &t.state {
                for w in regs {
                    if let Some(n) = w.cap_node() {
                        *counts.entry(n).or_default() += 1;
                    }
                }
            }
        }
        for w in &self.mem {
            if let Some(n) = w.cap_node() {
                *counts.entry(n).or_default() += 1;
            }
        }
        counts
    }

    /// Check backend refcounts against a fresh full-state recount.
    pub fn verify_refcounts(&self) -> Result<(), String> {
        let counts = self.recount_refcounts();
        for (&n, &c) in &counts {
            let rc = self.tree.refcount(n);
            if rc != c {
                return Err(format!("node {n}: backend refcount {rc}, recount {c}"));
            }
        }
        for (n, entry) in self.tree.live_nodes() {
            let c = counts.get(&n).copied().unwrap_or(0);
            if entry.refcount != c {
                return Err(format!(
                    "node {n}: backend refcount {}, recount {c}",
                    entry.refcount
                ));
            }
        }
        Ok(())
    }

    /// Instruction fetch. Any failure — errored thread, non-capability or
    /// non-executable pc, out-of-bounds cursor, non-instruction word —
    /// yields `invalid`. Fetch-path validity checks are unmetered.
    pub fn fetch(&self, k: usize) -> Insn {
        let ThreadState::Running(regs) = &self.threads[k].state else {
            return Insn::Invalid;
        };
        let Word::Cap(pc) = regs[PC] else {
            return Insn::Invalid;
        };
        if !(pc.executable()
            && !self.tree.is_revoked(pc.node)
            && pc.in_bound()
            && pc.accessible()
            && (pc.cursor as usize) < self.mem.len())
        {
            return Insn::Invalid;
        }
        match self.mem[pc.cursor as usize] {
            Word::Insn(i) => i,
            _ => Insn::Invalid,
        }
    }
}
