//! Shared rig for machine integration tests: a tiny 64-word machine with
//! one manually constructed thread, helpers to plant capabilities and
//! single instructions, and metering accessors with pinned semantics.

#![allow(dead_code)]

use capstone_machine::*;
use capstone_revtree::NodeKind;

pub const MEM: usize = 64;
pub const M: usize = 8;

/// r1..rM live at GPR + k - 1.
pub fn g(k: usize) -> usize {
    GPR + k - 1
}

pub fn rb(k: usize) -> RegId {
    g(k) as RegId
}

pub struct Rig {
    pub m: Machine,
}

pub fn rig() -> Rig {
    rig_with(|_| {})
}

pub fn rig_with(tweak: impl FnOnce(&mut MachineConfig)) -> Rig {
    let mut config = MachineConfig::small(MEM, M);
    config.exit_cell = None;
    tweak(&mut config);
    let mut m = Machine::new(config);
    let regs = vec![Word::ZERO; m.config.reg_count()];
    m.threads.push(Thread {
        state: ThreadState::Running(regs),
        domain: 0,
    });
    m.seal_counter = 1;
    let mut r = Rig { m };
    // Executable window for the code under test.
    r.cap(PC, CapType::Lin, 32, MEM as u64, 40, Perm::Rwx);
    r
}

impl Rig {
    /// Fresh root-node capability placed in register `r`.
    pub fn cap(&mut self, r: usize, ty: CapType, b: u64, e: u64, a: u64, perm: Perm) -> Cap {
        let node = self.m.tree.alloc_root().unwrap();
        if !ty.is_linear() {
            self.m.tree.set_kind(node, NodeKind::RNon);
        }
        let c = Cap { ty, base: b, end: e, cursor: a, perm, node };
        self.m.write_reg(0, r, Word::Cap(c));
        c
    }

    /// Fresh root-node capability stored in memory at `addr`.
    pub fn cap_mem(&mut self, addr: u64, ty: CapType, b: u64, e: u64, a: u64, perm: Perm) -> Cap {
        let node = self.m.tree.alloc_root().unwrap();
        if !ty.is_linear() {
            self.m.tree.set_kind(node, NodeKind::RNon);
        }
        let c = Cap { ty, base: b, end: e, cursor: a, perm, node };
        self.m.write_mem(addr, Word::Cap(c));
        c
    }

    pub fn nat(&mut self, r: usize, n: u64) {
        self.m.write_reg(0, r, Word::Nat(n));
    }

    /// Plant `insn` under the pc and execute one step. Tree statistics are
    /// reset first, so the counters reflect this instruction alone.
    pub fn exec(&mut self, insn: Insn) -> StepReport {
        let pc = self.m.reg(0, PC).as_cap().expect("rig pc must be a capability");
        self.m.mem[pc.cursor as usize] = Word::Insn(insn);
        self.m.tree.reset_stats();
        let rep = self.m.step(ScheduleDecision::normal(0));
        self.m.verify_refcounts().expect("refcounts out of sync");
        rep
    }

    pub fn reg(&self, r: usize) -> Word {
        self.m.reg(0, r)
    }

    pub fn regcap(&self, r: usize) -> Cap {
        self.reg(r).as_cap().expect("expected a capability")
    }

    pub fn faulted(&self) -> bool {
        self.m.is_errored(0)
    }

    pub fn queries(&self) -> u64 {
        self.m.tree.stats().queries
    }

    pub fn allocs(&self) -> u64 {
        self.m.tree.stats().allocations
    }

    pub fn pc_cursor(&self) -> u64 {
        self.regcap(PC).cursor
    }
}

/// Assert a fault with a pinned metered-query count: the count proves how
/// far down the condition list execution got.
pub fn assert_fault(r: &Rig, queries: u64, what: &str) {
    assert!(r.faulted(), "{what}: expected a fault");
    assert_eq!(r.queries(), queries, "{what}: wrong query count");
}
