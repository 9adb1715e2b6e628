//! The step function: one scheduled instruction on one thread.
//!
//! Each handler validates its side conditions against the pre-state in the
//! order they are stated, then applies effects through the reference-count
//! aware `write_reg`/`write_mem` helpers. A failed condition faults the
//! thread before any effect lands; the only partial-effect cases are the
//! pc-update after a destructive write to pc and strict-epc rejections,
//! both of which destroy the register file after the surviving effects.

use crate::insn::Insn;
use crate::sched::{ScheduleDecision, Scheduler, Sig};
use crate::state::{
    Machine, Mutation, RunOutcome, StepReport, StopReason, ThreadState, EPC, GPR, PC, RET,
};
use crate::word::{Cap, CapType, Perm, Word};

impl Machine {
    /// Execute one schedule decision. Threads already in ERROR are skipped
    /// (the state is returned unchanged apart from the step counter).
    pub fn step(&mut self, d: ScheduleDecision) -> StepReport {
        assert!(d.thread < self.threads.len(), "scheduled missing thread");
        let exit_before = self.exit;
        self.steps += 1;
        let mut report = StepReport {
            step: self.steps,
            thread: d.thread,
            domain: self.threads[d.thread].domain,
            insn: None,
            faulted: false,
            exit: None,
        };
        if self.exit.is_some() || self.is_errored(d.thread) {
            return report;
        }
        let insn = match d.sig {
            Sig::Except => Insn::Except { r: GPR as u8 },
            Sig::Normal => self.fetch(d.thread),
        };
        report.insn = Some(insn);
        self.exec(d.thread, insn, d.sig == Sig::Except);
        if self.pending_fault {
            self.pending_fault = false;
            if !self.is_errored(d.thread) {
                self.destroy_regfile(d.thread);
            }
        }
        report.faulted = self.is_errored(d.thread);
        if exit_before.is_none() {
            report.exit = self.exit;
        }
        report
    }

    /// Drive the machine until the guest exits, the schedule ends, no
    /// thread is runnable, or `max_steps` decisions have been executed.
    pub fn run(
        &mut self,
        sched: &mut Scheduler,
        max_steps: u64,
        mut observer: impl FnMut(&Machine, &StepReport),
    ) -> RunOutcome {
        let mut executed = 0u64;
        let stop = loop {
            if let Some(code) = self.exit {
                break StopReason::GuestExit.with(code);
            }
            if executed >= max_steps {
                break StopReason::MaxSteps.none();
            }
            let Some(d) = sched.next(self) else {
                break if matches!(sched, Scheduler::Script { .. }) {
                    StopReason::ScheduleExhausted.none()
                } else {
                    StopReason::NoRunnableThread.none()
                };
            };
            let report = self.step(d);
            executed += 1;
            observer(self, &report);
        };
        RunOutcome {
            steps: executed,
            exit: stop.1,
            stop: stop.0,
        }
    }

    fn exec(&mut self, k: usize, insn: Insn, injected: bool) {
        use Insn::*;
        match insn {
            Mov { rd, rs } => {
                let w = self.reg(k, rs as usize);
                self.write_reg(k, rd as usize, w);
                let moved = self.moved(w);
                self.write_reg(k, rs as usize, moved);
                self.update_pc(k);
            }

            Ld { rd, rs } => {
                let Some(c) = self.reg(k, rs as usize).as_cap() else {
                    return self.fault(k);
                };
                if !(self.cap_valid(&c) && c.in_bound() && c.accessible() && c.readable())
                    || !self.addressable(c.cursor)
                {
                    return self.fault(k);
                }
                let w = self.mem[c.cursor as usize];
                let skip_linear_check =
                    self.config.mutation == Some(Mutation::SkipLdLinearWritableCheck);
                if w.is_linear_cap() && !c.writable() && !skip_linear_check {
                    return self.fault(k);
                }
                self.write_reg(k, rd as usize, w);
                let moved = self.moved(w);
                self.write_mem(c.cursor, moved);
                self.update_pc(k);
            }

            Sd { rd, rs } => {
                let Some(c) = self.reg(k, rd as usize).as_cap() else {
                    return self.fault(k);
                };
                if !(self.cap_valid(&c) && c.in_bound() && c.accessible() && c.writable())
                    || !self.addressable(c.cursor)
                {
                    return self.fault(k);
                }
                let w = self.reg(k, rs as usize);
                self.write_mem(c.cursor, w);
                let moved = self.moved(w);
                self.write_reg(k, rs as usize, moved);
                // Uninitialized capabilities fill linearly: the cursor
                // advances past the written word. All other types stay put.
                let c2 = if c.ty == CapType::Uninit {
                    c.with_cursor(c.cursor + 1)
                } else {
                    c
                };
                self.write_reg(k, rd as usize, Word::Cap(c2));
                self.update_pc(k);
            }

            Tighten { rd, rs } => {
                let Some(c) = self.reg(k, rd as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) {
                    return self.fault(k);
                }
                let Some(n) = self.reg(k, rs as usize).as_nat() else {
                    return self.fault(k);
                };
                let c2 = Cap {
                    perm: c.perm.tighten(Perm::decode(n)),
                    ..c
                };
                self.write_reg(k, rd as usize, Word::Cap(c2));
                self.update_pc(k);
            }

            Shrink { rd, rb, re } => {
                let Some(b2) = self.reg(k, rb as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(e2) = self.reg(k, re as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(c) = self.reg(k, rd as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c)
                    || !matches!(c.ty, CapType::Lin | CapType::Non)
                    || !(c.base <= b2 && b2 < e2 && e2 <= c.end)
                {
                    return self.fault(k);
                }
                let c2 = Cap { base: b2, end: e2, ..c };
                self.write_reg(k, rd as usize, Word::Cap(c2));
                self.update_pc(k);
            }

            Split { rd, rs, rp } => {
                let Some(c) = self.reg(k, rd as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) || c.ty != CapType::Lin {
                    return self.fault(k);
                }
                let Some(pv) = self.reg(k, rp as usize).as_nat() else {
                    return self.fault(k);
                };
                if !(c.base < pv && pv < c.end) {
                    return self.fault(k);
                }
                let Ok(fresh) = self.tree.alloc_split(c.node) else {
                    return self.fault(k);
                };
                let low = Cap { end: pv, ..c };
                let high = Cap { base: pv, node: fresh, ..c };
                self.write_reg(k, rd as usize, Word::Cap(low));
                self.write_reg(k, rs as usize, Word::Cap(high));
                self.update_pc(k);
            }

            Delin { r } => {
                let Some(c) = self.reg(k, r as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) || c.ty != CapType::Lin {
                    return self.fault(k);
                }
                self.tree.set_kind(c.node, capstone_revtree::NodeKind::RNon);
                self.write_reg(k, r as usize, Word::Cap(c.with_type(CapType::Non)));
                self.update_pc(k);
            }

            Scc { rd, rs } => {
                let Some(n) = self.reg(k, rs as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(c) = self.reg(k, rd as usize).as_cap() else {
                    return self.fault(k);
                };
                // Sealed and uninitialized cursors are not freely settable:
                // sealed ones are opaque, uninit ones track the write
                // frontier.
                if matches!(
                    c.ty,
                    CapType::Sealed(_) | CapType::SealedRet(_, _) | CapType::Uninit
                ) {
                    return self.fault(k);
                }
                self.write_reg(k, rd as usize, Word::Cap(c.with_cursor(n)));
                self.update_pc(k);
            }

            Lcc { rd, rs } => {
                let Some(c) = self.reg(k, rs as usize).as_cap() else {
                    return self.fault(k);
                };
                self.write_reg(k, rd as usize, Word::Nat(c.cursor));
                self.update_pc(k);
            }

            Revoke { r } => {
                let Some(c) = self.reg(k, r as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) || c.ty != CapType::Rev {
                    return self.fault(k);
                }
                let outcome = if self.config.mutation == Some(Mutation::RevokeSkipsDescendant) {
                    self.tree.revoke_subtree_sparing_first_child(c.node)
                } else {
                    self.tree.revoke_subtree(c.node)
                };
                let mut lin = !outcome.had_rlin_child
                    || matches!(c.perm, Perm::Na | Perm::R | Perm::Rx);
                if self.config.mutation == Some(Mutation::RevokeWrongResultType) {
                    lin = !lin;
                }
                let c2 = if lin {
                    c.with_type(CapType::Lin)
                } else {
                    Cap {
                        ty: CapType::Uninit,
                        cursor: c.base,
                        ..c
                    }
                };
                self.write_reg(k, r as usize, Word::Cap(c2));
                self.update_pc(k);
            }

            Mrev { rd, rs } => {
                let Some(c) = self.reg(k, rs as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) || c.ty != CapType::Lin {
                    return self.fault(k);
                }
                let Ok(fresh) = self.tree.alloc_mrev(c.node) else {
                    return self.fault(k);
                };
                let rev = Cap {
                    ty: CapType::Rev,
                    node: fresh,
                    ..c
                };
                // The source register keeps the linear capability.
                self.write_reg(k, rd as usize, Word::Cap(rev));
                self.update_pc(k);
            }

            Init { r } => {
                let Some(c) = self.reg(k, r as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) || c.ty != CapType::Uninit || c.cursor != c.end {
                    return self.fault(k);
                }
                self.write_reg(k, r as usize, Word::Cap(c.with_type(CapType::Lin)));
                self.update_pc(k);
            }

            Drop { r } => {
                let Some(c) = self.reg(k, r as usize).as_cap() else {
                    return self.fault(k);
                };
                if !self.cap_valid(&c) || !c.ty.is_linear() {
                    return self.fault(k);
                }
                // Zero the register first so the node's refcount drains
                // before the record is recycled.
                self.write_reg(k, r as usize, Word::ZERO);
                self.tree.remove_node(c.node);
                self.update_pc(k);
            }

            Seal { r } => {
                let Some(c) = self.reg(k, r as usize).as_cap() else {
                    return self.fault(k);
                };
                if !(self.cap_valid(&c) && c.readable() && c.writable() && c.ty == CapType::Lin) {
                    return self.fault(k);
                }
                let d = self.seal_counter;
                self.seal_counter += 1;
                self.write_reg(k, r as usize, Word::Cap(c.with_type(CapType::Sealed(d))));
                self.update_pc(k);
            }

            Call { rd, rs } => self.do_call(k, rd as usize, rs as usize, true),
            Except { r } => {
                // `except r` is `call epc r` with the interrupted pc saved
                // unincremented; it is also the form injected by schedulers.
                let _ = injected;
                self.do_call(k, EPC, r as usize, false)
            }
            Return { rd, rs } => self.do_return(k, rd as usize, rs as usize),
            Retseal { rd, rs } => self.do_retseal(k, rd as usize, rs as usize),

            Jmp { r } => {
                let Some(n) = self.reg(k, r as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(pc) = self.reg(k, PC).as_cap() else {
                    return self.fault(k);
                };
                self.write_reg(k, PC, Word::Cap(pc.with_cursor(n)));
            }

            Jnz { rd, rs } => {
                let Some(ns) = self.reg(k, rs as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(nd) = self.reg(k, rd as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(pc) = self.reg(k, PC).as_cap() else {
                    return self.fault(k);
                };
                let next = if ns == 0 {
                    pc.with_cursor(pc.cursor.wrapping_add(1))
                } else {
                    pc.with_cursor(nd)
                };
                self.write_reg(k, PC, Word::Cap(next));
            }

            Li { r, imm } => {
                self.write_reg(k, r as usize, Word::Nat(imm));
                self.update_pc(k);
            }

            Add { rd, rs } => {
                let Some(nd) = self.reg(k, rd as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(ns) = self.reg(k, rs as usize).as_nat() else {
                    return self.fault(k);
                };
                self.write_reg(k, rd as usize, Word::Nat(nd.wrapping_add(ns)));
                self.update_pc(k);
            }

            Lt { rd, ra, rb } => {
                let Some(na) = self.reg(k, ra as usize).as_nat() else {
                    return self.fault(k);
                };
                let Some(nb) = self.reg(k, rb as usize).as_nat() else {
                    return self.fault(k);
                };
                self.write_reg(k, rd as usize, Word::Nat(u64::from(na < nb)));
                self.update_pc(k);
            }

            Invalid => self.fault(k),
        }
    }

    /// Shared body of `call` and `except`: swap the current context with
    /// the sealed one at the target region.
    fn do_call(&mut self, k: usize, rd: usize, rs: usize, increment_pc: bool) {
        let Some(ci) = self.reg(k, rd).as_cap() else {
            return self.fault(k);
        };
        if !self.cap_valid(&ci) {
            return self.fault(k);
        }
        let CapType::Sealed(d_callee) = ci.ty else {
            return self.fault(k);
        };
        if !self.context_fits(&ci) {
            return self.fault(k);
        }
        let w = self.reg(k, rs);
        let caller_domain = self.threads[k].domain;

        let mut saved = self.regs(k).expect("running").clone();
        if increment_pc {
            if let Word::Cap(pc) = saved[PC] {
                saved[PC] = Word::Cap(pc.with_cursor(pc.cursor.wrapping_add(1)));
            }
        }
        saved[rs] = self.moved(w);
        saved[rd] = Word::ZERO;

        let loaded = self.read_context(ci.base);
        self.write_context(ci.base, &saved);
        self.install_context(k, &loaded);

        let ret_cap = ci.with_type(CapType::SealedRet(caller_domain, rd as u8));
        self.write_reg(k, RET, Word::Cap(ret_cap));
        self.write_reg(k, GPR, w);
        self.threads[k].domain = d_callee;
    }

    fn do_return(&mut self, k: usize, rd: usize, rs: usize) {
        let Some(ci) = self.reg(k, rd).as_cap() else {
            return self.fault(k);
        };
        if !self.cap_valid(&ci) {
            return self.fault(k);
        }
        let CapType::SealedRet(d_caller, r) = ci.ty else {
            return self.fault(k);
        };
        let r = r as usize;
        if !self.context_fits(&ci) || r >= self.config.reg_count() {
            return self.fault(k);
        }
        let w = self.reg(k, rs);

        let loaded = self.read_context(ci.base);
        self.install_context(k, &loaded);
        self.write_reg(k, r, w);
        // The vacated region is wiped; the returning context is *not*
        // saved anywhere — its leftover capabilities are gone.
        if self.config.mutation != Some(Mutation::SkipClearSealed) {
            for j in 0..self.config.context_words() {
                self.write_mem(ci.base + j as u64, Word::ZERO);
            }
        }
        self.threads[k].domain = d_caller;
    }

    fn do_retseal(&mut self, k: usize, rd: usize, rs: usize) {
        let Some(ci) = self.reg(k, rd).as_cap() else {
            return self.fault(k);
        };
        if !self.cap_valid(&ci) {
            return self.fault(k);
        }
        let CapType::SealedRet(d_caller, r) = ci.ty else {
            return self.fault(k);
        };
        let r = r as usize;
        if !self.context_fits(&ci) || r >= self.config.reg_count() {
            return self.fault(k);
        }
        // The payload becomes the saved pc cursor, so it must be a number.
        let Some(resume_at) = self.reg(k, rs).as_nat() else {
            return self.fault(k);
        };
        let Word::Cap(pc) = self.reg(k, PC) else {
            return self.fault(k);
        };
        let current_domain = self.threads[k].domain;

        let mut saved = self.regs(k).expect("running").clone();
        saved[PC] = Word::Cap(pc.with_cursor(resume_at));
        saved[rd] = Word::ZERO;

        let loaded = self.read_context(ci.base);
        self.write_context(ci.base, &saved);
        self.install_context(k, &loaded);

        let sealed = ci.with_type(CapType::Sealed(current_domain));
        self.write_reg(k, r, Word::Cap(sealed));
        self.threads[k].domain = d_caller;
    }

    /// Map context slot -> register index. Slot 1 is the reserved word.
    fn slot_reg(&self, j: usize) -> Option<usize> {
        match j {
            0 => Some(PC),
            1 => None,
            2 => Some(EPC),
            3 => Some(RET),
            _ => Some(j - 1),
        }
    }

    fn context_fits(&self, c: &Cap) -> bool {
        let words = self.config.context_words() as u64;
        c.base
            .checked_add(words)
            .is_some_and(|top| top <= c.end && top <= self.config.mem_size as u64)
    }

    fn read_context(&self, base: u64) -> Vec<Word> {
        (0..self.config.context_words())
            .map(|j| self.mem[base as usize + j])
            .collect()
    }

    /// Save a register file into a context region (slot 1 written as zero).
    /// In strict-epc mode the epc slot is also zeroed: the handler
    /// capability stays pinned to the thread rather than the context.
    fn write_context(&mut self, base: u64, regs: &[Word]) {
        for j in 0..self.config.context_words() {
            let w = match self.slot_reg(j) {
                Some(EPC) if self.config.strict_epc => Word::ZERO,
                Some(ri) => regs[ri],
                None => Word::ZERO,
            };
            self.write_mem(base + j as u64, w);
        }
    }

    /// Replace the running register file with a loaded context. In
    /// strict-epc mode the epc register is left untouched.
    fn install_context(&mut self, k: usize, slots: &[Word]) {
        for (j, &w) in slots.iter().enumerate() {
            if let Some(ri) = self.slot_reg(j) {
                if self.config.strict_epc && ri == EPC {
                    continue;
                }
                self.write_reg_raw(k, ri, w);
            }
        }
    }

    /// Register write without the strict-epc guard, for context loads.
    fn write_reg_raw(&mut self, k: usize, r: usize, w: Word) {
        let ThreadState::Running(regs) = &mut self.threads[k].state else {
            panic!("register write on errored thread");
        };
        let old = regs[r];
        regs[r] = w;
        // Increment before decrement; see write_reg.
        if let Some(n) = w.cap_node() {
            self.tree.rc_adjust(n, 1);
        }
        if let Some(n) = old.cap_node() {
            self.tree.rc_adjust(n, -1);
        }
    }

    fn addressable(&self, addr: u64) -> bool {
        (addr as usize) < self.mem.len()
    }

    /// Metered validity check used by instruction side conditions.
    fn cap_valid(&mut self, c: &Cap) -> bool {
        !self.tree.query(c.node)
    }

    fn moved(&self, w: Word) -> Word {
        if self.config.mutation == Some(Mutation::SkipMovedZeroing) {
            return w;
        }
        if w.is_linear_cap() {
            Word::ZERO
        } else {
            w
        }
    }

    fn fault(&mut self, k: usize) {
        self.destroy_regfile(k);
    }

    /// Advance pc past the executed instruction; a non-capability pc at
    /// this point destroys the register file (the instruction's other
    /// effects persist).
    fn update_pc(&mut self, k: usize) {
        if self.is_errored(k) {
            return;
        }
        match self.reg(k, PC) {
            Word::Cap(pc) => {
                let next = pc.with_cursor(pc.cursor.wrapping_add(1));
                // Same node before and after: the reference count cannot
                // change, so skip the tree round-trip entirely. Plain
                // straight-line execution must generate no tree traffic.
                let ThreadState::Running(regs) = &mut self.threads[k].state else {
                    return;
                };
                regs[PC] = Word::Cap(next);
            }
            _ => self.fault(k),
        }
    }
}

impl StopReason {
    fn with(self, code: u64) -> (StopReason, Option<u64>) {
        (self, Some(code))
    }

    fn none(self) -> (StopReason, Option<u64>) {
        (self, None)
    }
}
