//! Mapping concrete machine states onto the abstract ownership model.
//!
//! A domain's *context* is the set of words it can touch without going
//! through memory: its register file while it runs, or the slots of the
//! region that seals it while it is suspended. Closing the context's linear
//! capabilities over capability-in-memory chains yields its *exclusive
//! realm*; the ranges of those capabilities are exactly what the abstract
//! state records as owned. `refines` performs that mapping wholesale, and
//! `wf`/`sub_ok` are the structural invariants the mapping relies on.

use std::collections::BTreeSet;

use capstone_machine::state::{Machine, ThreadState, EPC, PC, RET};
use capstone_machine::word::{Cap, CapType, Word};

use crate::abs::{AbsWord, DomClass, PState, Range};

/// Which concrete domain ids map to which abstract class. Every domain not
/// named here is superordinate.
#[derive(Debug, Clone)]
pub struct RealmSpec {
    pub user: u64,
    pub subs: BTreeSet<u64>,
}

impl RealmSpec {
    /// The default assignment: thread 0's boot domain is the user and
    /// every other domain is superordinate.
    pub fn for_machine(m: &Machine) -> RealmSpec {
        RealmSpec {
            user: m.threads.first().map(|t| t.domain).unwrap_or(0),
            subs: BTreeSet::new(),
        }
    }

    pub fn classify(&self, d: u64) -> DomClass {
        if d == self.user {
            DomClass::User
        } else if self.subs.contains(&d) {
            DomClass::Sub
        } else {
            DomClass::Sup
        }
    }
}

/// Where a word lives: register `r` of thread `k`, or a memory address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loc {
    Reg(usize, usize),
    Mem(u64),
}

/// A capability is usable only while its revocation-tree node is alive.
pub fn cap_valid(m: &Machine, c: &Cap) -> bool {
    !m.tree.is_revoked(c.node)
}

/// Every valid capability currently located in a live register file or in
/// memory. Revoked capabilities are dead words and are skipped.
pub fn located_caps(m: &Machine) -> Vec<(Loc, Cap)> {
    let mut out = Vec::new();
    for (k, t) in m.threads.iter().enumerate() {
        if let ThreadState::Running(regs) = &t.state {
            for (r, w) in regs.iter().enumerate() {
                if let Word::Cap(c) = w {
                    if cap_valid(m, c) {
                        out.push((Loc::Reg(k, r), *c));
                    }
                }
            }
        }
    }
    for (a, w) in m.mem.iter().enumerate() {
        if let Word::Cap(c) = w {
            if cap_valid(m, c) {
                out.push((Loc::Mem(a as u64), *c));
            }
        }
    }
    out
}

/// Context slot index for a register: pc, the reserved word, epc, ret and
/// then the general registers, matching the layout the machine itself uses
/// when sealing a context region.
fn reg_slot(ri: usize) -> usize {
    match ri {
        PC => 0,
        EPC => 2,
        RET => 3,
        _ => ri + 1,
    }
}

/// The words domain `d` can reach directly. A running thread's context is
/// its register file; a suspended domain's context is read out of the
/// region of the (unique, valid) capability that seals it; a domain with
/// neither has no context at all.
pub fn ctx(m: &Machine, d: u64) -> Vec<Word> {
    for t in &m.threads {
        if t.domain == d {
            if let ThreadState::Running(regs) = &t.state {
                return regs.clone();
            }
        }
    }
    let mut seal: Option<Cap> = None;
    for (_, c) in located_caps(m) {
        let matches = match c.ty {
            CapType::Sealed(sd) => sd == d,
            CapType::SealedRet(sd, _) => sd == d,
            _ => false,
        };
        if matches && seal.map(|s| c.base < s.base).unwrap_or(true) {
            seal = Some(c);
        }
    }
    let Some(c) = seal else { return Vec::new() };
    let mut words = Vec::with_capacity(m.config.reg_count());
    for ri in 0..m.config.reg_count() {
        let a = c.base + reg_slot(ri) as u64;
        words.push(*m.mem.get(a as usize).unwrap_or(&Word::ZERO));
    }
    words
}

/// Least set containing the type-matching seeds and every valid capability
/// of a matching type stored in memory inside the range of a member.
pub fn cap_closure<F: Fn(CapType) -> bool>(m: &Machine, seeds: &[Cap], types: F) -> Vec<Cap> {
    let mut members: Vec<Cap> = Vec::new();
    let mut frontier: Vec<Range> = Vec::new();
    for c in seeds {
        if types(c.ty) && !members.contains(c) {
            members.push(*c);
            frontier.push((c.base, c.end));
        }
    }
    let mut scanned: BTreeSet<u64> = BTreeSet::new();
    while let Some((b, e)) = frontier.pop() {
        for a in b..e.min(m.mem.len() as u64) {
            if !scanned.insert(a) {
                continue;
            }
            if let Word::Cap(c) = m.mem[a as usize] {
                if types(c.ty) && cap_valid(m, &c) && !members.contains(&c) {
                    members.push(c);
                    frontier.push((c.base, c.end));
                }
            }
        }
    }
    members
}

fn ctx_caps(m: &Machine, d: u64) -> Vec<Cap> {
    ctx(m, d)
        .into_iter()
        .filter_map(|w| w.as_cap())
        .filter(|c| cap_valid(m, c))
        .collect()
}

/// All memory a domain can reach through linear-or-nonlinear chains.
pub fn realm(m: &Machine, d: u64) -> Vec<Cap> {
    let seeds = ctx_caps(m, d);
    cap_closure(m, &seeds, |t| matches!(t, CapType::Lin | CapType::Non))
}

/// The exclusive realm: memory reachable through linear chains only.
pub fn xrealm(m: &Machine, d: u64) -> Vec<Cap> {
    let seeds = ctx_caps(m, d);
    cap_closure(m, &seeds, |t| t == CapType::Lin)
}

fn uninit_caps_reachable(m: &Machine, d: u64, reach: &[Cap]) -> Vec<Cap> {
    let mut out: Vec<Cap> = Vec::new();
    let mut push = |c: Cap| {
        if c.ty == CapType::Uninit && cap_valid(m, &c) && !out.contains(&c) {
            out.push(c);
        }
    };
    for w in ctx(m, d) {
        if let Word::Cap(c) = w {
            push(c);
        }
    }
    for rc in reach {
        for a in rc.base..rc.end.min(m.mem.len() as u64) {
            if let Word::Cap(c) = m.mem[a as usize] {
                push(c);
            }
        }
    }
    out
}

/// Valid uninitialized capabilities reachable from `d`'s realm.
pub fn realm_w(m: &Machine, d: u64) -> Vec<Cap> {
    let r = realm(m, d);
    uninit_caps_reachable(m, d, &r)
}

/// Valid uninitialized capabilities reachable from `d`'s exclusive realm.
pub fn xrealm_w(m: &Machine, d: u64) -> Vec<Cap> {
    let r = xrealm(m, d);
    uninit_caps_reachable(m, d, &r)
}

/// The address ranges of a capability set, dropping empty ranges.
pub fn ranges(caps: &[Cap]) -> BTreeSet<Range> {
    caps.iter()
        .filter(|c| c.base < c.end)
        .map(|c| (c.base, c.end))
        .collect()
}

/// The still-unwritten suffix of each uninitialized capability: cursor up
/// to end. Fully written capabilities contribute nothing.
pub fn woranges(caps: &[Cap]) -> BTreeSet<Range> {
    caps.iter()
        .filter(|c| c.ty == CapType::Uninit && c.cursor < c.end)
        .map(|c| (c.cursor, c.end))
        .collect()
}

/// Every domain that currently has a context: running threads plus every
/// domain suspended inside a valid sealed capability.
pub fn domains(m: &Machine) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    for t in &m.threads {
        if matches!(t.state, ThreadState::Running(_)) {
            out.insert(t.domain);
        }
    }
    for (_, c) in located_caps(m) {
        match c.ty {
            CapType::Sealed(d) | CapType::SealedRet(d, _) => {
                out.insert(d);
            }
            _ => {}
        }
    }
    out
}

/// Map a concrete state onto the abstract one: concrete memory with every
/// unwritten revoked suffix masked to `uninit`, and per-class ownership
/// sets taken from the exclusive realms of the live domains.
pub fn refines(m: &Machine, spec: &RealmSpec) -> PState {
    let mut p = PState::new(m.mem.len());
    for (a, w) in m.mem.iter().enumerate() {
        p.mem[a] = AbsWord::Val(*w);
    }
    for d in domains(m) {
        for c in realm_w(m, d) {
            for a in c.cursor..c.end.min(m.mem.len() as u64) {
                p.mem[a as usize] = AbsWord::Uninit;
            }
        }
        let owned = ranges(&xrealm(m, d));
        match spec.classify(d) {
            DomClass::User => p.user.extend(owned),
            DomClass::Sup => p.sup.extend(owned),
            DomClass::Sub => p.sub.extend(owned),
        }
    }
    p
}

fn describe(c: &Cap) -> String {
    format!("{} [{},{})", c.ty_name(), c.base, c.end)
}

trait TyName {
    fn ty_name(&self) -> &'static str;
}

impl TyName for Cap {
    fn ty_name(&self) -> &'static str {
        match self.ty {
            CapType::Lin => "LIN",
            CapType::Non => "NON",
            CapType::Rev => "REV",
            CapType::Sealed(_) => "SEALED",
            CapType::SealedRet(_, _) => "SEALEDRET",
            CapType::Uninit => "UNINIT",
        }
    }
}

/// Structural well-formedness: every valid located capability is backed by
/// a live tree node, and no two of them overlap in range unless one is a
/// revocation capability or both are non-linear.
pub fn wf_report(m: &Machine) -> Result<(), String> {
    let caps = located_caps(m);
    for (_, c) in &caps {
        if !m.tree.contains(c.node) {
            return Err(format!(
                "{} has no revocation-tree entry (node {})",
                describe(c),
                c.node
            ));
        }
    }
    // Overlap sweep over non-REV capabilities sorted by base: a violation
    // exists iff some capability starts before an earlier one ends and the
    // pair is not NON/NON.
    let mut sweep: Vec<&Cap> = caps
        .iter()
        .map(|(_, c)| c)
        .filter(|c| c.ty != CapType::Rev && c.base < c.end)
        .collect();
    sweep.sort_by_key(|c| (c.base, c.end));
    let mut last_excl: Option<&Cap> = None; // furthest-reaching non-NON so far
    let mut last_non: Option<&Cap> = None; // furthest-reaching NON so far
    for c in sweep {
        if let Some(p) = last_excl {
            if c.base < p.end {
                if !(c.ty == CapType::Non && p.ty == CapType::Non) {
                    return Err(format!("{} overlaps {}", describe(c), describe(p)));
                }
            }
        }
        if c.ty != CapType::Non {
            if let Some(p) = last_non {
                if c.base < p.end {
                    return Err(format!("{} overlaps {}", describe(c), describe(p)));
                }
            }
            if last_excl.map(|p| c.end > p.end).unwrap_or(true) {
                last_excl = Some(c);
            }
        } else if last_non.map(|p| c.end > p.end).unwrap_or(true) {
            last_non = Some(c);
        }
    }
    Ok(())
}

pub fn wf(m: &Machine) -> bool {
    wf_report(m).is_ok()
}

/// Subordination: no subordinate domain's context may hold a revocation
/// capability overlapping the user's exclusive realm.
pub fn sub_ok_report(m: &Machine, spec: &RealmSpec) -> Result<(), String> {
    let user_ranges = ranges(&xrealm(m, spec.user));
    for &d in &spec.subs {
        for w in ctx(m, d) {
            let Word::Cap(c) = w else { continue };
            if c.ty != CapType::Rev || !cap_valid(m, &c) {
                continue;
            }
            for &(b, e) in &user_ranges {
                if c.base < e && b < c.end {
                    return Err(format!(
                        "sub domain {d} holds {} overlapping user range [{b},{e})",
                        describe(&c)
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn sub_ok(m: &Machine, spec: &RealmSpec) -> bool {
    sub_ok_report(m, spec).is_ok()
}
