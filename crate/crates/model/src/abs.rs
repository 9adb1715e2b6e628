//! The abstract ownership state and its transition rules.
//!
//! The abstract machine forgets almost everything about the emulator. It
//! keeps one word per address — either a concrete value or `uninit`, the
//! state of memory whose old contents must never be observed again — and,
//! for each of three domain classes, the set of address ranges the class
//! owns exclusively through linear capabilities. Ten primitive actions
//! transition this state, and each action checks its own guard; a guard
//! failure is never skipped silently, because the checker treats a rejected
//! action as a refinement failure.

use std::collections::BTreeSet;
use std::fmt;

use capstone_machine::word::Word;

/// Half-open address range `[start, end)`. Always non-empty: zero-length
/// ranges carry no authority and are excluded from all ownership sets.
pub type Range = (u64, u64);

/// One abstract memory cell: a concrete word, or `uninit` for memory whose
/// previous contents are no longer observable (freshly revoked regions).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbsWord {
    Val(Word),
    Uninit,
}

/// The three ownership classes the checker distinguishes: the designated
/// user domain, its subordinates, and everything else (superordinate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DomClass {
    User,
    Sup,
    Sub,
}

impl fmt::Display for DomClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomClass::User => write!(f, "user"),
            DomClass::Sup => write!(f, "sup"),
            DomClass::Sub => write!(f, "sub"),
        }
    }
}

/// A primitive abstract action. `payload` words ride along so the model can
/// insist that loads observe exactly what abstract memory holds and stores
/// leave behind exactly what the concrete machine wrote.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    LoadLinear { addr: u64, payload: Word },
    Load { addr: u64, payload: Word },
    StoreLinear { addr: u64, payload: Word },
    Store { addr: u64, payload: Word },
    Split { range: Range, at: u64 },
    Shrink { range: Range, to: Range },
    Send { range: Range, to: DomClass },
    Discard { range: Range },
    Claim { range: Range },
    Revoke { range: Range },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::LoadLinear { addr, payload } => {
                write!(f, "load_linear({addr}, {payload})")
            }
            Action::Load { addr, payload } => write!(f, "load({addr}, {payload})"),
            Action::StoreLinear { addr, payload } => {
                write!(f, "store_linear({addr}, {payload})")
            }
            Action::Store { addr, payload } => write!(f, "store({addr}, {payload})"),
            Action::Split { range, at } => {
                write!(f, "split([{},{}), {at})", range.0, range.1)
            }
            Action::Shrink { range, to } => {
                write!(f, "shrink([{},{}), [{},{}))", range.0, range.1, to.0, to.1)
            }
            Action::Send { range, to } => write!(f, "send([{},{}), {to})", range.0, range.1),
            Action::Discard { range } => write!(f, "discard([{},{}))", range.0, range.1),
            Action::Claim { range } => write!(f, "claim([{},{}))", range.0, range.1),
            Action::Revoke { range } => write!(f, "revoke([{},{}))", range.0, range.1),
        }
    }
}

/// The abstract machine state: memory plus one ownership set per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PState {
    pub mem: Vec<AbsWord>,
    pub user: BTreeSet<Range>,
    pub sup: BTreeSet<Range>,
    pub sub: BTreeSet<Range>,
}

impl PState {
    pub fn new(mem_size: usize) -> PState {
        PState {
            mem: vec![AbsWord::Val(Word::ZERO); mem_size],
            user: BTreeSet::new(),
            sup: BTreeSet::new(),
            sub: BTreeSet::new(),
        }
    }

    pub fn class(&self, c: DomClass) -> &BTreeSet<Range> {
        match c {
            DomClass::User => &self.user,
            DomClass::Sup => &self.sup,
            DomClass::Sub => &self.sub,
        }
    }

    fn class_mut(&mut self, c: DomClass) -> &mut BTreeSet<Range> {
        match c {
            DomClass::User => &mut self.user,
            DomClass::Sup => &mut self.sup,
            DomClass::Sub => &mut self.sub,
        }
    }

    /// True iff some range owned by `who` contains `addr` (end exclusive).
    pub fn owns(&self, who: DomClass, addr: u64) -> bool {
        self.class(who).iter().any(|&(b, e)| b <= addr && addr < e)
    }

    /// The class owning `addr`, if any. Well-formed states keep owned
    /// ranges disjoint across classes, so the first hit is the only one.
    pub fn owner(&self, addr: u64) -> Option<DomClass> {
        [DomClass::User, DomClass::Sup, DomClass::Sub]
            .into_iter()
            .find(|&c| self.owns(c, addr))
    }

    fn cell(&mut self, addr: u64) -> Result<&mut AbsWord, String> {
        let n = self.mem.len();
        self.mem
            .get_mut(addr as usize)
            .ok_or_else(|| format!("address {addr} outside abstract memory of {n} words"))
    }

    /// Apply one action on behalf of `who`, or explain why its guard fails.
    pub fn apply(&mut self, who: DomClass, act: &Action) -> Result<(), String> {
        match *act {
            Action::LoadLinear { addr, payload } => {
                if !self.owns(who, addr) {
                    return Err(format!("load_linear: {who} does not own address {addr}"));
                }
                let cell = *self.cell(addr)?;
                if cell != AbsWord::Val(payload) {
                    return Err(format!(
                        "load_linear: address {addr} holds {cell:?}, not {payload}"
                    ));
                }
                Ok(())
            }
            Action::Load { addr, payload } => {
                if let Some(c) = self.owner(addr) {
                    return Err(format!("load: address {addr} is owned by {c}"));
                }
                let cell = *self.cell(addr)?;
                if cell != AbsWord::Val(payload) {
                    return Err(format!("load: address {addr} holds {cell:?}, not {payload}"));
                }
                Ok(())
            }
            Action::StoreLinear { addr, payload } => {
                if !self.owns(who, addr) {
                    return Err(format!("store_linear: {who} does not own address {addr}"));
                }
                *self.cell(addr)? = AbsWord::Val(payload);
                Ok(())
            }
            Action::Store { addr, payload } => {
                if let Some(c) = self.owner(addr) {
                    return Err(format!("store: address {addr} is owned by {c}"));
                }
                *self.cell(addr)? = AbsWord::Val(payload);
                Ok(())
            }
            Action::Split { range, at } => {
                if !(range.0 < at && at < range.1) {
                    return Err(format!(
                        "split: point {at} not inside [{},{})",
                        range.0, range.1
                    ));
                }
                let set = self.class_mut(who);
                if !set.remove(&range) {
                    return Err(format!(
                        "split: {who} does not own [{},{})",
                        range.0, range.1
                    ));
                }
                set.insert((range.0, at));
                set.insert((at, range.1));
                Ok(())
            }
            Action::Shrink { range, to } => {
                if !(range.0 <= to.0 && to.0 < to.1 && to.1 <= range.1) {
                    return Err(format!(
                        "shrink: [{},{}) is not a non-empty subrange of [{},{})",
                        to.0, to.1, range.0, range.1
                    ));
                }
                let set = self.class_mut(who);
                if !set.remove(&range) {
                    return Err(format!(
                        "shrink: {who} does not own [{},{})",
                        range.0, range.1
                    ));
                }
                set.insert(to);
                Ok(())
            }
            Action::Send { range, to } => {
                if to == who {
                    return Err(format!("send: {who} sending to itself"));
                }
                if !self.class_mut(who).remove(&range) {
                    return Err(format!("send: {who} does not own [{},{})", range.0, range.1));
                }
                self.class_mut(to).insert(range);
                Ok(())
            }
            Action::Discard { range } => {
                if !self.class_mut(who).remove(&range) {
                    return Err(format!(
                        "discard: {who} does not own [{},{})",
                        range.0, range.1
                    ));
                }
                Ok(())
            }
            Action::Claim { range } => {
                if range.0 >= range.1 || range.1 > self.mem.len() as u64 {
                    return Err(format!("claim: bad range [{},{})", range.0, range.1));
                }
                if self.user.contains(&range) || self.sup.contains(&range) || self.sub.contains(&range)
                {
                    return Err(format!(
                        "claim: [{},{}) is already owned",
                        range.0, range.1
                    ));
                }
                self.class_mut(who).insert(range);
                Ok(())
            }
            Action::Revoke { range } => {
                if who == DomClass::Sub && self.user.contains(&range) {
                    return Err(format!(
                        "revoke: sub may not wrest [{},{}) from user",
                        range.0, range.1
                    ));
                }
                if range.0 >= range.1 || range.1 > self.mem.len() as u64 {
                    return Err(format!("revoke: bad range [{},{})", range.0, range.1));
                }
                self.user.remove(&range);
                self.sup.remove(&range);
                self.sub.remove(&range);
                self.class_mut(who).insert(range);
                for a in range.0..range.1 {
                    self.mem[a as usize] = AbsWord::Uninit;
                }
                Ok(())
            }
        }
    }
}
