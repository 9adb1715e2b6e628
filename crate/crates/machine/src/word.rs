//! Machine words: naturals, capabilities and instructions.
//!
//! Memory is word-addressed and every word is exactly one of the three
//! kinds. Capabilities carry their revocation-tree node inline; the machine
//! keeps node reference counts in sync on every word write.

use std::fmt;

use capstone_revtree::{NodeId, NODE_NULL};
use serde::{Deserialize, Serialize};

use crate::insn::Insn;

/// Access permissions, ordered by the `⪯` lattice (RW and RX are
/// incomparable, NA is below everything, RWX above everything).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Perm {
    Na,
    R,
    Rw,
    Rx,
    Rwx,
}

impl Perm {
    /// The `⪯` relation: `self` grants no more than `other`.
    pub fn leq(self, other: Perm) -> bool {
        use Perm::*;
        matches!(
            (self, other),
            (Na, _)
                | (R, R | Rw | Rx | Rwx)
                | (Rw, Rw | Rwx)
                | (Rx, Rx | Rwx)
                | (Rwx, Rwx)
        )
    }

    /// Numeric permission encoding used by `tighten`.
    pub fn decode(n: u64) -> Perm {
        match n {
            0 => Perm::R,
            1 => Perm::Rw,
            2 => Perm::Rx,
            3 => Perm::Rwx,
            _ => Perm::Na,
        }
    }

    /// `tighten`'s combination rule: the requested permission if it is no
    /// stronger than the current one, otherwise NA.
    pub fn tighten(self, requested: Perm) -> Perm {
        if requested.leq(self) {
            requested
        } else {
            Perm::Na
        }
    }

    pub fn grants_read(self) -> bool {
        !matches!(self, Perm::Na)
    }

    pub fn grants_write(self) -> bool {
        matches!(self, Perm::Rw | Perm::Rwx)
    }

    pub fn grants_exec(self) -> bool {
        matches!(self, Perm::Rx | Perm::Rwx)
    }
}

impl fmt::Display for Perm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Perm::Na => "NA",
            Perm::R => "R",
            Perm::Rw => "RW",
            Perm::Rx => "RX",
            Perm::Rwx => "RWX",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Perm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NA" | "na" => Ok(Perm::Na),
            "R" | "r" => Ok(Perm::R),
            "RW" | "rw" => Ok(Perm::Rw),
            "RX" | "rx" => Ok(Perm::Rx),
            "RWX" | "rwx" => Ok(Perm::Rwx),
            other => Err(format!("unknown permission `{other}`")),
        }
    }
}

/// Capability type. `Sealed(d)` and `SealedRet(d, r)` carry the domain id
/// of the suspended context; sealed-return capabilities additionally record
/// the caller register that receives the return value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapType {
    Lin,
    Non,
    Rev,
    Sealed(u64),
    SealedRet(u64, u8),
    Uninit,
}

impl CapType {
    /// Every type except NON moves rather than copies.
    pub fn is_linear(self) -> bool {
        !matches!(self, CapType::Non)
    }
}

/// A capability: type, bounds `[base, end)`, cursor, permissions and the
/// revocation-tree node backing its validity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cap {
    pub ty: CapType,
    pub base: u64,
    pub end: u64,
    pub cursor: u64,
    pub perm: Perm,
    pub node: NodeId,
}

impl Cap {
    pub fn readable(&self) -> bool {
        self.perm.grants_read() && self.ty != CapType::Uninit
    }

    pub fn writable(&self) -> bool {
        self.perm.grants_write()
    }

    pub fn executable(&self) -> bool {
        self.perm.grants_exec() && self.ty != CapType::Uninit
    }

    pub fn in_bound(&self) -> bool {
        self.base <= self.cursor && self.cursor < self.end
    }

    /// Types that may be presented for memory access at all.
    pub fn accessible(&self) -> bool {
        matches!(self.ty, CapType::Lin | CapType::Non | CapType::Uninit)
    }

    pub fn with_cursor(self, cursor: u64) -> Cap {
        Cap { cursor, ..self }
    }

    pub fn with_type(self, ty: CapType) -> Cap {
        Cap { ty, ..self }
    }
}

impl fmt::Display for Cap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ty {
            CapType::Lin => write!(f, "LIN")?,
            CapType::Non => write!(f, "NON")?,
            CapType::Rev => write!(f, "REV")?,
            CapType::Sealed(d) => write!(f, "SEALED({d})")?,
            CapType::SealedRet(d, r) => write!(f, "SEALEDRET({d},{})", crate::state::reg_name(r as usize))?,
            CapType::Uninit => write!(f, "UNINIT")?,
        }
        write!(
            f,
            "[{},{})@{} {} n{}",
            self.base, self.end, self.cursor, self.perm, self.node
        )
    }
}

/// One memory or register word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Word {
    Nat(u64),
    Cap(Cap),
    Insn(Insn),
}

impl Word {
    pub const ZERO: Word = Word::Nat(0);

    pub fn as_nat(&self) -> Option<u64> {
        match self {
            Word::Nat(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_cap(&self) -> Option<Cap> {
        match self {
            Word::Cap(c) => Some(*c),
            _ => None,
        }
    }

    /// Whether this word is a linear-type capability (moves, never copies).
    pub fn is_linear_cap(&self) -> bool {
        matches!(self, Word::Cap(c) if c.ty.is_linear())
    }

    /// Node referenced by this word, if it is a capability.
    pub fn cap_node(&self) -> Option<NodeId> {
        match self {
            Word::Cap(c) if c.node != NODE_NULL => Some(c.node),
            _ => None,
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Nat(n) => write!(f, "{n}"),
            Word::Cap(c) => write!(f, "{c}"),
            Word::Insn(i) => write!(f, "insn({i})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perm_lattice_is_the_enumerated_relation() {
        use Perm::*;
        let all = [Na, R, Rw, Rx, Rwx];
        let expected: &[(Perm, Perm)] = &[
            (Na, Na), (Na, R), (Na, Rw), (Na, Rx), (Na, Rwx),
            (R, R), (R, Rw), (R, Rx), (R, Rwx),
            (Rw, Rw), (Rw, Rwx),
            (Rx, Rx), (Rx, Rwx),
            (Rwx, Rwx),
        ];
        for &a in &all {
            for &b in &all {
                assert_eq!(a.leq(b), expected.contains(&(a, b)), "({a}, {b})");
            }
        }
    }

    #[test]
    fn tighten_yields_na_for_incomparable_requests() {
        assert_eq!(Perm::Rwx.tighten(Perm::R), Perm::R);
        assert_eq!(Perm::R.tighten(Perm::Rw), Perm::Na);
        assert_eq!(Perm::Rw.tighten(Perm::Rx), Perm::Na);
    }
}
