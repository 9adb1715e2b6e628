//! Instruction set: 23 mnemonics plus the `invalid` catch-all.

use std::fmt;

use crate::state::{reg_index, reg_name};

/// Register operand: an index into the register file
/// (0 = pc, 1 = epc, 2 = ret, 3.. = r1..rM).
pub type RegId = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insn {
    Mov { rd: RegId, rs: RegId },
    Ld { rd: RegId, rs: RegId },
    Sd { rd: RegId, rs: RegId },
    Tighten { rd: RegId, rs: RegId },
    Shrink { rd: RegId, rb: RegId, re: RegId },
    Split { rd: RegId, rs: RegId, rp: RegId },
    Delin { r: RegId },
    Scc { rd: RegId, rs: RegId },
    Lcc { rd: RegId, rs: RegId },
    Revoke { r: RegId },
    Mrev { rd: RegId, rs: RegId },
    Init { r: RegId },
    Drop { r: RegId },
    Seal { r: RegId },
    Call { rd: RegId, rs: RegId },
    Return { rd: RegId, rs: RegId },
    Retseal { rd: RegId, rs: RegId },
    Except { r: RegId },
    Jmp { r: RegId },
    Jnz { rd: RegId, rs: RegId },
    Li { r: RegId, imm: u64 },
    Add { rd: RegId, rs: RegId },
    Lt { rd: RegId, ra: RegId, rb: RegId },
    Invalid,
}

impl Insn {
    /// All register operands, for validation against the machine's M.
    pub fn registers(&self) -> Vec<RegId> {
        use Insn::*;
        match *self {
            Mov { rd, rs }
            | Ld { rd, rs }
            | Sd { rd, rs }
            | Tighten { rd, rs }
            | Scc { rd, rs }
            | Lcc { rd, rs }
            | Mrev { rd, rs }
            | Call { rd, rs }
            | Return { rd, rs }
            | Retseal { rd, rs }
            | Jnz { rd, rs }
            | Add { rd, rs } => vec![rd, rs],
            Shrink { rd, rb, re } => vec![rd, rb, re],
            Split { rd, rs, rp } => vec![rd, rs, rp],
            Lt { rd, ra, rb } => vec![rd, ra, rb],
            Delin { r } | Revoke { r } | Init { r } | Drop { r } | Seal { r } | Except { r }
            | Jmp { r } => vec![r],
            Li { r, .. } => vec![r],
            Invalid => vec![],
        }
    }

    /// Parse the textual form used by images and the assembler, e.g.
    /// `"mov r1 r2"` or `"li r3 42"`. `m` bounds the register namespace.
    pub fn parse(text: &str, m: usize) -> Result<Insn, String> {
        let mut parts = text.split_whitespace();
        let op = parts.next().ok_or_else(|| "empty instruction".to_string())?;
        let args: Vec<&str> = parts.collect();

        let reg = |i: usize| -> Result<RegId, String> {
            let tok = args
                .get(i)
                .ok_or_else(|| format!("`{op}`: missing operand {}", i + 1))?;
            let idx = reg_index(tok, m).ok_or_else(|| format!("`{op}`: bad register `{tok}`"))?;
            Ok(idx as RegId)
        };
        let nat = |i: usize| -> Result<u64, String> {
            let tok = args
                .get(i)
                .ok_or_else(|| format!("`{op}`: missing operand {}", i + 1))?;
            parse_imm(tok).ok_or_else(|| format!("`{op}`: bad immediate `{tok}`"))
        };
        let arity = |n: usize| -> Result<(), String> {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("`{op}`: expected {n} operands, got {}", args.len()))
            }
        };

        let insn = match op {
            "mov" => { arity(2)?; Insn::Mov { rd: reg(0)?, rs: reg(1)? } }
            "ld" => { arity(2)?; Insn::Ld { rd: reg(0)?, rs: reg(1)? } }
            "sd" => { arity(2)?; Insn::Sd { rd: reg(0)?, rs: reg(1)? } }
            "tighten" => { arity(2)?; Insn::Tighten { rd: reg(0)?, rs: reg(1)? } }
            "shrink" => { arity(3)?; Insn::Shrink { rd: reg(0)?, rb: reg(1)?, re: reg(2)? } }
            "split" => { arity(3)?; Insn::Split { rd: reg(0)?, rs: reg(1)?, rp: reg(2)? } }
            "delin" => { arity(1)?; Insn::Delin { r: reg(0)? } }
            "scc" => { arity(2)?; Insn::Scc { rd: reg(0)?, rs: reg(1)? } }
            "lcc" => { arity(2)?; Insn::Lcc { rd: reg(0)?, rs: reg(1)? } }
            "revoke" => { arity(1)?; Insn::Revoke { r: reg(0)? } }
            "mrev" => { arity(2)?; Insn::Mrev { rd: reg(0)?, rs: reg(1)? } }
            "init" => { arity(1)?; Insn::Init { r: reg(0)? } }
            "drop" => { arity(1)?; Insn::Drop { r: reg(0)? } }
            "seal" => { arity(1)?; Insn::Seal { r: reg(0)? } }
            "call" => { arity(2)?; Insn::Call { rd: reg(0)?, rs: reg(1)? } }
            "return" => { arity(2)?; Insn::Return { rd: reg(0)?, rs: reg(1)? } }
            "retseal" => { arity(2)?; Insn::Retseal { rd: reg(0)?, rs: reg(1)? } }
            "except" => { arity(1)?; Insn::Except { r: reg(0)? } }
            "jmp" => { arity(1)?; Insn::Jmp { r: reg(0)? } }
            "jnz" => { arity(2)?; Insn::Jnz { rd: reg(0)?, rs: reg(1)? } }
            "li" => { arity(2)?; Insn::Li { r: reg(0)?, imm: nat(1)? } }
            "add" => { arity(2)?; Insn::Add { rd: reg(0)?, rs: reg(1)? } }
            "lt" => { arity(3)?; Insn::Lt { rd: reg(0)?, ra: reg(1)?, rb: reg(2)? } }
            "invalid" => { arity(0)?; Insn::Invalid }
            other => return Err(format!("unknown mnemonic `{other}`")),
        };
        Ok(insn)
    }
}

/// Immediate syntax: decimal, hex (0x...), or negative decimal interpreted
/// as a two's-complement word.
pub fn parse_imm(tok: &str) -> Option<u64> {
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else if let Some(neg) = tok.strip_prefix('-') {
        neg.parse::<u64>().ok().map(|n| n.wrapping_neg())
    } else {
        tok.parse::<u64>().ok()
    }
}

impl fmt::Display for Insn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |i: RegId| reg_name(i as usize);
        use Insn::*;
        match *self {
            Mov { rd, rs } => write!(f, "mov {} {}", r(rd), r(rs)),
            Ld { rd, rs } => write!(f, "ld {} {}", r(rd), r(rs)),
            Sd { rd, rs } => write!(f, "sd {} {}", r(rd), r(rs)),
            Tighten { rd, rs } => write!(f, "tighten {} {}", r(rd), r(rs)),
            Shrink { rd, rb, re } => write!(f, "shrink {} {} {}", r(rd), r(rb), r(re)),
            Split { rd, rs, rp } => write!(f, "split {} {} {}", r(rd), r(rs), r(rp)),
            Delin { r: x } => write!(f, "delin {}", r(x)),
            Scc { rd, rs } => write!(f, "scc {} {}", r(rd), r(rs)),
            Lcc { rd, rs } => write!(f, "lcc {} {}", r(rd), r(rs)),
            Revoke { r: x } => write!(f, "revoke {}", r(x)),
            Mrev { rd, rs } => write!(f, "mrev {} {}", r(rd), r(rs)),
            Init { r: x } => write!(f, "init {}", r(x)),
            Drop { r: x } => write!(f, "drop {}", r(x)),
            Seal { r: x } => write!(f, "seal {}", r(x)),
            Call { rd, rs } => write!(f, "call {} {}", r(rd), r(rs)),
            Return { rd, rs } => write!(f, "return {} {}", r(rd), r(rs)),
            Retseal { rd, rs } => write!(f, "retseal {} {}", r(rd), r(rs)),
            Except { r: x } => write!(f, "except {}", r(x)),
            Jmp { r: x } => write!(f, "jmp {}", r(x)),
            Jnz { rd, rs } => write!(f, "jnz {} {}", r(rd), r(rs)),
            Li { r: x, imm } => write!(f, "li {} {}", r(x), imm),
            Add { rd, rs } => write!(f, "add {} {}", r(rd), r(rs)),
            Lt { rd, ra, rb } => write!(f, "lt {} {} {}", r(rd), r(ra), r(rb)),
            Invalid => write!(f, "invalid"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_parse_round_trip() {
        let samples = [
            Insn::Mov { rd: 3, rs: 4 },
            Insn::Shrink { rd: 3, rb: 4, re: 5 },
            Insn::Li { r: 0, imm: u64::MAX },
            Insn::Lt { rd: 1, ra: 2, rb: 33 },
            Insn::Except { r: 5 },
            Insn::Invalid,
        ];
        for insn in samples {
            let text = insn.to_string();
            assert_eq!(Insn::parse(&text, 31).unwrap(), insn, "{text}");
        }
    }

    #[test]
    fn parse_rejects_out_of_range_registers() {
        assert!(Insn::parse("mov r4 r5", 3).is_err());
        assert!(Insn::parse("mov pc r3", 3).is_ok());
    }

    #[test]
    fn immediates_accept_hex_and_negatives() {
        assert_eq!(parse_imm("0x10"), Some(16));
        assert_eq!(parse_imm("-1"), Some(u64::MAX));
        assert_eq!(parse_imm("blah"), None);
    }
}
