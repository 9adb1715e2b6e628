//! Address layout, symbol resolution, instruction encoding — and the
//! inverse listing.

use std::collections::HashMap;
use std::fmt::Write as _;

use capstone_machine::insn::parse_imm;
use capstone_machine::{reg_index, Image, Insn, Word};

use crate::expand::expand;
use crate::scan::{is_ident, is_local, reg_like, reserved, scan, Line, Token};
use crate::AsmError;

enum CellSrc {
    Insn(Vec<Token>),
    Data(Token),
}

struct Planned {
    addr: u64,
    line: usize,
    src: CellSrc,
}

/// Assemble a source listing into an image.
///
/// Pass one expands macros, walks the location counter (`.org` moves it,
/// every instruction or `.word` advances it by one), and binds labels and
/// `.equ` constants into one symbol table. Pass two resolves operands —
/// forward references included — and encodes. The result is deterministic:
/// cells sorted by address, `m` from `.m` (default 31), entry from
/// `.entry` (default 0).
pub fn assemble(src: &str) -> Result<Image, AsmError> {
    let lines = expand(scan(src))?;

    let mut symbols: HashMap<String, u64> = HashMap::new();
    let mut defined_at: HashMap<String, usize> = HashMap::new();
    let mut occupied: HashMap<u64, usize> = HashMap::new();
    let mut plan: Vec<Planned> = Vec::new();
    let mut addr: u64 = 0;
    let mut m_decl: Option<usize> = None;
    let mut entry_decl: Option<(Token, usize)> = None;

    for line in &lines {
        let mut rest = line.toks.as_slice();
        while let Some(tok) = rest.first() {
            let Some(name) = tok.text.strip_suffix(':') else { break };
            define(&mut symbols, &mut defined_at, name, tok, addr, line.num, "label")?;
            rest = &rest[1..];
        }
        let Some(head) = rest.first() else { continue };

        match head.text.as_str() {
            ".m" => {
                let tok = &operands(line, head, rest, 1)?[0];
                let v = parse_imm(&tok.text)
                    .filter(|v| (1..=253).contains(v))
                    .ok_or_else(|| {
                        AsmError::new(
                            line.num,
                            tok.col,
                            format!("`.m`: register count `{}` not in 1..=253", tok.text),
                        )
                    })?;
                if m_decl.replace(v as usize).is_some() {
                    return Err(AsmError::new(line.num, head.col, "duplicate `.m` directive"));
                }
            }
            ".entry" => {
                let tok = operands(line, head, rest, 1)?[0].clone();
                if entry_decl.replace((tok, line.num)).is_some() {
                    return Err(AsmError::new(line.num, head.col, "duplicate `.entry` directive"));
                }
            }
            ".org" => {
                let tok = &operands(line, head, rest, 1)?[0];
                addr = early_value(&symbols, tok, line.num, ".org")?;
            }
            ".equ" => {
                let args = operands(line, head, rest, 2)?;
                let v = early_value(&symbols, &args[1], line.num, ".equ")?;
                define(&mut symbols, &mut defined_at, &args[0].text, &args[0], v, line.num, "constant")?;
            }
            ".word" => {
                let tok = operands(line, head, rest, 1)?[0].clone();
                claim(&mut occupied, addr, line.num, head)?;
                plan.push(Planned { addr, line: line.num, src: CellSrc::Data(tok) });
                addr += 1;
            }
            ".cap" => {
                return Err(AsmError::new(
                    line.num,
                    head.col,
                    "capability literals cannot be assembled; capabilities exist only at run time",
                ));
            }
            d if d.starts_with('.') => {
                return Err(AsmError::new(line.num, head.col, format!("unknown directive `{d}`")));
            }
            _ => {
                claim(&mut occupied, addr, line.num, head)?;
                plan.push(Planned { addr, line: line.num, src: CellSrc::Insn(rest.to_vec()) });
                addr += 1;
            }
        }
    }

    let m = m_decl.unwrap_or(31);
    let entry = match &entry_decl {
        None => 0,
        Some((tok, line)) => number_or_symbol(&symbols, tok, *line)?,
    };

    let mut cells: Vec<(u64, Word)> = Vec::with_capacity(plan.len());
    for p in &plan {
        let word = match &p.src {
            CellSrc::Insn(toks) => Word::Insn(encode(toks, m, &symbols, p.line)?),
            CellSrc::Data(tok) => Word::Nat(number_or_symbol(&symbols, tok, p.line)?),
        };
        cells.push((p.addr, word));
    }
    cells.sort_by_key(|&(a, _)| a);
    Ok(Image { m, entry, cells })
}

fn define(
    symbols: &mut HashMap<String, u64>,
    defined_at: &mut HashMap<String, usize>,
    name: &str,
    tok: &Token,
    value: u64,
    line: usize,
    what: &str,
) -> Result<(), AsmError> {
    if !is_ident(name) && !is_local(name) {
        return Err(AsmError::new(line, tok.col, format!("bad {what} name `{name}`")));
    }
    if let Some(why) = reserved(name) {
        return Err(AsmError::new(line, tok.col, format!("`{name}` is reserved ({why})")));
    }
    if let Some(first) = defined_at.insert(name.to_string(), line) {
        return Err(AsmError::new(
            line,
            tok.col,
            format!("duplicate symbol `{name}` (first defined at line {first})"),
        ));
    }
    symbols.insert(name.to_string(), value);
    Ok(())
}

fn operands<'a>(
    line: &Line,
    head: &Token,
    rest: &'a [Token],
    n: usize,
) -> Result<&'a [Token], AsmError> {
    let args = &rest[1..];
    if args.len() != n {
        return Err(AsmError::new(
            line.num,
            head.col,
            format!("`{}` takes {} operand(s), got {}", head.text, n, args.len()),
        ));
    }
    Ok(args)
}

fn claim(
    occupied: &mut HashMap<u64, usize>,
    addr: u64,
    line: usize,
    head: &Token,
) -> Result<(), AsmError> {
    if let Some(first) = occupied.insert(addr, line) {
        return Err(AsmError::new(
            line,
            head.col,
            format!("address {addr} assigned twice (previously at line {first})"),
        ));
    }
    Ok(())
}

/// `.org`/`.equ` steer pass one itself, so their operands must resolve
/// immediately: a number or a symbol defined on an earlier line.
fn early_value(
    symbols: &HashMap<String, u64>,
    tok: &Token,
    line: usize,
    directive: &str,
) -> Result<u64, AsmError> {
    if let Some(v) = parse_imm(&tok.text) {
        return Ok(v);
    }
    if let Some(&v) = symbols.get(&tok.text) {
        return Ok(v);
    }
    Err(AsmError::new(
        line,
        tok.col,
        format!("`{directive}` needs a number or an already-defined symbol, got `{}`", tok.text),
    ))
}

fn number_or_symbol(
    symbols: &HashMap<String, u64>,
    tok: &Token,
    line: usize,
) -> Result<u64, AsmError> {
    if let Some(v) = parse_imm(&tok.text) {
        return Ok(v);
    }
    if let Some(&v) = symbols.get(&tok.text) {
        return Ok(v);
    }
    if is_ident(&tok.text) {
        Err(AsmError::new(line, tok.col, format!("undefined symbol `{}`", tok.text)))
    } else {
        Err(AsmError::new(line, tok.col, format!("bad operand `{}`", tok.text)))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Reg,
    Imm,
}

/// Operand shapes per mnemonic, for diagnostics that point at the exact
/// operand. `Insn::parse` stays the encoding authority afterwards.
fn shape(op: &str) -> Option<&'static [Kind]> {
    use Kind::*;
    Some(match op {
        "mov" | "ld" | "sd" | "tighten" | "scc" | "lcc" | "mrev" | "call" | "return"
        | "retseal" | "jnz" | "add" => &[Reg, Reg],
        "shrink" | "split" | "lt" => &[Reg, Reg, Reg],
        "delin" | "revoke" | "init" | "drop" | "seal" | "except" | "jmp" => &[Reg],
        "li" => &[Reg, Imm],
        "invalid" => &[],
        _ => return None,
    })
}

fn encode(
    toks: &[Token],
    m: usize,
    symbols: &HashMap<String, u64>,
    line: usize,
) -> Result<Insn, AsmError> {
    let head = &toks[0];
    let Some(kinds) = shape(&head.text) else {
        return Err(AsmError::new(line, head.col, format!("unknown mnemonic `{}`", head.text)));
    };
    let args = &toks[1..];
    if args.len() != kinds.len() {
        return Err(AsmError::new(
            line,
            head.col,
            format!("`{}` takes {} operand(s), got {}", head.text, kinds.len(), args.len()),
        ));
    }

    let mut parts: Vec<String> = Vec::with_capacity(toks.len());
    parts.push(head.text.clone());
    for (tok, kind) in args.iter().zip(kinds) {
        match kind {
            Kind::Reg => {
                if reg_index(&tok.text, m).is_some() {
                    parts.push(tok.text.clone());
                } else if reg_like(&tok.text) {
                    return Err(AsmError::new(
                        line,
                        tok.col,
                        format!("register `{}` out of range; this program has r1..r{m}", tok.text),
                    ));
                } else {
                    return Err(AsmError::new(
                        line,
                        tok.col,
                        format!("`{}` is not a register", tok.text),
                    ));
                }
            }
            Kind::Imm => parts.push(number_or_symbol(symbols, tok, line)?.to_string()),
        }
    }
    Insn::parse(&parts.join(" "), m).map_err(|e| AsmError::new(line, head.col, e))
}

/// Render an image as source that reassembles cell-identically: `.m` and
/// `.entry` headers, then each contiguous run of cells introduced by its
/// `.org`.
pub fn disassemble(img: &Image) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".m {}", img.m);
    let _ = writeln!(out, ".entry {}", img.entry);
    let mut next = None;
    for &(addr, word) in &img.cells {
        if next != Some(addr) {
            let _ = writeln!(out, ".org {addr}");
        }
        let _ = writeln!(out, "{}", disassemble_word(&word));
        next = Some(addr + 1);
    }
    out
}

/// One word in assembly syntax. Capabilities only appear when listing
/// state dumps; they render as `.cap` pseudo-syntax, which [`assemble`]
/// rejects — capabilities are unforgeable, so no text can denote one.
pub fn disassemble_word(w: &Word) -> String {
    match w {
        Word::Nat(n) => format!(".word {n}"),
        Word::Insn(i) => i.to_string(),
        Word::Cap(c) => format!(".cap {c}"),
    }
}
