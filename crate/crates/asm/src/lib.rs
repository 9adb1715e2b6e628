//! Two-pass macro assembler and disassembler for machine images.
//!
//! Source is line oriented; `;` or `#` starts a comment. A line carries an
//! optional `name:` label followed by one instruction or directive:
//!
//! ```text
//! .m 8               ; general-purpose register count (default 31)
//! .entry main        ; boot pc cursor: label or number (default 0)
//! .org 32            ; move the location counter
//! .equ EXIT 63       ; named constant, usable wherever a number is
//! main: li r2 EXIT   ; labels resolve to absolute word addresses
//! .word 7            ; emit one number cell
//!
//! .macro aim cap at  ; textual macro with parameters
//! li r1 at
//! scc cap r1
//! .endm
//! aim r2 EXIT
//! ```
//!
//! Pass one expands macros and lays out addresses; pass two resolves
//! symbols and encodes instructions. Labels defined inside a macro body
//! are local: each expansion rewrites them with a fresh number, so two
//! expansions never collide and the names are invisible outside.
//!
//! Capabilities cannot be written down. The `.cap` pseudo-syntax that
//! [`disassemble_word`] emits when listing state dumps is rejected on
//! assembly, matching the machine's unforgeability rule.

mod emit;
mod expand;
mod scan;

pub use emit::{assemble, disassemble, disassemble_word};

/// Assembly failure, pinned to a source position.
///
/// Errors inside a macro body report the body line (where the offending
/// text lives); a recursive or misapplied invocation reports the call
/// site.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {col}: {msg}")]
pub struct AsmError {
    /// 1-based source line.
    pub line: usize,
    /// 1-based column of the offending token.
    pub col: usize,
    pub msg: String,
}

impl AsmError {
    fn new(line: usize, col: usize, msg: impl Into<String>) -> AsmError {
        AsmError { line, col, msg: msg.into() }
    }
}
