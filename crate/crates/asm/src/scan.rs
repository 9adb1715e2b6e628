//! Line scanner: comments, whitespace, token columns.

/// One whitespace-delimited token with its 1-based source column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub col: usize,
}

/// One non-empty source line after comment stripping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub num: usize,
    pub toks: Vec<Token>,
}

/// Split source into token lines. Comments run from `;` or `#` to the end
/// of the line; blank lines disappear.
pub fn scan(src: &str) -> Vec<Line> {
    let mut lines = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let body = match raw.find([';', '#']) {
            Some(cut) => &raw[..cut],
            None => raw,
        };
        let mut toks = Vec::new();
        let mut start: Option<usize> = None;
        for (pos, ch) in body.char_indices().chain([(body.len(), ' ')]) {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    toks.push(Token { text: body[s..pos].to_string(), col: s + 1 });
                }
            } else if start.is_none() {
                start = Some(pos);
            }
        }
        if !toks.is_empty() {
            lines.push(Line { num: i + 1, toks });
        }
    }
    lines
}

/// Symbol syntax: a letter or underscore, then letters, digits,
/// underscores. The expander's `name@N` locals are deliberately not
/// idents, so user source can never capture them.
pub fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Expander-generated local label, `name@N`. Valid in the symbol table,
/// impossible to define by hand.
pub(crate) fn is_local(s: &str) -> bool {
    s.split_once('@')
        .is_some_and(|(base, n)| is_ident(base) && !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Does the token look like a register, whatever the machine's width?
/// Used both to reserve the namespace and to distinguish "register out of
/// range" from "undefined symbol" in diagnostics.
pub fn reg_like(s: &str) -> bool {
    matches!(s, "pc" | "epc" | "ret")
        || s.strip_prefix('r')
            .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

pub(crate) const MNEMONICS: &[&str] = &[
    "mov", "ld", "sd", "tighten", "shrink", "split", "delin", "scc", "lcc", "revoke", "mrev",
    "init", "drop", "seal", "call", "return", "retseal", "except", "jmp", "jnz", "li", "add",
    "lt", "invalid",
];

/// Why a name cannot be defined as a symbol or macro, if it cannot.
pub fn reserved(name: &str) -> Option<&'static str> {
    if reg_like(name) {
        Some("a register name")
    } else if MNEMONICS.contains(&name) {
        Some("an instruction mnemonic")
    } else {
        None
    }
}
