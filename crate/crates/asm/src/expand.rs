//! Macro collection and hygienic expansion.

use std::collections::{HashMap, HashSet};

use crate::scan::{is_ident, reserved, Line, Token};
use crate::AsmError;

struct MacroDef {
    params: Vec<String>,
    body: Vec<Line>,
}

fn is_label_def(text: &str) -> bool {
    text.len() > 1 && text.ends_with(':')
}

/// Collect `.macro name params… / body / .endm` blocks, then substitute
/// every invocation. Parameters replace matching tokens textually. Labels
/// defined in a body are locals: each expansion renames them `name@N`
/// with a fresh `N`, so expansions cannot collide with each other or with
/// outside labels (`@` is not valid in user identifiers). Macros may
/// invoke other macros but never themselves, directly or transitively.
pub fn expand(lines: Vec<Line>) -> Result<Vec<Line>, AsmError> {
    let (defs, rest) = collect(lines)?;
    let mut out = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut counter = 0usize;
    for line in rest {
        expand_into(line, &defs, &mut out, &mut stack, &mut counter)?;
    }
    Ok(out)
}

fn collect(lines: Vec<Line>) -> Result<(HashMap<String, MacroDef>, Vec<Line>), AsmError> {
    let mut defs: HashMap<String, MacroDef> = HashMap::new();
    let mut rest = Vec::new();
    // (name, definition under construction, line of its `.macro`)
    let mut open: Option<(String, MacroDef, usize)> = None;

    for line in lines {
        let head = line.toks[0].clone();
        // Catching a misplaced `.macro`/`.endm` here beats the opaque
        // operand error it would produce downstream.
        if let Some(mis) = line.toks[1..]
            .iter()
            .find(|t| t.text == ".macro" || t.text == ".endm")
        {
            return Err(AsmError::new(
                line.num,
                mis.col,
                format!("`{}` must start its line", mis.text),
            ));
        }
        match head.text.as_str() {
            ".macro" => {
                if let Some((name, _, at)) = &open {
                    return Err(AsmError::new(
                        line.num,
                        head.col,
                        format!("`.macro` inside `.macro {name}` (line {at}); definitions cannot nest"),
                    ));
                }
                let (name, params) = macro_signature(&line)?;
                if defs.contains_key(&name) {
                    return Err(AsmError::new(
                        line.num,
                        line.toks[1].col,
                        format!("macro `{name}` is already defined"),
                    ));
                }
                open = Some((name, MacroDef { params, body: Vec::new() }, line.num));
            }
            ".endm" => match open.take() {
                Some((name, def, _)) => {
                    defs.insert(name, def);
                }
                None => {
                    return Err(AsmError::new(
                        line.num,
                        head.col,
                        "`.endm` without an open `.macro`",
                    ))
                }
            },
            _ => match &mut open {
                Some((_, def, _)) => def.body.push(line),
                None => rest.push(line),
            },
        }
    }
    if let Some((name, _, at)) = open {
        return Err(AsmError::new(at, 1, format!("`.macro {name}` is never closed by `.endm`")));
    }
    Ok((defs, rest))
}

fn macro_signature(line: &Line) -> Result<(String, Vec<String>), AsmError> {
    let name_tok = line.toks.get(1).ok_or_else(|| {
        AsmError::new(line.num, line.toks[0].col, "`.macro` needs a name")
    })?;
    check_name(name_tok, line.num, "macro name")?;
    let mut params = Vec::new();
    for p in &line.toks[2..] {
        check_name(p, line.num, "macro parameter")?;
        if params.contains(&p.text) {
            return Err(AsmError::new(
                line.num,
                p.col,
                format!("duplicate macro parameter `{}`", p.text),
            ));
        }
        params.push(p.text.clone());
    }
    Ok((name_tok.text.clone(), params))
}

fn check_name(tok: &Token, line: usize, what: &str) -> Result<(), AsmError> {
    if !is_ident(&tok.text) {
        return Err(AsmError::new(line, tok.col, format!("bad {what} `{}`", tok.text)));
    }
    if let Some(why) = reserved(&tok.text) {
        return Err(AsmError::new(
            line,
            tok.col,
            format!("`{}` is reserved ({why})", tok.text),
        ));
    }
    Ok(())
}

fn expand_into(
    line: Line,
    defs: &HashMap<String, MacroDef>,
    out: &mut Vec<Line>,
    stack: &mut Vec<String>,
    counter: &mut usize,
) -> Result<(), AsmError> {
    // Peel leading labels so `entry: push 7` binds the label, then expands.
    let mut toks = line.toks;
    let mut split = 0;
    while split < toks.len() && is_label_def(&toks[split].text) {
        split += 1;
    }
    if split > 0 {
        let labels: Vec<Token> = toks.drain(..split).collect();
        out.push(Line { num: line.num, toks: labels });
    }
    let Some(head) = toks.first().cloned() else { return Ok(()) };
    let Some(def) = defs.get(&head.text) else {
        out.push(Line { num: line.num, toks });
        return Ok(());
    };

    if stack.iter().any(|name| *name == head.text) {
        return Err(AsmError::new(
            line.num,
            head.col,
            format!("recursive expansion of macro `{}`", head.text),
        ));
    }
    let args = &toks[1..];
    if args.len() != def.params.len() {
        return Err(AsmError::new(
            line.num,
            head.col,
            format!(
                "macro `{}` takes {} argument(s), got {}",
                head.text,
                def.params.len(),
                args.len()
            ),
        ));
    }

    *counter += 1;
    let n = *counter;
    // Reserved names stay out of the renaming set: a stray `pc:` in a
    // body must surface as the usual reserved-name error, not silently
    // rename every `pc` register reference.
    let locals: HashSet<&str> = def
        .body
        .iter()
        .flat_map(|l| l.toks.iter())
        .filter(|t| is_label_def(&t.text))
        .filter_map(|t| t.text.strip_suffix(':'))
        .filter(|name| reserved(name).is_none())
        .collect();

    stack.push(head.text.clone());
    for body_line in &def.body {
        let rewritten = body_line
            .toks
            .iter()
            .map(|t| rewrite(t, &def.params, args, &locals, n))
            .collect();
        expand_into(Line { num: body_line.num, toks: rewritten }, defs, out, stack, counter)?;
    }
    stack.pop();
    Ok(())
}

fn rewrite(
    tok: &Token,
    params: &[String],
    args: &[Token],
    locals: &HashSet<&str>,
    n: usize,
) -> Token {
    let (name, is_def) = match tok.text.strip_suffix(':') {
        Some(base) => (base, true),
        None => (tok.text.as_str(), false),
    };
    // A parameter used in label position defines whatever the caller
    // passed, so parameters take precedence over the local renaming.
    let new = if let Some(i) = params.iter().position(|p| p == name) {
        args[i].text.clone()
    } else if locals.contains(name) {
        format!("{name}@{n}")
    } else {
        return tok.clone();
    };
    Token {
        text: if is_def { format!("{new}:") } else { new },
        col: tok.col,
    }
}
