//! Assembler feature and diagnostic coverage: layout, symbols,
//! directives, macros, and the exact line/column every error pins.

use capstone_asm::{assemble, AsmError};
use capstone_machine::{Insn, Machine, MachineConfig, Scheduler, StopReason, Word};

fn cells(src: &str) -> Vec<(u64, Word)> {
    assemble(src).unwrap().cells
}

fn err(src: &str) -> AsmError {
    assemble(src).unwrap_err()
}

fn insn(text: &str) -> Word {
    Word::Insn(Insn::parse(text, 31).unwrap())
}

#[test]
fn straight_line_program_lays_out_from_zero() {
    let img = assemble("li r1 5\njmp r1\n").unwrap();
    assert_eq!(img.m, 31);
    assert_eq!(img.entry, 0);
    assert_eq!(img.cells, vec![(0, insn("li r1 5")), (1, insn("jmp r1"))]);
}

#[test]
fn entry_accepts_forward_label() {
    let src = "\
.entry main
li r1 1
main: li r1 data
jmp r1
data: .word 7
";
    let img = assemble(src).unwrap();
    assert_eq!(img.entry, 1);
    assert_eq!(img.cells[1], (1, insn("li r1 3")));
    assert_eq!(img.cells[3], (3, Word::Nat(7)));
}

#[test]
fn label_as_li_immediate_matches_hand_layout() {
    let src = "\
.org 10
main: li r1 buf
jmp r1
buf: .word 0
";
    // Hand layout: main = 10, jmp at 11, buf = 12.
    let img = assemble(src).unwrap();
    assert_eq!(img.cells[0], (10, insn("li r1 12")));
    assert_eq!(img.cells[2], (12, Word::Nat(0)));
}

#[test]
fn backward_references_resolve() {
    let src = "\
loop: add r1 r2
jnz r1 r1
li r3 loop
";
    assert_eq!(cells(src)[2], (2, insn("li r3 0")));
}

#[test]
fn equ_constants_feed_org_word_and_immediates() {
    let src = "\
.equ BASE 0x20
.equ SIZE 4
.equ ALSO BASE
.org BASE
li r1 SIZE
.org 0x30
.word ALSO
";
    let img = assemble(src).unwrap();
    assert_eq!(img.cells, vec![(0x20, insn("li r1 4")), (0x30, Word::Nat(0x20))]);
}

#[test]
fn org_may_move_backwards_into_a_gap() {
    let src = "\
.org 8
li r1 1
.org 2
li r2 2
";
    assert_eq!(cells(src), vec![(2, insn("li r2 2")), (8, insn("li r1 1"))]);
}

#[test]
fn labels_may_share_a_line_with_their_instruction_or_stand_alone() {
    let src = "\
a: b:
c: li r1 c
";
    let img = assemble(src).unwrap();
    // All three labels bind to address 0.
    assert_eq!(img.cells, vec![(0, insn("li r1 0"))]);
}

#[test]
fn m_directive_bounds_the_register_namespace() {
    assert_eq!(assemble(".m 4\nli r4 1\n").unwrap().m, 4);

    let e = err(".m 4\nli r5 1\n");
    assert_eq!((e.line, e.col), (2, 4));
    assert!(e.msg.contains("out of range") && e.msg.contains("r1..r4"), "{e}");

    let e = err(".m 0\n");
    assert!(e.msg.contains("1..=253"), "{e}");
}

#[test]
fn duplicate_label_reports_both_sites() {
    let e = err("a: li r1 1\na: li r1 2\n");
    assert_eq!((e.line, e.col), (2, 1));
    assert!(e.msg.contains("duplicate symbol `a`") && e.msg.contains("line 1"), "{e}");
}

#[test]
fn undefined_symbol_is_named_with_position() {
    let e = err("li r1 nowhere\n");
    assert_eq!((e.line, e.col), (1, 7));
    assert_eq!(e.msg, "undefined symbol `nowhere`");
    assert_eq!(e.to_string(), "line 1, column 7: undefined symbol `nowhere`");
}

#[test]
fn directive_misuse_is_rejected() {
    assert!(err(".frob 1\n").msg.contains("unknown directive `.frob`"));
    assert!(err(".m 8\n.m 8\n").msg.contains("duplicate `.m`"));
    assert!(err(".entry 0\n.entry 1\n").msg.contains("duplicate `.entry`"));
    assert!(err(".word\n").msg.contains("takes 1 operand(s), got 0"));
    assert!(err(".equ X\n").msg.contains("takes 2 operand(s), got 1"));

    // `.org` steers layout, so it cannot wait for a forward label.
    let e = err(".org later\nlater: li r1 1\n");
    assert!(e.msg.contains("already-defined symbol"), "{e}");

    let e = err(".org 3\nli r1 1\n.org 3\nli r2 2\n");
    assert_eq!(e.line, 4);
    assert!(e.msg.contains("address 3 assigned twice") && e.msg.contains("line 2"), "{e}");
}

#[test]
fn operand_diagnostics_point_at_the_operand() {
    let e = err("main: jmp main\n");
    assert_eq!((e.line, e.col), (1, 11));
    assert!(e.msg.contains("`main` is not a register"), "{e}");

    let e = err("frob r1\n");
    assert_eq!((e.line, e.col), (1, 1));
    assert!(e.msg.contains("unknown mnemonic `frob`"), "{e}");

    let e = err("mov r1\n");
    assert!(e.msg.contains("`mov` takes 2 operand(s), got 1"), "{e}");

    let e = err("li r1 3x\n");
    assert!(e.msg.contains("bad operand `3x`"), "{e}");
}

#[test]
fn reserved_names_cannot_be_defined() {
    assert!(err("pc: li r1 1\n").msg.contains("reserved (a register name)"));
    assert!(err(".equ ld 3\n").msg.contains("reserved (an instruction mnemonic)"));
    // Register syntax is reserved wholesale, beyond the current `.m`.
    assert!(err(".m 4\nr7: li r1 1\n").msg.contains("reserved (a register name)"));
}

#[test]
fn comments_blanks_hex_and_negatives() {
    let src = "\
; full-line comment

li r1 -1   # tail comment
li r2 0x10
";
    let img = assemble(src).unwrap();
    assert_eq!(img.cells[0].1, Word::Insn(Insn::Li { r: 3, imm: u64::MAX }));
    assert_eq!(img.cells[1].1, Word::Insn(Insn::Li { r: 4, imm: 16 }));
}

#[test]
fn cap_pseudo_syntax_is_rejected() {
    let e = err(".cap LIN[0,4)@0 RWX n1\n");
    assert!(e.msg.contains("capability literals cannot be assembled"), "{e}");
}

#[test]
fn macro_parameters_substitute_textually() {
    let src = "\
.macro put rg val
li rg val
.endm
put r3 9
put r4 0x10
";
    assert_eq!(cells(src), vec![(0, insn("li r3 9")), (1, insn("li r4 16"))]);
}

#[test]
fn macro_labels_are_local_to_each_expansion() {
    let src = "\
.macro spin k
here: li r1 here
li r2 k
.endm
spin 10
spin 20
here: .word 5
li r5 here
";
    let img = assemble(src).unwrap();
    // Each expansion's `here` is its own address; the outer `here` is a
    // third, untouched symbol.
    assert_eq!(img.cells[0], (0, insn("li r1 0")));
    assert_eq!(img.cells[1], (1, insn("li r2 10")));
    assert_eq!(img.cells[2], (2, insn("li r1 2")));
    assert_eq!(img.cells[3], (3, insn("li r2 20")));
    assert_eq!(img.cells[4], (4, Word::Nat(5)));
    assert_eq!(img.cells[5], (5, insn("li r5 4")));
}

#[test]
fn macros_may_invoke_macros_defined_later() {
    let src = "\
.macro two
one
li r2 2
.endm
.macro one
li r1 1
.endm
two
";
    assert_eq!(cells(src), vec![(0, insn("li r1 1")), (1, insn("li r2 2"))]);
}

#[test]
fn recursive_macros_are_rejected() {
    let e = err(".macro a\na\n.endm\na\n");
    assert_eq!((e.line, e.col), (2, 1));
    assert!(e.msg.contains("recursive expansion of macro `a`"), "{e}");

    let e = err(".macro a\nb\n.endm\n.macro b\na\n.endm\na\n");
    assert!(e.msg.contains("recursive expansion of macro `a`"), "{e}");
    assert_eq!(e.line, 5);
}

#[test]
fn macro_arity_is_checked() {
    let e = err(".macro put rg val\nli rg val\n.endm\nput r3\n");
    assert_eq!(e.line, 4);
    assert!(e.msg.contains("takes 2 argument(s), got 1"), "{e}");
}

#[test]
fn macro_structure_errors() {
    let e = err(".macro a\nli r1 1\n");
    assert_eq!(e.line, 1);
    assert!(e.msg.contains("never closed"), "{e}");

    assert!(err(".endm\n").msg.contains("without an open `.macro`"));
    assert!(err(".macro a\n.macro b\n.endm\n.endm\n").msg.contains("cannot nest"));
    assert!(err(".macro a\n.endm\n.macro a\n.endm\n").msg.contains("already defined"));
    assert!(err("li r1 1 .endm\n").msg.contains("must start its line"));
    assert!(err(".macro put rg rg\n.endm\n").msg.contains("duplicate macro parameter"));
    assert!(err(".macro jmp\n.endm\n").msg.contains("reserved"));
}

#[test]
fn label_before_invocation_binds_at_expansion_start() {
    let src = "\
.macro put2
li r1 1
li r2 2
.endm
begin: put2
li r3 begin
";
    assert_eq!(cells(src)[2], (2, insn("li r3 0")));
}

#[test]
fn parameter_in_label_position_defines_the_callers_name() {
    let src = "\
.macro defat name
name: .word 0
.endm
defat buf
li r1 buf
";
    assert_eq!(cells(src), vec![(0, Word::Nat(0)), (1, insn("li r1 0"))]);
}

#[test]
fn assembly_is_deterministic() {
    let src = "\
.m 8
.entry main
main: li r1 buf
buf: .word 3
";
    let a = assemble(src).unwrap();
    let b = assemble(src).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn assembled_program_boots_and_exits() {
    // Carve the data half out of the boot window, aim it at the exit
    // cell, and store: the machine halts with the stored value.
    let src = "\
.m 8
.entry main
.equ EXIT 63
.equ CUT 32
main:
li r1 CUT
split pc r2 r1
li r1 EXIT
scc r2 r1
li r1 7
sd r2 r1
";
    let img = assemble(src).unwrap();
    let mut m = Machine::boot(&img, MachineConfig::small(64, 8)).unwrap();
    let mut sched = Scheduler::round_robin();
    let out = m.run(&mut sched, 100, |_, _| {});
    assert!(matches!(out.stop, StopReason::GuestExit));
    assert_eq!(out.exit, Some(7));
    assert_eq!(out.steps, 6);
}
