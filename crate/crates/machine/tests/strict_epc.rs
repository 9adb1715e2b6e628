//! Pinned-epc mode: the exception pointer belongs to the thread, not to
//! any domain context. Context switches neither save nor restore it, and
//! overwriting an armed epc with anything but the identical word faults.

mod common;

use capstone_machine::*;
use common::*;

/// Strict-mode rig with a sealed handler context armed in the epc:
/// region [8,20) (domain 1), handler code capability over [48,64).
fn armed_rig() -> (Rig, Cap) {
    let mut r = rig_with(|c| c.strict_epc = true);
    r.cap(g(2), CapType::Lin, 8, 20, 8, Perm::Rwx);
    r.cap(g(4), CapType::Lin, 48, 64, 48, Perm::Rx);
    r.nat(g(1), 5);
    r.exec(Insn::Sd { rd: rb(2), rs: rb(4) });
    r.exec(Insn::Seal { r: rb(2) });
    r.exec(Insn::Mov { rd: EPC as RegId, rs: rb(2) });
    assert!(!r.faulted(), "arming an empty epc is allowed");
    let handler = r.regcap(EPC);
    assert_eq!(handler.ty, CapType::Sealed(1));
    (r, handler)
}

#[test]
fn arming_an_empty_epc_is_allowed_and_rearming_identically_too() {
    let (mut r, handler) = armed_rig();
    // Writing the very same word again is not an overwrite.
    r.m.write_reg(0, EPC, Word::Cap(handler));
    assert!(!r.faulted());
    assert_eq!(r.regcap(EPC), handler);
}

#[test]
fn overwriting_an_armed_epc_faults() {
    let (mut r, _) = armed_rig();
    r.exec(Insn::Li { r: EPC as RegId, imm: 9 });
    assert!(r.faulted(), "li into an armed epc");

    let (mut r, _) = armed_rig();
    r.cap(g(5), CapType::Lin, 40, 44, 40, Perm::Rw);
    r.exec(Insn::Mov { rd: EPC as RegId, rs: rb(5) });
    assert!(r.faulted(), "mov into an armed epc");
}

#[test]
fn epc_self_move_faults_in_strict_mode() {
    // mov epc epc writes the handler back (identical, fine) and then
    // voids the linear source — which is the same register, and zero is
    // not the armed word.
    let (mut r, _) = armed_rig();
    r.exec(Insn::Mov { rd: EPC as RegId, rs: EPC as RegId });
    assert!(r.faulted());
}

#[test]
fn effects_before_the_guarded_write_persist() {
    // ld into an armed epc: the memory cell is vacated, then the register
    // write is rejected and the step faults.
    let (mut r, _) = armed_rig();
    r.cap(g(5), CapType::Lin, 24, 28, 24, Perm::Rw);
    r.m.write_mem(24, Word::Nat(9));
    r.exec(Insn::Ld { rd: EPC as RegId, rs: rb(5) });
    assert!(r.faulted());
    assert_eq!(r.m.mem[24], Word::Nat(9), "numbers are not voided");
    r.m.verify_refcounts().unwrap();
}

#[test]
fn calls_save_a_zero_epc_slot_and_keep_the_thread_arming() {
    // A second sealed context to call into: region [20,32), domain 2.
    let (mut r, handler) = armed_rig();
    r.cap(g(3), CapType::Lin, 20, 32, 20, Perm::Rw);
    r.cap(g(5), CapType::Lin, 48, 64, 48, Perm::Rx);
    r.exec(Insn::Sd { rd: rb(3), rs: rb(5) });
    r.exec(Insn::Seal { r: rb(3) });
    r.exec(Insn::Call { rd: rb(3), rs: rb(1) });
    assert!(!r.faulted());
    assert_eq!(r.m.threads[0].domain, 2);
    assert_eq!(r.m.mem[22], Word::ZERO, "saved context has no epc");
    assert_eq!(r.regcap(EPC), handler, "the callee inherits the armed epc");
}

#[test]
fn context_loads_do_not_touch_the_epc() {
    let (mut r, handler) = armed_rig();
    r.cap(g(3), CapType::Lin, 20, 32, 20, Perm::Rw);
    r.cap(g(5), CapType::Lin, 48, 64, 48, Perm::Rx);
    r.exec(Insn::Sd { rd: rb(3), rs: rb(5) });
    // Poison the to-be-loaded epc slot: it must be ignored.
    r.m.write_mem(22, Word::Nat(1234));
    r.exec(Insn::Seal { r: rb(3) });
    r.exec(Insn::Call { rd: rb(3), rs: rb(1) });
    assert!(!r.faulted());
    assert_eq!(r.regcap(EPC), handler, "loaded epc slot is skipped");
}

#[test]
fn exception_handler_stays_armed_and_can_rearm_via_retseal() {
    let (mut r, handler) = armed_rig();
    // Take the exception: the handler runs with the epc still pinned.
    r.exec(Insn::Except { r: rb(1) });
    assert!(!r.faulted());
    assert_eq!(r.m.threads[0].domain, 1);
    assert_eq!(r.regcap(EPC), handler, "epc survives the switch");
    assert_eq!(r.regcap(RET).ty, CapType::SealedRet(0, EPC as u8));

    // Handler suspends itself: retseal writes Sealed(1) into the caller's
    // epc — bit-identical to the armed word, so the guard admits it.
    r.nat(g(1), 48);
    r.exec(Insn::Retseal { rd: RET as RegId, rs: rb(1) });
    assert!(!r.faulted(), "identical re-arm is allowed");
    assert_eq!(r.m.threads[0].domain, 0);
    assert_eq!(r.regcap(EPC), handler, "epc re-armed for the next exception");

    // And the cycle works a second time.
    r.exec(Insn::Except { r: rb(1) });
    assert!(!r.faulted());
    assert_eq!(r.m.threads[0].domain, 1);
}

#[test]
fn plain_return_from_a_handler_faults_in_strict_mode() {
    // return delivers its payload to the recorded register — the epc —
    // and a payload is never identical to the armed handler.
    let (mut r, _) = armed_rig();
    r.exec(Insn::Except { r: rb(1) });
    r.nat(g(1), 7);
    r.exec(Insn::Return { rd: RET as RegId, rs: rb(1) });
    assert!(r.faulted(), "handlers must retseal, not return");
}

#[test]
fn default_mode_saves_and_restores_the_epc() {
    // The same flow without strict mode: except consumes the handler and
    // return lands the payload in the epc.
    let mut r = rig();
    r.cap(g(2), CapType::Lin, 8, 20, 8, Perm::Rwx);
    r.cap(g(4), CapType::Lin, 48, 64, 48, Perm::Rx);
    r.nat(g(1), 5);
    r.exec(Insn::Sd { rd: rb(2), rs: rb(4) });
    r.exec(Insn::Seal { r: rb(2) });
    r.exec(Insn::Mov { rd: EPC as RegId, rs: rb(2) });
    r.exec(Insn::Except { r: rb(1) });
    assert!(!r.faulted());
    assert_eq!(r.reg(EPC), Word::ZERO, "handler's own epc loads empty");
    r.nat(g(1), 7);
    r.exec(Insn::Return { rd: RET as RegId, rs: rb(1) });
    assert!(!r.faulted());
    assert_eq!(r.reg(EPC), Word::Nat(7), "payload lands in the epc");
}
