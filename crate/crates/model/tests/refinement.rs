//! Contexts, closures, realms and the refinement mapping on hand-built
//! machine states.

use std::collections::BTreeSet;

use capstone_machine::image::Image;
use capstone_machine::state::{Machine, MachineConfig, Thread, ThreadState, EPC, GPR, PC, RET};
use capstone_machine::word::{Cap, CapType, Perm, Word};
use capstone_model::{
    cap_closure, ctx, domains, ranges, realm, refines, sub_ok, sub_ok_report, wf, wf_report,
    woranges, xrealm, AbsWord, RealmSpec,
};
use capstone_revtree::NodeKind;

fn machine(mem: usize) -> Machine {
    Machine::new(MachineConfig::small(mem, 8))
}

fn add_thread(m: &mut Machine, domain: u64) -> usize {
    let regs = vec![Word::ZERO; m.config.reg_count()];
    m.threads.push(Thread {
        state: ThreadState::Running(regs),
        domain,
    });
    m.threads.len() - 1
}

fn cap(m: &mut Machine, ty: CapType, base: u64, end: u64) -> Cap {
    let node = m.tree.alloc_root().unwrap();
    if ty == CapType::Non {
        m.tree.set_kind(node, NodeKind::RNon);
    }
    Cap {
        ty,
        base,
        end,
        cursor: base,
        perm: Perm::Rwx,
        node,
    }
}

fn user_spec() -> RealmSpec {
    RealmSpec {
        user: 0,
        subs: BTreeSet::new(),
    }
}

#[test]
fn booted_machine_refines_to_full_user_ownership() {
    let m = Machine::boot(&Image::new(8, 0), MachineConfig::small(64, 8)).unwrap();
    let spec = RealmSpec::for_machine(&m);
    let p = refines(&m, &spec);
    assert_eq!(p.user.iter().copied().collect::<Vec<_>>(), vec![(0, 64)]);
    assert!(p.sup.is_empty());
    assert!(p.sub.is_empty());
    assert!(p.mem.iter().all(|w| matches!(w, AbsWord::Val(_))));
}

#[test]
fn woranges_cover_the_unwritten_suffix() {
    let mut m = machine(64);
    let mut c = cap(&mut m, CapType::Uninit, 0, 4);
    c.cursor = 2;
    assert_eq!(
        woranges(&[c]).into_iter().collect::<Vec<_>>(),
        vec![(2, 4)]
    );
    c.cursor = 4;
    assert!(woranges(&[c]).is_empty());
}

#[test]
fn ctx_of_running_domain_is_its_register_file() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 7);
    m.write_reg(k, GPR, Word::Nat(123));
    let words = ctx(&m, 7);
    assert_eq!(words.len(), m.config.reg_count());
    assert_eq!(words[GPR], Word::Nat(123));
}

#[test]
fn ctx_of_sealed_domain_reads_the_region_slots() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    // Region at 16: slot 0 = pc, slot 1 reserved, slot 2 = epc, slot 3 =
    // ret, slots 4.. = r1 onwards.
    let words = m.config.context_words() as u64;
    m.write_mem(16, Word::Nat(100));
    m.write_mem(17, Word::Nat(999));
    m.write_mem(18, Word::Nat(102));
    m.write_mem(19, Word::Nat(103));
    for j in 4..words {
        m.write_mem(16 + j, Word::Nat(200 + j));
    }
    let sealed = Cap {
        ty: CapType::Sealed(5),
        ..cap(&mut m, CapType::Lin, 16, 16 + words)
    };
    m.write_reg(k, GPR, Word::Cap(sealed));
    let got = ctx(&m, 5);
    assert_eq!(got.len(), m.config.reg_count());
    assert_eq!(got[PC], Word::Nat(100));
    assert_eq!(got[EPC], Word::Nat(102));
    assert_eq!(got[RET], Word::Nat(103));
    assert_eq!(got[GPR], Word::Nat(204));
    assert!(got.iter().all(|w| *w != Word::Nat(999)));
    assert!(domains(&m).contains(&5));
}

#[test]
fn ctx_of_unknown_domain_is_empty() {
    let mut m = machine(64);
    add_thread(&mut m, 0);
    assert!(ctx(&m, 99).is_empty());
}

#[test]
fn closure_follows_linear_chains() {
    let mut m = machine(64);
    let outer = cap(&mut m, CapType::Lin, 8, 16);
    let inner = cap(&mut m, CapType::Lin, 32, 40);
    m.write_mem(10, Word::Cap(inner));
    let got = cap_closure(&m, &[outer], |t| t == CapType::Lin);
    assert_eq!(got.len(), 2);
    assert!(got.contains(&outer) && got.contains(&inner));
}

#[test]
fn closure_over_plain_words_is_just_the_seed() {
    let mut m = machine(64);
    let outer = cap(&mut m, CapType::Lin, 8, 16);
    m.write_mem(10, Word::Nat(77));
    let got = cap_closure(&m, &[outer], |t| t == CapType::Lin);
    assert_eq!(got, vec![outer]);
}

#[test]
fn non_linear_links_break_exclusive_chains() {
    let mut m = machine(64);
    let outer = cap(&mut m, CapType::Lin, 8, 16);
    let link = cap(&mut m, CapType::Non, 32, 40);
    let hidden = cap(&mut m, CapType::Lin, 48, 56);
    m.write_mem(10, Word::Cap(link));
    m.write_mem(35, Word::Cap(hidden));
    let exclusive = cap_closure(&m, &[outer, link], |t| t == CapType::Lin);
    assert_eq!(exclusive, vec![outer]);
    let shared = cap_closure(&m, &[outer, link], |t| {
        matches!(t, CapType::Lin | CapType::Non)
    });
    assert_eq!(shared.len(), 3);
}

#[test]
fn non_caps_join_the_realm_but_not_the_exclusive_realm() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    let shared = cap(&mut m, CapType::Non, 8, 16);
    m.write_reg(k, GPR, Word::Cap(shared));
    assert!(realm(&m, 0).contains(&shared));
    assert!(xrealm(&m, 0).is_empty());
}

#[test]
fn revoked_caps_drop_out_of_realms() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    let child = cap(&mut m, CapType::Lin, 8, 16);
    // Mint a revocation node above the capability, as `mrev` does.
    let rev_node = m.tree.alloc_mrev(child.node).unwrap();
    m.write_reg(k, GPR, Word::Cap(child));
    assert_eq!(ranges(&xrealm(&m, 0)).len(), 1);
    m.tree.revoke_subtree(rev_node);
    assert!(xrealm(&m, 0).is_empty());
}

#[test]
fn refines_masks_unwritten_revoked_memory() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    m.write_mem(34, Word::Nat(5));
    let recovered = cap(&mut m, CapType::Uninit, 32, 36);
    m.write_reg(k, GPR, Word::Cap(recovered));
    let p = refines(&m, &user_spec());
    for a in 32..36 {
        assert_eq!(p.mem[a], AbsWord::Uninit, "address {a}");
    }
    assert_eq!(p.mem[36], AbsWord::Val(Word::ZERO));
    // An uninitialized capability is not exclusive ownership.
    assert!(p.user.is_empty());
}

#[test]
fn refines_assigns_sealed_domain_holdings_to_their_class() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    let words = m.config.context_words() as u64;
    let payload = cap(&mut m, CapType::Lin, 40, 48);
    m.write_mem(16 + 4, Word::Cap(payload)); // r1 slot of the region
    let sealed = Cap {
        ty: CapType::Sealed(9),
        ..cap(&mut m, CapType::Lin, 16, 16 + words)
    };
    m.write_reg(k, GPR, Word::Cap(sealed));

    let p = refines(&m, &user_spec());
    assert!(p.sup.contains(&(40, 48)));
    assert!(p.user.is_empty());

    // The same domain designated subordinate moves the range instead.
    let spec = RealmSpec {
        user: 0,
        subs: [9].into_iter().collect(),
    };
    let p = refines(&m, &spec);
    assert!(p.sub.contains(&(40, 48)));
    assert!(p.sup.is_empty());
}

#[test]
fn wf_rejects_overlapping_linear_caps() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    let a = cap(&mut m, CapType::Lin, 0, 8);
    let b = cap(&mut m, CapType::Lin, 4, 12);
    m.write_reg(k, GPR, Word::Cap(a));
    m.write_reg(k, GPR + 1, Word::Cap(b));
    let err = wf_report(&m).unwrap_err();
    assert!(err.contains("overlaps"), "{err}");
}

#[test]
fn wf_exempts_revocation_and_shared_overlaps() {
    let mut m = machine(64);
    let k = add_thread(&mut m, 0);
    let lin = cap(&mut m, CapType::Lin, 0, 8);
    let rev = Cap {
        ty: CapType::Rev,
        ..cap(&mut m, CapType::Lin, 0, 8)
    };
    let non_a = cap(&mut m, CapType::Non, 16, 32);
    let non_b = cap(&mut m, CapType::Non, 20, 40);
    m.write_reg(k, GPR, Word::Cap(lin));
    m.write_reg(k, GPR + 1, Word::Cap(rev));
    m.write_reg(k, GPR + 2, Word::Cap(non_a));
    m.write_reg(k, GPR + 3, Word::Cap(non_b));
    assert!(wf(&m));

    // A shared capability overlapping a linear one is a violation.
    let bad = cap(&mut m, CapType::Non, 4, 12);
    m.write_reg(k, GPR + 4, Word::Cap(bad));
    assert!(!wf(&m));
}

#[test]
fn sub_ok_flags_rev_caps_over_the_user_realm() {
    let mut m = machine(64);
    let k_user = add_thread(&mut m, 0);
    let k_sub = add_thread(&mut m, 3);
    let owned = cap(&mut m, CapType::Lin, 0, 32);
    m.write_reg(k_user, GPR, Word::Cap(owned));
    let rev = Cap {
        ty: CapType::Rev,
        ..cap(&mut m, CapType::Lin, 8, 16)
    };
    m.write_reg(k_sub, GPR, Word::Cap(rev));
    let spec = RealmSpec {
        user: 0,
        subs: [3].into_iter().collect(),
    };
    let err = sub_ok_report(&m, &spec).unwrap_err();
    assert!(err.contains("sub domain 3"), "{err}");
    // Treating domain 3 as superordinate instead is fine.
    assert!(sub_ok(&m, &user_spec()));
    // So is a revocation capability over memory the user does not own.
    m.write_reg(k_sub, GPR, Word::ZERO);
    let elsewhere = Cap {
        ty: CapType::Rev,
        ..cap(&mut m, CapType::Lin, 40, 48)
    };
    m.write_reg(k_sub, GPR, Word::Cap(elsewhere));
    assert!(sub_ok(&m, &spec));
}
