//! Deriving abstract action lists from concrete steps.
//!
//! For every scheduled step the checker re-executes a pristine copy of the
//! machine (with any deliberate mutation disabled) and explains the change
//! between the two refinement images as a sequence of abstract actions:
//! loads first, then the revocation bookkeeping, ownership moves, splits,
//! shrinks, discards, claims and finally stores. The sequence is replayed
//! against a scratch state as it is built, so an emitted action whose guard
//! fails is reported immediately instead of producing a bogus trace.

use capstone_machine::insn::Insn;
use capstone_machine::sched::ScheduleDecision;
use capstone_machine::state::Machine;
use capstone_machine::word::{CapType, Word};

use crate::abs::{AbsWord, Action, DomClass, PState, Range};
use crate::realms::{refines, RealmSpec};

const CLASSES: [DomClass; 3] = [DomClass::User, DomClass::Sup, DomClass::Sub];

/// Instruction details the diff alone cannot recover.
#[derive(Debug, Default, Clone)]
pub struct InsnInfo {
    /// Successful `ld`: the address read and the word observed there.
    pub load: Option<(u64, Word)>,
    /// Successful `revoke`: the capability's range and whether the result
    /// came back uninitialized.
    pub revoke: Option<(Range, bool)>,
}

/// Outcome of executing one decision on a pristine copy of the machine.
pub struct RefStep {
    pub post: Machine,
    pub faulted: bool,
    pub acting: DomClass,
    pub info: InsnInfo,
}

/// Execute `dec` on a clone of `pre` with mutations disabled.
pub fn reference_step(pre: &Machine, dec: ScheduleDecision, spec: &RealmSpec) -> RefStep {
    let mut post = pre.clone();
    post.config.mutation = None;
    let report = post.step(dec);
    let k = dec.thread;
    let mut info = InsnInfo::default();
    if !report.faulted {
        match report.insn {
            Some(Insn::Ld { rs, .. }) => {
                if let Some(c) = pre.reg(k, rs as usize).as_cap() {
                    let addr = c.cursor;
                    if let Some(w) = pre.mem.get(addr as usize) {
                        info.load = Some((addr, *w));
                    }
                }
            }
            Some(Insn::Revoke { r }) => {
                if let Some(c) = pre.reg(k, r as usize).as_cap() {
                    let uninit = matches!(
                        post.reg(k, r as usize),
                        Word::Cap(c2) if c2.ty == CapType::Uninit
                    );
                    info.revoke = Some(((c.base, c.end), uninit));
                }
            }
            _ => {}
        }
    }
    RefStep {
        post,
        faulted: report.faulted,
        acting: spec.classify(report.domain),
        info,
    }
}

fn emit(
    scratch: &mut PState,
    out: &mut Vec<(DomClass, Action)>,
    who: DomClass,
    act: Action,
) -> Result<(), String> {
    scratch
        .apply(who, &act)
        .map_err(|e| format!("synthesized action {act} by {who} rejected: {e}"))?;
    out.push((who, act));
    Ok(())
}

/// Maximal contiguous runs of a sorted address list.
fn runs(addrs: &[u64]) -> Vec<Range> {
    let mut out: Vec<Range> = Vec::new();
    for &a in addrs {
        match out.last_mut() {
            Some(r) if r.1 == a => r.1 = a + 1,
            _ => out.push((a, a + 1)),
        }
    }
    out
}

/// Explain `post − pre` as abstract actions taken by `who`.
pub fn synthesize(
    pre: &PState,
    post: &PState,
    who: DomClass,
    info: &InsnInfo,
) -> Result<Vec<(DomClass, Action)>, String> {
    let mut scratch = pre.clone();
    let mut out: Vec<(DomClass, Action)> = Vec::new();

    // Loads observe the pre-state; flavor follows who owns the address.
    if let Some((addr, payload)) = info.load {
        let act = match scratch.owner(addr) {
            Some(c) if c == who => Action::LoadLinear { addr, payload },
            None => Action::Load { addr, payload },
            Some(c) => {
                return Err(format!("load from address {addr} which {c} owns, acting {who}"));
            }
        };
        emit(&mut scratch, &mut out, who, act)?;
    }

    // A revocation that wrests owned memory: descendants discard their
    // doomed ranges, then the actor revokes. An uninitialized result is not
    // exclusively owned afterwards, so the actor immediately discards the
    // range it just gained. A revocation whose range was provably unowned
    // resurfaces as a plain claim through the generic diff instead.
    if let Some((range, result_uninit)) = info.revoke {
        let exact_elsewhere = CLASSES
            .iter()
            .any(|&c| c != who && scratch.class(c).contains(&range));
        if result_uninit || exact_elsewhere {
            for c in CLASSES {
                let victims: Vec<Range> = scratch
                    .class(c)
                    .iter()
                    .filter(|&&r| r != range && !post.class(c).contains(&r))
                    .copied()
                    .collect();
                for r in victims {
                    emit(&mut scratch, &mut out, c, Action::Discard { range: r })?;
                }
            }
            emit(&mut scratch, &mut out, who, Action::Revoke { range })?;
            if !post.class(who).contains(&range) {
                emit(&mut scratch, &mut out, who, Action::Discard { range })?;
            }
        }
    }

    // Identical ranges that left one class and appeared in another moved.
    for from in CLASSES {
        for to in CLASSES {
            if from == to {
                continue;
            }
            let moved: Vec<Range> = scratch
                .class(from)
                .iter()
                .filter(|&r| {
                    !post.class(from).contains(r)
                        && post.class(to).contains(r)
                        && !scratch.class(to).contains(r)
                })
                .copied()
                .collect();
            for r in moved {
                emit(&mut scratch, &mut out, from, Action::Send { range: r, to })?;
            }
        }
    }

    // Whatever still leaves a class either split in two, shrank, or was
    // discarded outright.
    for c in CLASSES {
        let removed: Vec<Range> = scratch
            .class(c)
            .iter()
            .filter(|r| !post.class(c).contains(r))
            .copied()
            .collect();
        for r in removed {
            let fresh = |x: &Range| post.class(c).contains(x) && !scratch.class(c).contains(x);
            let split_at = post
                .class(c)
                .iter()
                .find(|&&(hb, he)| hb == r.0 && he < r.1 && fresh(&(hb, he)) && fresh(&(he, r.1)))
                .map(|&(_, he)| he);
            if let Some(at) = split_at {
                emit(&mut scratch, &mut out, c, Action::Split { range: r, at })?;
                continue;
            }
            let shrink_to = post
                .class(c)
                .iter()
                .find(|&&(tb, te)| r.0 <= tb && te <= r.1 && fresh(&(tb, te)))
                .copied();
            if let Some(to) = shrink_to {
                emit(&mut scratch, &mut out, c, Action::Shrink { range: r, to })?;
                continue;
            }
            emit(&mut scratch, &mut out, c, Action::Discard { range: r })?;
        }
    }

    // Ranges that appeared from nowhere were unowned and get claimed.
    for c in CLASSES {
        let claims: Vec<Range> = post
            .class(c)
            .iter()
            .filter(|r| !scratch.class(c).contains(r))
            .copied()
            .collect();
        for r in claims {
            emit(&mut scratch, &mut out, c, Action::Claim { range: r })?;
        }
    }

    // Memory newly masked outside any revoked range: an uninitialized
    // capability moved somewhere its unwritten suffix is newly visible.
    // Re-assert the revocation, then drop the ownership the revoke rule
    // grants, since an uninitialized range is not exclusively held.
    let masked: Vec<u64> = (0..post.mem.len() as u64)
        .filter(|&a| {
            post.mem[a as usize] == AbsWord::Uninit
                && matches!(scratch.mem[a as usize], AbsWord::Val(_))
        })
        .collect();
    for range in runs(&masked) {
        emit(&mut scratch, &mut out, who, Action::Revoke { range })?;
        if !post.class(who).contains(&range) {
            emit(&mut scratch, &mut out, who, Action::Discard { range })?;
        }
    }

    // Every remaining memory change is a store by the acting domain.
    for a in 0..post.mem.len() {
        let want = post.mem[a];
        if scratch.mem[a] == want {
            continue;
        }
        let AbsWord::Val(w) = want else {
            return Err(format!("address {a} became uninit with no revocation"));
        };
        let addr = a as u64;
        let act = match scratch.owner(addr) {
            Some(c) if c == who => Action::StoreLinear { addr, payload: w },
            None => Action::Store { addr, payload: w },
            Some(c) => {
                return Err(format!("address {addr} owned by {c} changed while {who} acted"));
            }
        };
        emit(&mut scratch, &mut out, who, act)?;
    }

    if &scratch != post {
        return Err("synthesized actions do not reconcile the abstract states".into());
    }
    Ok(out)
}

/// The abstract actions explaining one scheduled step. Faulting steps map
/// to the empty list: a fault publishes nothing.
pub fn step_actions(
    m: &Machine,
    dec: ScheduleDecision,
    spec: &RealmSpec,
) -> Result<Vec<(DomClass, Action)>, String> {
    let r = reference_step(m, dec, spec);
    if r.faulted {
        return Ok(Vec::new());
    }
    let pre = refines(m, spec);
    let post = refines(&r.post, spec);
    synthesize(&pre, &post, r.acting, &r.info)
}
