//! Trace checking: concrete executions must refine the abstract model.
//!
//! The checker drives the machine under test one scheduled decision at a
//! time. Each decision is first executed on a pristine reference copy; the
//! two verdicts must agree (a step that faults publishes nothing, so a
//! fault on one side only is already a divergence). Successful steps are
//! explained as abstract actions, the actions are applied to the running
//! abstract state, and the result must equal the refinement image of the
//! machine under test — all under the structural invariants `wf` and
//! `sub_ok`. The first failure of any of these obligations is reported
//! with the step number and a reason; there are no silent skips.

use capstone_machine::sched::Scheduler;
use capstone_machine::state::Machine;
use serde::Serialize;

use crate::abs::{AbsWord, DomClass, PState};
use crate::realms::{refines, sub_ok_report, wf_report, RealmSpec};
use crate::synth::{reference_step, synthesize};

#[derive(Debug, Clone, Serialize)]
pub struct Divergence {
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckResult {
    Ok,
    Divergence,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub steps: u64,
    pub result: CheckResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_divergence: Option<Divergence>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.result == CheckResult::Ok
    }

    fn diverged(steps: u64, reason: String) -> CheckReport {
        CheckReport {
            steps,
            result: CheckResult::Divergence,
            first_divergence: Some(Divergence { step: steps, reason }),
        }
    }

    fn passed(steps: u64) -> CheckReport {
        CheckReport {
            steps,
            result: CheckResult::Ok,
            first_divergence: None,
        }
    }
}

/// Point out the first disagreement between two abstract states.
fn explain_mismatch(applied: &PState, concrete: &PState) -> String {
    for c in [DomClass::User, DomClass::Sup, DomClass::Sub] {
        for r in applied.class(c).difference(concrete.class(c)) {
            return format!(
                "{c} owns [{},{}) after the actions but not in the machine",
                r.0, r.1
            );
        }
        for r in concrete.class(c).difference(applied.class(c)) {
            return format!(
                "{c} owns [{},{}) in the machine but not after the actions",
                r.0, r.1
            );
        }
    }
    for (a, (x, y)) in applied.mem.iter().zip(&concrete.mem).enumerate() {
        if x != y {
            let show = |w: &AbsWord| match w {
                AbsWord::Val(v) => format!("{v}"),
                AbsWord::Uninit => "uninit".into(),
            };
            return format!(
                "address {a} holds {} after the actions but {} in the machine",
                show(x),
                show(y)
            );
        }
    }
    "states differ".into()
}

/// Run `m` under `sched` for at most `max_steps` decisions, checking the
/// refinement obligation at every step.
pub fn check_trace(
    mut m: Machine,
    spec: &RealmSpec,
    sched: &mut Scheduler,
    max_steps: u64,
) -> CheckReport {
    if let Err(e) = wf_report(&m) {
        return CheckReport::diverged(0, format!("initial state ill-formed: {e}"));
    }
    if let Err(e) = sub_ok_report(&m, spec) {
        return CheckReport::diverged(0, format!("initial state breaks subordination: {e}"));
    }
    let mut pstate = refines(&m, spec);
    let mut steps = 0u64;
    while steps < max_steps && m.exit.is_none() {
        let Some(dec) = sched.next(&m) else { break };
        let reference = reference_step(&m, dec, spec);
        let report = m.step(dec);
        steps += 1;
        let insn = report
            .insn
            .map(|i| i.to_string())
            .unwrap_or_else(|| "idle".into());
        if report.faulted != reference.faulted {
            let (a, b) = if report.faulted {
                ("faults", "does not")
            } else {
                ("runs", "faults")
            };
            return CheckReport::diverged(
                steps,
                format!("{insn}: machine {a} where the reference {b}"),
            );
        }
        if reference.faulted {
            // A fault publishes nothing; the surviving state must still be
            // structurally sound, and the abstract view restarts from it.
            if let Err(e) = wf_report(&m) {
                return CheckReport::diverged(steps, format!("{insn}: fault left {e}"));
            }
            if let Err(e) = sub_ok_report(&m, spec) {
                return CheckReport::diverged(steps, format!("{insn}: fault broke {e}"));
            }
            pstate = refines(&m, spec);
            continue;
        }
        let post = refines(&reference.post, spec);
        let actions = match synthesize(&pstate, &post, reference.acting, &reference.info) {
            Ok(a) => a,
            Err(e) => return CheckReport::diverged(steps, format!("{insn}: {e}")),
        };
        for (who, act) in &actions {
            if let Err(e) = pstate.apply(*who, act) {
                return CheckReport::diverged(steps, format!("{insn}: {e}"));
            }
        }
        let concrete = refines(&m, spec);
        if pstate != concrete {
            return CheckReport::diverged(
                steps,
                format!("{insn}: {}", explain_mismatch(&pstate, &concrete)),
            );
        }
        if let Err(e) = wf_report(&m) {
            return CheckReport::diverged(steps, format!("{insn}: {e}"));
        }
        if let Err(e) = sub_ok_report(&m, spec) {
            return CheckReport::diverged(steps, format!("{insn}: {e}"));
        }
    }
    CheckReport::passed(steps)
}
