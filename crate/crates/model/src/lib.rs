//! An abstract ownership model of the capability machine and a checker
//! that validates concrete executions against it.
//!
//! The model reduces a machine state to per-address abstract memory (a
//! word, or `uninit` for revoked contents) plus three sets of exclusively
//! owned address ranges — one for the designated user domain, one for its
//! subordinates, one for everything else. Ten guarded actions transition
//! that state. [`check_trace`] runs a machine step by step, explains each
//! step as a sequence of actions, and reports the first step at which the
//! machine's behaviour cannot be explained — which is how deliberately
//! broken emulator variants are caught.
//!
//! ```
//! use capstone_machine::sched::Scheduler;
//! use capstone_machine::state::Machine;
//! use capstone_machine::testkit;
//! use capstone_model::{check_trace, RealmSpec};
//!
//! let image = testkit::fuzz_image(7);
//! let m = Machine::boot(&image, testkit::fuzz_machine_config()).unwrap();
//! let spec = RealmSpec::for_machine(&m);
//! let mut sched = Scheduler::round_robin();
//! let report = check_trace(m, &spec, &mut sched, 100);
//! assert!(report.ok());
//! ```

pub mod abs;
pub mod checker;
pub mod realms;
pub mod synth;

pub use abs::{AbsWord, Action, DomClass, PState, Range};
pub use checker::{check_trace, CheckReport, CheckResult, Divergence};
pub use realms::{
    cap_closure, ctx, domains, located_caps, ranges, realm, realm_w, refines, sub_ok,
    sub_ok_report, wf, wf_report, woranges, xrealm, xrealm_w, Loc, RealmSpec,
};
pub use synth::{reference_step, step_actions, synthesize, InsnInfo, RefStep};
