//! Executable model of the Capstone capability machine.
//!
//! The machine is word-addressed; every word is a 64-bit number, an
//! instruction, or a capability. Capabilities carry a type (linear,
//! non-linear, revocation, sealed, sealed-return, uninitialized), bounds,
//! a cursor, permissions, and a node in the revocation tree that decides
//! their validity. Twenty-three instructions plus an `invalid` catch-all
//! move, split, shrink, seal, call through and revoke capabilities; a
//! failed side condition permanently faults the executing thread.
//!
//! The crate provides the stepper ([`Machine`]), boot and image loading,
//! schedulers (round-robin, scripted, seeded-random), deterministic state
//! dumps, and a random-guest generator for differential campaigns.

pub mod dump;
pub mod image;
pub mod insn;
pub mod sched;
pub mod state;
pub mod step;
pub mod testkit;
pub mod word;

pub use image::Image;
pub use insn::{Insn, RegId};
pub use sched::{ScheduleDecision, Scheduler, Sig};
pub use state::{
    reg_index, reg_name, BootPartition, Machine, MachineConfig, Mutation, RunOutcome,
    SharedWindow, StepReport, StopReason, Thread, ThreadState, EPC, GPR, PC, RET,
};
pub use word::{Cap, CapType, Perm, Word};
