//! Property: a call followed by an immediate return restores the caller's
//! register file exactly, except that the recorded result register holds
//! the returned payload and a moved linear payload has left its source.
//! The vacated context region is always zeroed and reference counts stay
//! consistent throughout.

mod common;

use capstone_machine::*;
use common::*;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Payload {
    Value(u64),
    Region,
}

#[derive(Debug, Clone)]
enum Junk {
    Empty,
    Value(u64),
    Region(u8),
}

fn payload_strategy() -> impl Strategy<Value = Payload> {
    prop_oneof![any::<u64>().prop_map(Payload::Value), Just(Payload::Region)]
}

fn junk_strategy() -> impl Strategy<Value = Junk> {
    prop_oneof![
        2 => Just(Junk::Empty),
        2 => any::<u64>().prop_map(Junk::Value),
        1 => (0u8..4).prop_map(Junk::Region),
    ]
}

proptest! {
    #[test]
    fn call_return_restores_the_caller(
        payload in payload_strategy(),
        junk in proptest::collection::vec(junk_strategy(), 4),
        region_base in 2u64..=20,
        rd_index in 2usize..=6,
    ) {
        let mut r = rig();
        let rd = g(rd_index);

        // Sealed context at [region_base, region_base + 12) in rd, with a
        // callee code capability parked in its pc slot.
        r.cap(rd, CapType::Lin, region_base, region_base + 12, region_base, Perm::Rw);
        r.cap(g(7), CapType::Lin, 48, 64, 48, Perm::Rx);
        r.exec(Insn::Sd { rd: rd as RegId, rs: rb(7) });
        r.exec(Insn::Seal { r: rd as RegId });
        prop_assert!(!r.faulted());

        // The payload in r1 and junk in r3..r6 (skipping the context register).
        match payload {
            Payload::Value(n) => r.nat(g(1), n),
            Payload::Region => {
                r.cap(g(1), CapType::Lin, 24, 28, 24, Perm::Rw);
            }
        }
        for (i, j) in junk.iter().enumerate() {
            let reg = g(3 + i);
            if reg == rd {
                continue;
            }
            match j {
                Junk::Empty => {}
                Junk::Value(n) => r.nat(reg, *n),
                Junk::Region(k) => {
                    let b = 28 + 2 * (*k as u64);
                    r.cap(reg, CapType::Non, b, b + 2, b, Perm::R);
                }
            }
        }

        let snapshot = r.m.regs(0).unwrap().clone();
        let w = snapshot[g(1)];

        r.exec(Insn::Call { rd: rd as RegId, rs: rb(1) });
        prop_assert!(!r.faulted(), "call failed");
        prop_assert_eq!(r.m.threads[0].domain, 1);
        prop_assert_eq!(r.reg(g(1)), w, "payload delivered to the callee");

        // Callee returns the payload immediately.
        r.exec(Insn::Return { rd: RET as RegId, rs: rb(1) });
        prop_assert!(!r.faulted(), "return failed");
        prop_assert_eq!(r.m.threads[0].domain, 0);

        let after = r.m.regs(0).unwrap().clone();
        for (i, (&got, &was)) in after.iter().zip(snapshot.iter()).enumerate() {
            let expect = if i == PC {
                let Word::Cap(pc) = was else { panic!("pc was a capability") };
                Word::Cap(pc.with_cursor(pc.cursor + 1))
            } else if i == rd {
                w
            } else if i == g(1) {
                if was.is_linear_cap() { Word::ZERO } else { was }
            } else {
                was
            };
            prop_assert_eq!(got, expect, "register {} after the round trip", i);
        }

        // The context region was wiped on the way out.
        for a in region_base..region_base + 12 {
            prop_assert_eq!(r.m.mem[a as usize], Word::ZERO, "region cell {}", a);
        }
        r.m.verify_refcounts().map_err(|e| TestCaseError::fail(e.to_string()))?;
    }
}
