//! Schedulers: who runs next, and whether the step is a normal fetch or
//! an injected exception.
//!
//! Three policies cover the test surface: round-robin for plain runs,
//! scripted decision lists for replaying exact interleavings, and a
//! seeded RNG for fuzzing. Exceptions reach a thread only through the
//! scripted and random policies (or the guest's own `except`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::state::{Machine, EPC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sig {
    /// Fetch and execute the instruction under pc.
    Normal,
    /// Preempt: execute an `except` against the thread's epc instead.
    Except,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleDecision {
    pub thread: usize,
    pub sig: Sig,
}

impl ScheduleDecision {
    pub fn normal(thread: usize) -> ScheduleDecision {
        ScheduleDecision { thread, sig: Sig::Normal }
    }

    pub fn except(thread: usize) -> ScheduleDecision {
        ScheduleDecision { thread, sig: Sig::Except }
    }
}

pub enum Scheduler {
    RoundRobin {
        next: usize,
    },
    Script {
        decisions: Vec<ScheduleDecision>,
        pos: usize,
    },
    Random {
        rng: ChaCha8Rng,
        except_prob: f64,
        /// Downgrade an exception to a normal step when the target's epc
        /// does not hold a capability (it would only destroy the thread).
        guard_except: bool,
    },
}

impl Scheduler {
    pub fn round_robin() -> Scheduler {
        Scheduler::RoundRobin { next: 0 }
    }

    pub fn script(decisions: Vec<ScheduleDecision>) -> Scheduler {
        Scheduler::Script { decisions, pos: 0 }
    }

    pub fn random(seed: u64, except_prob: f64) -> Scheduler {
        Scheduler::Random {
            rng: ChaCha8Rng::seed_from_u64(seed),
            except_prob,
            guard_except: false,
        }
    }

    pub fn random_guarded(seed: u64, except_prob: f64) -> Scheduler {
        Scheduler::Random {
            rng: ChaCha8Rng::seed_from_u64(seed),
            except_prob,
            guard_except: true,
        }
    }

    /// Parse a scheduler description: `rr` (or `round-robin`),
    /// `random:<seed>` with an optional `:<except-prob>`, or
    /// `script:<path>`.
    pub fn parse(spec: &str) -> Result<Scheduler, String> {
        match spec {
            "rr" | "round-robin" => return Ok(Scheduler::round_robin()),
            _ => {}
        }
        if let Some(rest) = spec.strip_prefix("random:") {
            let mut parts = rest.splitn(2, ':');
            let seed: u64 = parts
                .next()
                .unwrap()
                .parse()
                .map_err(|_| format!("bad random seed in `{spec}`"))?;
            let prob: f64 = match parts.next() {
                Some(p) => p
                    .parse()
                    .ok()
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or(format!("bad exception probability in `{spec}`"))?,
                None => 0.0,
            };
            return Ok(Scheduler::random(seed, prob));
        }
        if let Some(path) = spec.strip_prefix("script:") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read schedule `{path}`: {e}"))?;
            return Ok(Scheduler::script(parse_script(&text)?));
        }
        Err(format!(
            "unknown scheduler `{spec}` (expected rr, random:<seed>[:<prob>], or script:<path>)"
        ))
    }

    /// Next decision, or `None` when the policy is exhausted (script ran
    /// out) or no thread can run.
    pub fn next(&mut self, m: &Machine) -> Option<ScheduleDecision> {
        match self {
            Scheduler::RoundRobin { next } => {
                let n = m.threads.len();
                for off in 0..n {
                    let k = (*next + off) % n;
                    if !m.is_errored(k) {
                        *next = (k + 1) % n;
                        return Some(ScheduleDecision::normal(k));
                    }
                }
                None
            }
            Scheduler::Script { decisions, pos } => {
                let d = decisions.get(*pos).copied()?;
                *pos += 1;
                if d.thread >= m.threads.len() {
                    return None;
                }
                Some(d)
            }
            Scheduler::Random { rng, except_prob, guard_except } => {
                let runnable: Vec<usize> =
                    (0..m.threads.len()).filter(|&k| !m.is_errored(k)).collect();
                if runnable.is_empty() {
                    return None;
                }
                let k = runnable[rng.gen_range(0..runnable.len())];
                let mut sig = if *except_prob > 0.0 && rng.gen_bool(*except_prob) {
                    Sig::Except
                } else {
                    Sig::Normal
                };
                if sig == Sig::Except && *guard_except && m.reg(k, EPC).as_cap().is_none() {
                    sig = Sig::Normal;
                }
                Some(ScheduleDecision { thread: k, sig })
            }
        }
    }
}

/// Schedule scripts: one decision per line, `<thread>` for a normal step
/// or `except <thread>` for an injected exception. Blank lines and `#`
/// comments are skipped.
pub fn parse_script(text: &str) -> Result<Vec<ScheduleDecision>, String> {
    let mut decisions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let d = if let Some(rest) = line.strip_prefix("except") {
            let k = rest
                .trim()
                .parse()
                .map_err(|_| format!("schedule line {}: bad `{raw}`", i + 1))?;
            ScheduleDecision::except(k)
        } else {
            let k = line
                .parse()
                .map_err(|_| format!("schedule line {}: bad `{raw}`", i + 1))?;
            ScheduleDecision::normal(k)
        };
        decisions.push(d);
    }
    Ok(decisions)
}
