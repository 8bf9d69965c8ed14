//! Process scripts for the simulated objects.
//!
//! Canonical scripts give every process its main operation repeatedly.
//! Random scripts draw each next operation uniformly from what the process's
//! role allows. Written and proposed values are tagged with (pid, counter).
//! The LL/SC writer audit is left out: it is only meant for sequential use.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::Programs;
use crate::value::{OpCall, Pid, ResId, Value};
use crate::{ConsensusConfig, DenyListConfig, LlScConfig, RegisterConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    Canonical,
    Random(u64),
}

/// Hands out tagged values per process.
#[derive(Default)]
struct Tags(std::collections::BTreeMap<Pid, u32>);

impl Tags {
    fn next(&mut self, pid: Pid) -> Value {
        let c = self.0.entry(pid).or_insert(0);
        *c += 1;
        Value::tagged(pid, *c)
    }
}

fn pick<T: Clone>(rng: &mut ChaCha8Rng, from: &[T]) -> T {
    from.choose(rng).expect("no legal operation").clone()
}

pub fn register(cfg: &RegisterConfig, ops: usize, w: Workload) -> Programs {
    let mut tags = Tags::default();
    let mut p = Programs::new();
    match w {
        Workload::Canonical => {
            for pid in cfg.writer_pids() {
                p.insert(pid, (0..ops).map(|_| OpCall::Write(tags.next(pid))).collect());
            }
            for pid in cfg.reader_pids() {
                p.insert(pid, vec![OpCall::Read; ops]);
            }
            for pid in cfg.auditor_pids() {
                p.insert(pid, vec![OpCall::Audit; ops]);
            }
        }
        Workload::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for pid in cfg.writer_pids() {
                let script = (0..ops)
                    .map(|_| match rng.gen_bool(0.5) {
                        true => OpCall::Write(tags.next(pid)),
                        false => OpCall::Audit,
                    })
                    .collect();
                p.insert(pid, script);
            }
            for pid in cfg.reader_pids() {
                p.insert(pid, (0..ops).map(|_| pick(&mut rng, &[OpCall::Read, OpCall::Audit])).collect());
            }
            for pid in cfg.auditor_pids() {
                p.insert(pid, vec![OpCall::Audit; ops]);
            }
        }
    }
    p
}

pub fn llsc(cfg: &LlScConfig, ops: usize, w: Workload) -> Programs {
    let mut tags = Tags::default();
    let mut p = Programs::new();
    let mut rng = ChaCha8Rng::seed_from_u64(match w {
        Workload::Random(s) => s,
        Workload::Canonical => 0,
    });
    for pid in cfg.proc_pids() {
        let mut linked = false;
        let mut script = Vec::with_capacity(ops);
        for _ in 0..ops {
            let audit = matches!(w, Workload::Random(_)) && rng.gen_bool(1.0 / 3.0);
            let call = match (audit, linked) {
                (true, _) => OpCall::Audit,
                (false, false) => OpCall::Ll,
                (false, true) => OpCall::Sc(tags.next(pid)),
            };
            if !audit {
                linked = !linked;
            }
            script.push(call);
        }
        p.insert(pid, script);
    }
    for pid in cfg.auditor_pids() {
        p.insert(pid, vec![OpCall::Audit; ops]);
    }
    p
}

pub fn denylist(cfg: &DenyListConfig, ops: usize, w: Workload) -> Programs {
    let res: Vec<ResId> = cfg.resources.iter().copied().collect();
    let mut p = Programs::new();
    match w {
        Workload::Canonical => {
            let cycle = |i: usize| res[i % res.len()];
            for pid in cfg.proc_pids() {
                let script = (0..ops)
                    .map(|i| if pid == 1 { OpCall::Append(cycle(i)) } else { OpCall::Prove(cycle(i)) })
                    .collect();
                p.insert(pid, script);
            }
            for pid in cfg.auditor_pids() {
                p.insert(pid, (0..ops).map(|i| OpCall::ReadOne(cycle(i))).collect());
            }
        }
        Workload::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let may =
                |set: &Option<std::collections::BTreeSet<Pid>>, pid: Pid| set.as_ref().is_none_or(|s| s.contains(&pid));
            for pid in cfg.proc_pids() {
                let script = (0..ops)
                    .map(|_| {
                        let x = pick(&mut rng, &res);
                        let mut legal = vec![OpCall::ReadOne(x), OpCall::ReadAll];
                        if may(&cfg.managers, pid) {
                            legal.push(OpCall::Append(x));
                        }
                        if may(&cfg.provers, pid) {
                            legal.push(OpCall::Prove(x));
                        }
                        pick(&mut rng, &legal)
                    })
                    .collect();
                p.insert(pid, script);
            }
            for pid in cfg.auditor_pids() {
                let script = (0..ops)
                    .map(|_| {
                        let x = pick(&mut rng, &res);
                        pick(&mut rng, &[OpCall::ReadOne(x), OpCall::ReadAll])
                    })
                    .collect();
                p.insert(pid, script);
            }
        }
    }
    p
}

/// One proposal per participant; values are distinct.
pub fn consensus(cfg: &ConsensusConfig) -> Programs {
    (1..=cfg.participants as Pid).map(|pid| (pid, vec![OpCall::Propose(Value::tagged(pid, 0))])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, Schedule};

    #[test]
    fn canonical_register_shape() {
        let p = register(&RegisterConfig::new(1, 1), 1, Workload::Canonical);
        assert_eq!(p[&1], vec![OpCall::Write(Value::tagged(1, 1))]);
        assert_eq!(p[&2], vec![OpCall::Read]);
    }

    #[test]
    fn random_scripts_are_legal_and_seeded() {
        for seed in 0..20 {
            let w = Workload::Random(seed);
            let rc = RegisterConfig::new(2, 2).with_auditors(1);
            let lc = LlScConfig::new(3).with_auditors(1);
            let dc = DenyListConfig::new(3, 2).with_auditors(1);
            assert_eq!(register(&rc, 4, w), register(&rc, 4, w));
            run(&rc, &register(&rc, 4, w), &Schedule::Random(seed)).unwrap();
            run(&lc, &llsc(&lc, 5, w), &Schedule::Random(seed)).unwrap();
            run(&dc, &denylist(&dc, 3, w), &Schedule::Random(seed)).unwrap();
        }
    }

    #[test]
    fn written_values_are_unique() {
        let p = register(&RegisterConfig::new(3, 1), 50, Workload::Random(3));
        let vals: Vec<_> = p.values().flatten().filter(|c| matches!(c, OpCall::Write(_))).collect();
        let set: std::collections::BTreeSet<_> = vals.iter().collect();
        assert_eq!(vals.len(), set.len());
    }

    #[test]
    fn consensus_proposals_distinct() {
        let p = consensus(&ConsensusConfig::balanced(4));
        let set: std::collections::BTreeSet<_> = p.values().flatten().collect();
        assert_eq!(set.len(), 4);
    }
}
