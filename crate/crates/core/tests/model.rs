use std::collections::BTreeSet;

use proptest::prelude::*;

use auditsim::base::{MaxRegister, MaxTriple, SlidingRegister};
use auditsim::checker::{History, LlScSpec, RegisterSpec, SequentialSpec};
use auditsim::sim::{run, trace_from_str, trace_to_string, Programs, Scenario, Schedule, Sim};
use auditsim::workload::{self, Workload};
use auditsim::{DenyListConfig, LlScConfig, OpCall, Pid, RegisterConfig, Value};

proptest! {
    #[test]
    fn sliding_register_keeps_last_k(k in 1usize..6, writes in prop::collection::vec(0i64..100, 0..30)) {
        let mut reg = SlidingRegister::new(k).unwrap();
        for (i, &w) in writes.iter().enumerate() {
            reg.write(w);
            let from = (i + 1).saturating_sub(k);
            prop_assert_eq!(reg.read(), writes[from..=i].to_vec());
        }
    }

    #[test]
    fn max_register_keeps_largest_index(idxs in prop::collection::vec(0i64..20, 1..30)) {
        let triple = |w: i64| MaxTriple { widx: w, ridx: vec![w - 1], auditset: BTreeSet::new() };
        let mut reg = MaxRegister::new(MaxTriple::initial(1));
        for &w in &idxs {
            reg.write(triple(w));
        }
        prop_assert_eq!(reg.read(), triple(*idxs.iter().max().unwrap()));
    }
}

/// Run `order` one whole operation at a time and compare every response with
/// the sequential specification.
fn sequential_matches<S: SequentialSpec>(
    sc: &dyn Scenario,
    p: &Programs,
    order: &[Pid],
    spec: &S,
) -> Result<(), String> {
    let mut sim = Sim::new(sc, p).map_err(|e| e.to_string())?;
    for &pid in order {
        sim.run_op(pid).map_err(|e| e.to_string())?;
    }
    let h = History::from_trace(&sim.finish(false)).map_err(|e| e.to_string())?;
    let mut ops: Vec<_> = h.ops.iter().collect();
    ops.sort_by_key(|o| o.invoked);
    let mut state = spec.init();
    for o in ops {
        let (ret, next) = spec.apply(&state, o.proc, &o.call).ok_or("operation not in spec")?;
        if Some(&ret) != o.ret() {
            return Err(format!("{:?} by {} returned {:?}, spec says {ret:?}", o.call, o.proc, o.ret()));
        }
        state = next;
    }
    Ok(())
}

fn scripts(order: &[(Pid, OpCall)]) -> (Programs, Vec<Pid>) {
    let mut p = Programs::new();
    for (pid, call) in order {
        p.entry(*pid).or_default().push(call.clone());
    }
    (p, order.iter().map(|(pid, _)| *pid).collect())
}

fn register_op() -> impl Strategy<Value = (Pid, OpCall)> {
    // writers 1-2, readers 3-4, auditor 5
    prop_oneof![
        (1u32..=2, 1i64..50).prop_map(|(pid, v)| (pid, OpCall::Write(Value::Int(v)))),
        (3u32..=4).prop_map(|pid| (pid, OpCall::Read)),
        (1u32..=5).prop_map(|pid| (pid, OpCall::Audit)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sequential_register_follows_spec(ops in prop::collection::vec(register_op(), 1..25)) {
        let cfg = RegisterConfig::new(2, 2).with_auditors(1);
        let (p, order) = scripts(&ops);
        prop_assert_eq!(sequential_matches(&cfg, &p, &order, &RegisterSpec { v0: Value::Int(0) }), Ok(()));
    }

    #[test]
    fn sequential_llsc_follows_spec(picks in prop::collection::vec((1u32..=3, 1i64..50, any::<bool>()), 1..25)) {
        let cfg = LlScConfig::new(3).with_auditors(1);
        let mut linked = BTreeSet::new();
        let ops: Vec<(Pid, OpCall)> = picks
            .into_iter()
            .map(|(pid, v, audit)| match (audit, linked.contains(&pid)) {
                (true, _) => (pid + u32::from(v % 2 == 0), OpCall::Audit),
                (false, false) => {
                    linked.insert(pid);
                    (pid, OpCall::Ll)
                }
                (false, true) => {
                    linked.remove(&pid);
                    (pid, OpCall::Sc(Value::Int(v)))
                }
            })
            .collect();
        let (p, order) = scripts(&ops);
        prop_assert_eq!(sequential_matches(&cfg, &p, &order, &LlScSpec { v0: Value::Int(0) }), Ok(()));
    }

    #[test]
    fn traces_round_trip(seed in any::<u64>(), which in 0usize..3) {
        let w = Workload::Random(seed);
        let reg = RegisterConfig::new(2, 2).with_auditors(1);
        let llsc = LlScConfig::new(3).with_auditors(1);
        let dl = DenyListConfig::new(3, 2).with_auditors(1);
        let (sc, p): (&dyn Scenario, Programs) = match which {
            0 => (&reg, workload::register(&reg, 3, w)),
            1 => (&llsc, workload::llsc(&llsc, 3, w)),
            _ => (&dl, workload::denylist(&dl, 2, w)),
        };
        let t = run(sc, &p, &Schedule::Random(seed)).unwrap();
        let text = trace_to_string(&t);
        let back = trace_from_str(&text).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(trace_to_string(&back), text);
    }
}
