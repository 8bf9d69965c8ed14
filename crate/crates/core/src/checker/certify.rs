//! Certifying linearizer for register and LL/SC traces. Every operation is
//! classified from the final contents of the sliding registers, the order is
//! built block by block over sliding-register indices, and the result is
//! checked like any other candidate linearization.

use std::collections::BTreeMap;

use crate::base::{first_wtuple, readers, WTuple, Window, WindowEntry};
use crate::checker::history::History;
use crate::checker::spec::{LlScSpec, RegisterSpec};
use crate::checker::{explain_certificate, CheckError, Linearization, Verdict, Violation};
use crate::sim::trace::{EventKind, ObjectSpec, Prim, ReturnPath, Trace};
use crate::value::{OpCall, Pid, Ret, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpClass {
    SilentRead,
    DirectRead,
    HelpedRead,
    VisibleWrite,
    HiddenWrite,
    DefinitiveAudit,
    NonDefinitiveAudit,
    SilentSc,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified {
    pub class: OpClass,
    pub idx: Option<i64>,
    /// Tie-break inside a block: the seq of the step that orders the
    /// operation, or the pid for helped reads.
    pub key: u64,
}

impl Classified {
    fn unclassified() -> Self {
        Self { class: OpClass::Unclassified, idx: None, key: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub ops: Vec<Classified>,
    /// LL/SC traces flip the order of writes within a block.
    pub llsc: bool,
    /// Final contents of every sliding register touched.
    pub slr: BTreeMap<i64, Window<WindowEntry>>,
}

struct Layout<'a> {
    name: &'a str,
    readers: &'a [Pid],
    writers: &'a [Pid],
    v0: &'a Value,
    llsc: bool,
}

fn layout(t: &Trace) -> Result<Layout<'_>, CheckError> {
    match &t.meta {
        Some(ObjectSpec::Register { name, writers, readers, v0 }) => {
            Ok(Layout { name, readers, writers, v0, llsc: false })
        }
        Some(ObjectSpec::Llsc { name, procs, v0 }) => {
            Ok(Layout { name, readers: procs, writers: procs, v0, llsc: true })
        }
        Some(other) => Err(CheckError::Unsupported(format!("no certifying linearizer for {} traces", other.kind()))),
        None => Err(CheckError::MalformedTrace("trace has no object description".into())),
    }
}

fn index_of(roster: &[Pid], pid: Pid) -> Option<u32> {
    roster.iter().position(|&p| p == pid).map(|i| i as u32 + 1)
}

/// A primitive applied by an operation: (seq, cell index or None for M/H, prim).
type Step<'a> = (u64, Option<i64>, &'a Prim);

fn slr_index(name: &str, obj: &str) -> Option<i64> {
    obj.strip_prefix(name)?.strip_prefix(".SLR[")?.strip_suffix(']')?.parse().ok()
}

pub fn classify(t: &Trace) -> Result<Classification, CheckError> {
    let lay = layout(t)?;
    let h = History::from_trace(t)?;
    let mut slr: BTreeMap<i64, Window<WindowEntry>> = BTreeMap::new();
    slr.insert(-1, vec![WindowEntry::write(1, lay.v0.clone(), [])]);
    let mut steps: Vec<Vec<Step<'_>>> = vec![Vec::new(); h.len()];
    let mut open: BTreeMap<Pid, usize> = BTreeMap::new();
    let mut next_op = 0;
    for e in &t.events {
        match &e.kind {
            EventKind::Invoke(_) => {
                open.insert(e.proc, next_op);
                next_op += 1;
            }
            EventKind::Respond { .. } => {
                open.remove(&e.proc);
            }
            EventKind::Prim { obj, prim } => {
                if !obj.starts_with(lay.name) {
                    continue;
                }
                let cell = slr_index(lay.name, obj);
                if let (Some(x), Prim::SlidingWrite(entry)) = (cell, prim) {
                    slr.entry(x).or_default().push(entry.clone());
                }
                let op = *open
                    .get(&e.proc)
                    .ok_or_else(|| CheckError::MalformedTrace(format!("seq {}: step outside any operation", e.seq)))?;
                steps[op].push((e.seq, cell, prim));
            }
        }
    }

    let empty = Vec::new();
    let window = |x: i64| slr.get(&x).unwrap_or(&empty);
    let mut out = Vec::with_capacity(h.len());
    for op in &h.ops {
        let note = t.note(op.id);
        let st = &steps[op.id];
        let c = match &op.call {
            OpCall::Read | OpCall::Ll => {
                let i = index_of(lay.readers, op.proc)
                    .ok_or_else(|| CheckError::MalformedTrace(format!("p{} is not a reader", op.proc)))?;
                let x0 = note
                    .and_then(|n| n.x0)
                    .ok_or_else(|| CheckError::MalformedTrace(format!("operation {} lacks its start index", op.id)))?;
                if op.is_complete() && note.and_then(|n| n.path) == Some(ReturnPath::Silent) {
                    let seq = st
                        .iter()
                        .find(|(_, cell, p)| *cell == Some(x0) && matches!(p, Prim::SlidingRead(_)))
                        .map(|s| s.0)
                        .ok_or_else(|| {
                            CheckError::RuleViolation(format!("silent read {} has no read of SLR[{x0}]", op.id))
                        })?;
                    Classified { class: OpClass::SilentRead, idx: Some(x0), key: seq }
                } else {
                    let x1 = slr.iter().find(|(&x, win)| x > x0 && readers(win).contains(&i)).map(|(&x, _)| x);
                    match x1 {
                        None if op.is_complete() => {
                            return Err(CheckError::RuleViolation(format!(
                                "completed read {} is recorded in no sliding register after {x0}",
                                op.id
                            )))
                        }
                        None => Classified::unclassified(),
                        Some(x) => {
                            let win = window(x);
                            let direct = win
                                .iter()
                                .take_while(|e| e.as_wtuple().is_none())
                                .any(|e| *e == WindowEntry::Reader(i));
                            if direct {
                                let seq = st
                                    .iter()
                                    .find(|(_, cell, p)| {
                                        *cell == Some(x)
                                            && matches!(p, Prim::SlidingWrite(WindowEntry::Reader(j)) if *j == i)
                                    })
                                    .map(|s| s.0)
                                    .ok_or_else(|| {
                                        CheckError::RuleViolation(format!(
                                            "direct read {} did not write SLR[{x}]",
                                            op.id
                                        ))
                                    })?;
                                Classified { class: OpClass::DirectRead, idx: Some(x), key: seq }
                            } else {
                                Classified { class: OpClass::HelpedRead, idx: Some(x), key: u64::from(op.proc) }
                            }
                        }
                    }
                }
            }
            OpCall::Write(_) | OpCall::Sc(_) => {
                let j = index_of(lay.writers, op.proc)
                    .ok_or_else(|| CheckError::MalformedTrace(format!("p{} is not a writer", op.proc)))?;
                let own = st.iter().find_map(|(seq, cell, p)| match p {
                    Prim::SlidingWrite(WindowEntry::Write(w)) => Some((*seq, cell.expect("sliding step"), w)),
                    _ => None,
                });
                let silent = matches!(op.call, OpCall::Sc(_))
                    && op.is_complete()
                    && note.and_then(|n| n.path) == Some(ReturnPath::Silent);
                match own {
                    _ if silent => {
                        let widx = st
                            .iter()
                            .find_map(|(_, _, p)| match p {
                                Prim::MaxRead(m) => Some(m.widx),
                                _ => None,
                            })
                            .ok_or_else(|| CheckError::RuleViolation(format!("silent SC {} never read M", op.id)))?;
                        Classified { class: OpClass::SilentSc, idx: Some(widx), key: op.invoked }
                    }
                    None => Classified::unclassified(),
                    Some((seq, x, w)) => {
                        if w.writer != j {
                            return Err(CheckError::MalformedTrace(format!("operation {} wrote another id", op.id)));
                        }
                        let first: Option<&WTuple> = first_wtuple(window(x));
                        let class = if first.map(|f| f.writer) == Some(j) {
                            OpClass::VisibleWrite
                        } else {
                            OpClass::HiddenWrite
                        };
                        Classified { class, idx: Some(x), key: seq }
                    }
                }
            }
            OpCall::Audit => {
                if !op.is_complete() {
                    Classified::unclassified()
                } else {
                    let x = st
                        .iter()
                        .find_map(|(_, _, p)| match p {
                            Prim::MaxRead(m) => Some(m.widx),
                            _ => None,
                        })
                        .ok_or_else(|| CheckError::RuleViolation(format!("audit {} never read M", op.id)))?;
                    let (seq, win) = st
                        .iter()
                        .find_map(|(seq, cell, p)| match p {
                            Prim::SlidingRead(w) if *cell == Some(x) => Some((*seq, w)),
                            _ => None,
                        })
                        .ok_or_else(|| CheckError::RuleViolation(format!("audit {} never read SLR[{x}]", op.id)))?;
                    let class = if first_wtuple(win).is_some() {
                        OpClass::DefinitiveAudit
                    } else {
                        OpClass::NonDefinitiveAudit
                    };
                    Classified { class, idx: Some(x), key: seq }
                }
            }
            other => return Err(CheckError::Unsupported(format!("{} has no classification", other.name()))),
        };
        out.push(c);
    }
    Ok(Classification { ops: out, llsc: lay.llsc, slr })
}

fn rank(class: OpClass, llsc: bool) -> u8 {
    match class {
        OpClass::SilentRead | OpClass::DirectRead | OpClass::NonDefinitiveAudit => 0,
        OpClass::HelpedRead => 1,
        OpClass::DefinitiveAudit => 2,
        OpClass::HiddenWrite if llsc => 4,
        OpClass::VisibleWrite if llsc => 3,
        OpClass::HiddenWrite => 3,
        OpClass::VisibleWrite => 4,
        OpClass::SilentSc | OpClass::Unclassified => 5,
    }
}

/// Order the classified operations: blocks by index, then by class and
/// tie-break within a block. Unclassified operations are left out; silent
/// SCs go into the block of the index they read, after every operation of
/// that block that returned before they started.
pub fn build_linearization(h: &History, c: &Classification) -> Result<Linearization, CheckError> {
    if c.ops.len() != h.len() {
        return Err(CheckError::RuleViolation("classification does not match the history".into()));
    }
    let mut blocks: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut silent = Vec::new();
    for (id, k) in c.ops.iter().enumerate() {
        match (k.class, k.idx) {
            (OpClass::Unclassified, _) => {}
            (OpClass::SilentSc, Some(x)) => silent.push((x, id)),
            (_, Some(x)) => blocks.entry(x).or_default().push(id),
            (_, None) => return Err(CheckError::RuleViolation(format!("operation {id} classified without index"))),
        }
    }
    for (x, ops) in blocks.iter_mut() {
        ops.sort_by_key(|&id| (rank(c.ops[id].class, c.llsc), c.ops[id].key));
        let visible = ops.iter().filter(|&&id| c.ops[id].class == OpClass::VisibleWrite).count();
        let hidden = ops.iter().any(|&id| c.ops[id].class == OpClass::HiddenWrite);
        if visible > 1 || (hidden && visible == 0) {
            return Err(CheckError::RuleViolation(format!("block {x} has {visible} visible writes")));
        }
    }
    silent.sort_by_key(|&(_, id)| h.ops[id].invoked);
    for (x, id) in silent {
        let block = blocks.entry(x).or_default();
        let at = block.iter().rposition(|&o| h.ops[o].precedes(&h.ops[id])).map_or(0, |p| p + 1);
        block.insert(at, id);
    }
    let mut lin = Linearization::default();
    for id in blocks.into_values().flatten() {
        let op = &h.ops[id];
        if !op.is_complete() {
            let k = &c.ops[id];
            let ret = match (&op.call, k.class) {
                (OpCall::Read | OpCall::Ll, _) => {
                    let x = k.idx.expect("classified");
                    let prev = c.slr.get(&(x - 1)).and_then(|w| first_wtuple(w)).ok_or_else(|| {
                        CheckError::RuleViolation(format!("SLR[{}] holds no w-tuple for pending read {id}", x - 1))
                    })?;
                    Ret::Value(prev.value.clone())
                }
                (OpCall::Write(_), _) => Ret::Unit,
                (OpCall::Sc(_), class) => Ret::Bool(class == OpClass::VisibleWrite),
                (other, _) => return Err(CheckError::RuleViolation(format!("pending {} kept", other.name()))),
            };
            lin.added.insert(id, ret);
        }
        lin.order.push(id);
    }
    Ok(lin)
}

/// Classify, linearize and verify a register or LL/SC trace.
/// Real-thread traces carry no primitive order and are refused.
pub fn certify(t: &Trace) -> Result<Verdict, CheckError> {
    if !t.has_steps() && t.op_count() > 0 {
        return Err(CheckError::Unsupported("trace records no primitive steps (real-thread run)".into()));
    }
    let h = History::from_trace(t)?;
    let c = classify(t)?;
    let lin = build_linearization(&h, &c)?;
    let checked = match &t.meta {
        Some(ObjectSpec::Llsc { v0, .. }) => explain_certificate(&h, &LlScSpec { v0: v0.clone() }, &lin),
        Some(ObjectSpec::Register { v0, .. }) => explain_certificate(&h, &RegisterSpec { v0: v0.clone() }, &lin),
        _ => unreachable!("classify accepted the trace"),
    };
    Ok(match checked {
        Ok(()) => Verdict::ok(lin),
        Err(reason) => Verdict::rejected(Violation { reason, prefix_events: None, ops: lin.order, culprit: None }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::spec::SequentialSpec;
    use crate::checker::verify_certificate;
    use crate::llsc::LlScConfig;
    use crate::register::RegisterConfig;
    use crate::sim::{run, Programs, Schedule, Sim};

    fn programs(entries: &[(Pid, Vec<OpCall>)]) -> Programs {
        entries.iter().cloned().collect()
    }

    fn classes(t: &Trace) -> Vec<(OpClass, Option<i64>)> {
        classify(t).unwrap().ops.into_iter().map(|c| (c.class, c.idx)).collect()
    }

    fn verified<S: SequentialSpec>(t: &Trace, spec: &S) -> Vec<usize> {
        let h = History::from_trace(t).unwrap();
        let lin = build_linearization(&h, &classify(t).unwrap()).unwrap();
        assert!(verify_certificate(&h, spec, &lin), "{:?}", explain_certificate(&h, spec, &lin));
        lin.order
    }

    fn reg_spec() -> RegisterSpec {
        RegisterSpec { v0: Value::Int(0) }
    }

    #[test]
    fn read_classes() {
        let p = programs(&[(2, vec![OpCall::Read, OpCall::Read])]);
        let t = run(&RegisterConfig::new(1, 1), &p, &Schedule::RoundRobin).unwrap();
        assert_eq!(classes(&t), vec![(OpClass::DirectRead, Some(0)), (OpClass::SilentRead, Some(0))]);
        assert_eq!(verified(&t, &reg_spec()), vec![0, 1]);
    }

    #[test]
    fn write_then_read() {
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(5))]), (2, vec![OpCall::Read])]);
        let t = run(&RegisterConfig::new(1, 1), &p, &Schedule::Exhaustive(usize::MAX)).unwrap();
        assert_eq!(classes(&t), vec![(OpClass::VisibleWrite, Some(0)), (OpClass::DirectRead, Some(1))]);
        assert_eq!(verified(&t, &reg_spec()), vec![0, 1]);
    }

    #[test]
    fn colliding_writes_flip_between_register_and_llsc() {
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(5))]), (2, vec![OpCall::Write(Value::Int(6))])]);
        let mut sim = Sim::new(&RegisterConfig::new(2, 1), &p).unwrap();
        sim.step(1).unwrap();
        sim.step(2).unwrap();
        sim.run_op(1).unwrap();
        sim.run_op(2).unwrap();
        let t = sim.finish(false);
        assert_eq!(classes(&t), vec![(OpClass::VisibleWrite, Some(0)), (OpClass::HiddenWrite, Some(0))]);
        assert_eq!(verified(&t, &reg_spec()), vec![1, 0]);

        let p = programs(&[
            (1, vec![OpCall::Ll, OpCall::Sc(Value::Int(5))]),
            (2, vec![OpCall::Ll, OpCall::Sc(Value::Int(6))]),
        ]);
        let mut sim = Sim::new(&LlScConfig::new(2), &p).unwrap();
        sim.run_op(1).unwrap();
        sim.run_op(2).unwrap();
        sim.step(1).unwrap();
        sim.step(2).unwrap();
        sim.run_op(1).unwrap();
        sim.run_op(2).unwrap();
        let t = sim.finish(false);
        let order = verified(&t, &LlScSpec { v0: Value::Int(0) });
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert_eq!(classify(&t).unwrap().ops[3].class, OpClass::HiddenWrite);
    }

    #[test]
    fn helped_read_precedes_definitive_audit() {
        let cfg = RegisterConfig::new(1, 1).with_auditors(1);
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(5))]), (2, vec![OpCall::Read]), (3, vec![OpCall::Audit])]);
        let mut sim = Sim::new(&cfg, &p).unwrap();
        sim.step(2).unwrap(); // M.read
        sim.step(2).unwrap(); // H[1].write(0)
        sim.step(3).unwrap(); // M.read
        sim.run_op(1).unwrap();
        sim.run_op(3).unwrap();
        sim.run_op(2).unwrap();
        let t = sim.finish(false);
        let h = History::from_trace(&t).unwrap();
        let ids: Vec<Pid> = h.ops.iter().map(|o| o.proc).collect();
        let got = classes(&t);
        let by_pid = |pid: Pid| got[ids.iter().position(|&p| p == pid).unwrap()];
        assert_eq!(by_pid(2), (OpClass::HelpedRead, Some(0)));
        assert_eq!(by_pid(3), (OpClass::DefinitiveAudit, Some(0)));
        let order: Vec<Pid> = verified(&t, &reg_spec()).into_iter().map(|id| h.ops[id].proc).collect();
        assert_eq!(order, vec![2, 3, 1]);
    }

    #[test]
    fn silent_sc_is_inserted_after_earlier_ops() {
        let p = programs(&[
            (1, vec![OpCall::Ll, OpCall::Sc(Value::Int(5))]),
            (2, vec![OpCall::Ll, OpCall::Sc(Value::Int(9))]),
        ]);
        let mut sim = Sim::new(&LlScConfig::new(2), &p).unwrap();
        for pid in [1, 2, 2, 1] {
            sim.run_op(pid).unwrap();
        }
        let t = sim.finish(false);
        let c = classify(&t).unwrap();
        assert_eq!((c.ops[3].class, c.ops[3].idx), (OpClass::SilentSc, Some(1)));
        assert_eq!(verified(&t, &LlScSpec { v0: Value::Int(0) }), vec![0, 1, 2, 3]);
    }

    #[test]
    fn pending_read_gets_previous_value() {
        // The read is helped by the write but never resumes.
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(5))]), (2, vec![OpCall::Read])]);
        let mut sim = Sim::new(&RegisterConfig::new(1, 1), &p).unwrap();
        sim.step(2).unwrap();
        sim.step(2).unwrap();
        sim.run_op(1).unwrap();
        let t = sim.finish(true);
        let lin = build_linearization(&History::from_trace(&t).unwrap(), &classify(&t).unwrap()).unwrap();
        assert_eq!(lin.added.get(&0), Some(&Ret::Value(Value::Int(0))));
        assert!(certify(&t).unwrap().linearizable);
    }

    #[test]
    fn corrupted_audit_is_rejected() {
        let p = programs(&[(2, vec![OpCall::Read]), (3, vec![OpCall::Audit])]);
        let mut t = run(&RegisterConfig::new(1, 1).with_auditors(1), &p, &Schedule::Exhaustive(usize::MAX)).unwrap();
        assert!(certify(&t).unwrap().linearizable);
        for e in t.events.iter_mut() {
            if let EventKind::Respond { ret: Ret::Pairs(a), .. } = &mut e.kind {
                a.insert((2, Value::Int(42)));
            }
        }
        let v = certify(&t).unwrap();
        assert!(!v.linearizable);
        assert!(v.violation.unwrap().reason.contains("audit"));
    }

    #[test]
    fn thread_traces_are_unsupported() {
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(5))]), (2, vec![OpCall::Read])]);
        let t = crate::sim::run_threads(&RegisterConfig::new(1, 1), &p).unwrap();
        assert!(matches!(certify(&t), Err(CheckError::Unsupported(_))));
    }

    #[test]
    fn other_objects_are_unsupported() {
        let t =
            Trace { meta: Some(ObjectSpec::Denylist { procs: vec![1, 2], resources: vec![1] }), ..Trace::default() };
        assert!(matches!(certify(&t), Err(CheckError::Unsupported(_))));
    }
}
