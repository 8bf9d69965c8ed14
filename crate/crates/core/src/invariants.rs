//! Executable safety invariants over recorded traces.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::base::{readers, WindowEntry};
use crate::sim::trace::{EventKind, ObjectSpec, Prim, Trace};
use crate::value::{OpCall, Pid, Ret};

/// Most iterations a read's retry loop may take.
pub const MAX_LOOP_ITERS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantError {
    #[error("seq {seq}: process {proc} wrote {cell} twice")]
    DoubleWrite { seq: u64, proc: Pid, cell: String },
    #[error("seq {seq}: {obj}.widx jumped from {from} to {to}")]
    WidxGap { seq: u64, obj: String, from: i64, to: i64 },
    #[error("seq {seq}: {cell} accessed before the previous cell held a w-tuple")]
    AccessOrder { seq: u64, cell: String },
    #[error("operation {op} of process {proc} took {iters} loop iterations")]
    TooManyIterations { op: usize, proc: Pid, iters: u32 },
    #[error("seq {seq}: readers of {cell} changed after a w-tuple landed")]
    ReadersChanged { seq: u64, cell: String },
    #[error("SC operation {op} into {cell} returned {got}, but its w-tuple was {}first", if *.got { "not " } else { "" })]
    ScOutcome { op: usize, cell: String, got: bool },
}

/// Split `"R.SLR[3]"` into `("R.SLR", 3)`.
fn slr_cell(obj: &str) -> Option<(&str, i64)> {
    let (array, idx) = obj.strip_suffix(']')?.rsplit_once('[')?;
    array.ends_with("SLR").then_some(())?;
    Some((array, idx.parse().ok()?))
}

/// At most one sliding write per process per SLR cell. In an LL/SC object a
/// process is reader and writer at once, so it may add one id entry and one
/// w-tuple to the same cell.
pub fn check_write_once(t: &Trace) -> Result<(), InvariantError> {
    let dual = matches!(t.meta, Some(ObjectSpec::Llsc { .. }));
    let mut seen = HashMap::new();
    for e in &t.events {
        let EventKind::Prim { obj, prim: Prim::SlidingWrite(entry) } = &e.kind else { continue };
        let kind = dual && matches!(entry, WindowEntry::Write(_));
        if seen.insert((e.proc, obj.as_str(), kind), ()).is_some() {
            return Err(InvariantError::DoubleWrite { seq: e.seq, proc: e.proc, cell: obj.clone() });
        }
    }
    Ok(())
}

/// The widx component of every max register takes the values 0, 1, 2, ...
pub fn check_widx_sequence(t: &Trace) -> Result<(), InvariantError> {
    let mut cur: HashMap<&str, i64> = HashMap::new();
    for e in &t.events {
        let EventKind::Prim { obj, prim: Prim::MaxWrite(m) } = &e.kind else { continue };
        let c = cur.entry(obj.as_str()).or_insert(0);
        if m.widx > *c {
            if m.widx != *c + 1 {
                return Err(InvariantError::WidxGap { seq: e.seq, obj: obj.clone(), from: *c, to: m.widx });
            }
            *c = m.widx;
        }
    }
    Ok(())
}

/// Whenever `SLR[x]` is accessed, `SLR[x-1]` already holds a w-tuple.
pub fn check_access_order(t: &Trace) -> Result<(), InvariantError> {
    let mut full: HashMap<&str, BTreeSet<i64>> = HashMap::new();
    for e in &t.events {
        let EventKind::Prim { obj, prim } = &e.kind else { continue };
        let Some((array, x)) = slr_cell(obj) else { continue };
        let cells = full.entry(array).or_insert_with(|| BTreeSet::from([-1]));
        if x >= 0 && !cells.contains(&(x - 1)) {
            return Err(InvariantError::AccessOrder { seq: e.seq, cell: obj.clone() });
        }
        if let Prim::SlidingWrite(WindowEntry::Write(_)) = prim {
            cells.insert(x);
        }
    }
    Ok(())
}

/// Every read-like operation finishes within [`MAX_LOOP_ITERS`] iterations.
/// A deny-list read_one takes at most n+1 collects; read_all at most n·r+1
/// sweeps over r resources, since each repeated sweep adds a grant.
pub fn check_loop_iters(t: &Trace) -> Result<(), InvariantError> {
    let names: Vec<&str> = t
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Invoke(c) => Some(c.name()),
            _ => None,
        })
        .collect();
    let bound = |op: usize| match &t.meta {
        Some(ObjectSpec::Denylist { procs, resources }) => match names.get(op) {
            Some(&"read_all") => (procs.len() * resources.len()) as u32 + 1,
            _ => procs.len() as u32 + 1,
        },
        _ => MAX_LOOP_ITERS,
    };
    match t.notes.iter().find(|n| n.loop_iters > bound(n.op)) {
        Some(n) => Err(InvariantError::TooManyIterations { op: n.op, proc: n.proc, iters: n.loop_iters }),
        None => Ok(()),
    }
}

/// Once a w-tuple is visible in a cell, the readers computed from any later
/// window of that cell stay the same.
pub fn check_readers_stable(t: &Trace) -> Result<(), InvariantError> {
    let mut fixed: HashMap<&str, BTreeSet<u32>> = HashMap::new();
    for e in &t.events {
        let EventKind::Prim { obj, prim: Prim::SlidingRead(win) } = &e.kind else { continue };
        if !win.iter().any(|w| w.as_wtuple().is_some()) {
            continue;
        }
        let now = readers(win);
        match fixed.get(obj.as_str()) {
            Some(r) if *r != now => return Err(InvariantError::ReadersChanged { seq: e.seq, cell: obj.clone() }),
            Some(_) => {}
            None => {
                fixed.insert(obj, now);
            }
        }
    }
    Ok(())
}

/// In an LL/SC trace, among the SCs whose w-tuples share a cell exactly the
/// owner of the first one returns true.
pub fn check_sc_uniqueness(t: &Trace) -> Result<(), InvariantError> {
    let mut open: BTreeMap<Pid, (usize, bool)> = BTreeMap::new();
    let mut next = 0;
    // op -> (cell, first in cell)
    let mut placed: BTreeMap<usize, (String, bool)> = BTreeMap::new();
    let mut taken: BTreeSet<&str> = BTreeSet::new();
    for e in &t.events {
        match &e.kind {
            EventKind::Invoke(call) => {
                open.insert(e.proc, (next, matches!(call, OpCall::Sc(_))));
                next += 1;
            }
            EventKind::Prim { obj, prim: Prim::SlidingWrite(WindowEntry::Write(_)) } => {
                if let Some(&(op, true)) = open.get(&e.proc) {
                    placed.insert(op, (obj.clone(), taken.insert(obj)));
                }
            }
            EventKind::Respond { ret, .. } => {
                let Some((op, _)) = open.remove(&e.proc) else { continue };
                if let (Some((cell, first)), Ret::Bool(got)) = (placed.get(&op), ret) {
                    if got != first {
                        return Err(InvariantError::ScOutcome { op, cell: cell.clone(), got: *got });
                    }
                }
            }
            EventKind::Prim { .. } => {}
        }
    }
    Ok(())
}

/// Run every invariant that applies to the object that produced `t`.
pub fn check_all(t: &Trace) -> Result<(), InvariantError> {
    check_write_once(t)?;
    check_widx_sequence(t)?;
    check_access_order(t)?;
    check_loop_iters(t)?;
    check_readers_stable(t)?;
    if matches!(t.meta, Some(ObjectSpec::Llsc { .. })) {
        check_sc_uniqueness(t)?;
    }
    Ok(())
}

/// Primitive steps taken by one operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpSteps {
    pub op: usize,
    pub proc: Pid,
    pub name: &'static str,
    pub steps: usize,
    pub complete: bool,
}

/// Count primitive events per operation, in invocation order.
pub fn op_steps(t: &Trace) -> Vec<OpSteps> {
    let mut out: Vec<OpSteps> = Vec::new();
    let mut open: BTreeMap<Pid, usize> = BTreeMap::new();
    for e in &t.events {
        match &e.kind {
            EventKind::Invoke(call) => {
                open.insert(e.proc, out.len());
                out.push(OpSteps { op: out.len(), proc: e.proc, name: call.name(), steps: 0, complete: false });
            }
            EventKind::Prim { .. } => {
                if let Some(&i) = open.get(&e.proc) {
                    out[i].steps += 1;
                }
            }
            EventKind::Respond { .. } => {
                if let Some(i) = open.remove(&e.proc) {
                    out[i].complete = true;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::MaxTriple;
    use crate::sim::trace::Event;
    use crate::sim::{run, Programs, Schedule};
    use crate::value::Value;
    use crate::{LlScConfig, RegisterConfig};

    fn prim(seq: u64, proc: Pid, obj: &str, prim: Prim) -> Event {
        Event { seq, proc, kind: EventKind::Prim { obj: obj.into(), prim } }
    }

    fn trace(events: Vec<Event>) -> Trace {
        Trace { events, notes: vec![], meta: None, exhausted: false }
    }

    fn register_trace(seed: u64) -> Trace {
        let cfg = RegisterConfig::new(2, 2).with_auditors(1);
        let mut p = Programs::new();
        for w in cfg.writer_pids() {
            p.insert(w, (0..3).map(|c| OpCall::Write(Value::tagged(w, c))).collect());
        }
        for r in cfg.reader_pids() {
            p.insert(r, vec![OpCall::Read; 3]);
        }
        p.insert(5, vec![OpCall::Audit; 2]);
        run(&cfg, &p, &Schedule::Random(seed)).unwrap()
    }

    #[test]
    fn random_register_runs_satisfy_all() {
        for seed in 0..50 {
            check_all(&register_trace(seed)).unwrap();
        }
    }

    #[test]
    fn llsc_runs_satisfy_all() {
        let cfg = LlScConfig::new(3);
        let p: Programs = (1..=3).map(|i| (i, vec![OpCall::Ll, OpCall::Sc(Value::Int(i as i64))])).collect();
        for seed in 0..50 {
            check_all(&run(&cfg, &p, &Schedule::Random(seed)).unwrap()).unwrap();
        }
    }

    #[test]
    fn double_write_detected() {
        let e = WindowEntry::Reader(1);
        let t = trace(vec![
            prim(0, 3, "R.SLR[0]", Prim::SlidingWrite(e.clone())),
            prim(1, 3, "R.SLR[0]", Prim::SlidingWrite(e)),
        ]);
        assert!(matches!(check_write_once(&t), Err(InvariantError::DoubleWrite { seq: 1, .. })));
    }

    #[test]
    fn widx_gap_detected() {
        let mut m = MaxTriple::initial(1);
        m.widx = 2;
        let t = trace(vec![prim(0, 1, "R.M", Prim::MaxWrite(m))]);
        assert!(matches!(check_widx_sequence(&t), Err(InvariantError::WidxGap { from: 0, to: 2, .. })));
    }

    #[test]
    fn early_access_detected() {
        let t = trace(vec![prim(0, 1, "R.SLR[1]", Prim::SlidingRead(vec![]))]);
        assert!(check_access_order(&t).is_err());
        let ok = trace(vec![prim(0, 1, "R.SLR[0]", Prim::SlidingRead(vec![]))]);
        check_access_order(&ok).unwrap();
    }

    #[test]
    fn wrong_sc_outcome_detected() {
        let cfg = LlScConfig::new(2);
        let p: Programs = (1..=2).map(|i| (i, vec![OpCall::Ll, OpCall::Sc(Value::Int(i as i64))])).collect();
        let mut flipped = 0;
        for seed in 0..40 {
            let mut t = run(&cfg, &p, &Schedule::Random(seed)).unwrap();
            check_sc_uniqueness(&t).unwrap();
            for e in &mut t.events {
                if let EventKind::Respond { ret: Ret::Bool(b), .. } = &mut e.kind {
                    *b = !*b;
                }
            }
            if t.events
                .iter()
                .any(|e| matches!(e.kind, EventKind::Prim { prim: Prim::SlidingWrite(WindowEntry::Write(_)), .. }))
            {
                assert!(matches!(check_sc_uniqueness(&t), Err(InvariantError::ScOutcome { .. })));
                flipped += 1;
            }
        }
        assert!(flipped > 0);
    }

    #[test]
    fn cell_names() {
        assert_eq!(slr_cell("R.SLR[-1]"), Some(("R.SLR", -1)));
        assert_eq!(slr_cell("AR1[2].SLR[4]"), Some(("AR1[2].SLR", 4)));
        assert_eq!(slr_cell("R.H[1]"), None);
    }

    #[test]
    fn steps_per_op() {
        let t = register_trace(7);
        let steps = op_steps(&t);
        assert_eq!(steps.len(), 14);
        assert!(steps.iter().all(|s| s.complete && s.steps >= 1));
    }
}
