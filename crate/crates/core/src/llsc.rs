//! n-process LL/SC object whose LL operations are auditable. LL is the
//! register read, SC the register write with an early failure test and a
//! success flag, over 2n-sliding registers.

use std::sync::{Arc, Mutex};

use crate::error::ObjError;
use crate::register::AuditableRegister;
use crate::sim::trace::ObjectSpec;
use crate::sim::{Ctx, OpFuture, Programs, Scenario, Store, System};
use crate::value::{AuditSet, OpCall, Pid, Ret, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Last {
    None,
    Ll,
    Sc,
}

#[derive(Debug)]
pub struct AuditableLlSc {
    reg: AuditableRegister,
    last: Vec<Mutex<Last>>,
}

impl AuditableLlSc {
    pub fn alloc(store: &mut Store, name: &str, procs: Vec<Pid>, v0: Value) -> Result<Self, ObjError> {
        let cap = 2 * procs.len();
        let last = procs.iter().map(|_| Mutex::new(Last::None)).collect();
        let reg = AuditableRegister::alloc(store, name, procs.clone(), procs, v0, cap, true)?;
        Ok(Self { reg, last })
    }

    pub fn register(&self) -> &AuditableRegister {
        &self.reg
    }

    fn slot(&self, pid: Pid) -> Result<&Mutex<Last>, ObjError> {
        let i = self.reg.reader_index(pid).ok_or_else(|| ObjError::NotPermitted {
            pid,
            op: "ll/sc".into(),
            why: format!("not a process of {}", self.reg.name()),
        })?;
        Ok(&self.last[i as usize - 1])
    }

    pub fn local_digest(&self, pid: Pid) -> u64 {
        let last = self.slot(pid).map(|s| *s.lock().unwrap_or_else(|e| e.into_inner())).ok();
        crate::sim::hash_of(&(self.reg.local_digest(pid), last))
    }

    fn transition(&self, pid: Pid, next: Last) -> Result<(), ObjError> {
        let mut last = self.slot(pid)?.lock().unwrap_or_else(|e| e.into_inner());
        match (*last, next) {
            (Last::Ll, Last::Ll) => {
                return Err(ObjError::WellFormedness { pid, why: "two LL operations without an SC between".into() })
            }
            (Last::None | Last::Sc, Last::Sc) => {
                return Err(ObjError::WellFormedness { pid, why: "SC without a matching LL".into() })
            }
            _ => {}
        }
        *last = next;
        Ok(())
    }

    pub async fn ll(&self, ctx: &Ctx) -> Result<Value, ObjError> {
        self.transition(ctx.pid(), Last::Ll)?;
        self.reg.read(ctx).await
    }

    pub async fn sc(&self, ctx: &Ctx, v: Value) -> Result<bool, ObjError> {
        self.transition(ctx.pid(), Last::Sc)?;
        self.reg.store_conditional(ctx, v).await
    }

    pub async fn audit(&self, ctx: &Ctx) -> Result<AuditSet, ObjError> {
        self.reg.audit(ctx).await
    }

    pub async fn audit_writers(&self, ctx: &Ctx) -> Result<AuditSet, ObjError> {
        self.reg.visible_writes(ctx).await
    }
}

/// Check that a script alternates LL and SC starting with LL, ignoring audits.
pub fn check_alternation(pid: Pid, script: &[OpCall]) -> Result<(), ObjError> {
    let mut pending_ll = false;
    for call in script {
        match call {
            OpCall::Ll if pending_ll => {
                return Err(ObjError::WellFormedness { pid, why: "two LL operations without an SC between".into() })
            }
            OpCall::Ll => pending_ll = true,
            OpCall::Sc(_) if !pending_ll => {
                return Err(ObjError::WellFormedness { pid, why: "SC without a matching LL".into() })
            }
            OpCall::Sc(_) => pending_ll = false,
            _ => {}
        }
    }
    Ok(())
}

/// `procs` processes with ids `1..=procs`, plus audit-only processes after them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlScConfig {
    pub procs: usize,
    pub auditors: usize,
    pub v0: Value,
}

impl LlScConfig {
    pub fn new(procs: usize) -> Self {
        Self { procs, auditors: 0, v0: Value::Int(0) }
    }

    pub fn with_auditors(mut self, auditors: usize) -> Self {
        self.auditors = auditors;
        self
    }

    pub fn proc_pids(&self) -> Vec<Pid> {
        (1..=self.procs as Pid).collect()
    }

    pub fn auditor_pids(&self) -> Vec<Pid> {
        let n = self.procs as Pid;
        (n + 1..=n + self.auditors as Pid).collect()
    }
}

#[derive(Debug)]
pub struct LlScSystem {
    pub obj: AuditableLlSc,
    auditors: Vec<Pid>,
}

impl Scenario for LlScConfig {
    fn build(&self, store: &mut Store) -> Result<Arc<dyn System>, ObjError> {
        let obj = AuditableLlSc::alloc(store, "L", self.proc_pids(), self.v0.clone())?;
        Ok(Arc::new(LlScSystem { obj, auditors: self.auditor_pids() }))
    }
}

impl System for LlScSystem {
    fn spec(&self) -> ObjectSpec {
        ObjectSpec::Llsc {
            name: self.obj.reg.name().to_string(),
            procs: self.obj.reg.readers().to_vec(),
            v0: self.obj.reg.v0().clone(),
        }
    }

    fn check_programs(&self, programs: &Programs) -> Result<(), ObjError> {
        for (&pid, script) in programs {
            let member = self.obj.reg.reader_index(pid).is_some();
            for call in script {
                let ok = match call {
                    OpCall::Ll | OpCall::Sc(_) => member,
                    OpCall::Audit | OpCall::AuditWriters => member || self.auditors.contains(&pid),
                    _ => false,
                };
                if !ok {
                    return Err(ObjError::NotPermitted {
                        pid,
                        op: call.name().into(),
                        why: "not allowed for this process on an LL/SC object".into(),
                    });
                }
            }
            check_alternation(pid, script)?;
        }
        Ok(())
    }

    fn local_digest(&self, pid: Pid) -> Option<u64> {
        Some(self.obj.local_digest(pid))
    }

    fn invoke(self: Arc<Self>, ctx: Ctx, call: OpCall) -> OpFuture {
        Box::pin(async move {
            match call {
                OpCall::Ll => self.obj.ll(&ctx).await.map(Ret::Value),
                OpCall::Sc(v) => self.obj.sc(&ctx, v).await.map(Ret::Bool),
                OpCall::Audit => self.obj.audit(&ctx).await.map(Ret::Pairs),
                OpCall::AuditWriters => self.obj.audit_writers(&ctx).await.map(Ret::Pairs),
                other => Err(ObjError::NotPermitted {
                    pid: ctx.pid(),
                    op: other.name().into(),
                    why: "unsupported by an LL/SC object".into(),
                }),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::SimError;
    use crate::sim::trace::{EventKind, Prim};
    use crate::sim::{explore, run, ExploreOptions, Schedule, Sim, Trace};

    fn responses(t: &Trace) -> Vec<(Pid, Ret)> {
        t.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Respond { ret, .. } => Some((e.proc, ret.clone())),
                _ => None,
            })
            .collect()
    }

    fn programs(entries: &[(Pid, Vec<OpCall>)]) -> Programs {
        entries.iter().cloned().collect()
    }

    #[test]
    fn fresh_solo_ll_returns_initial_value() {
        let t = run(&LlScConfig::new(2), &programs(&[(1, vec![OpCall::Ll])]), &Schedule::RoundRobin).unwrap();
        assert_eq!(responses(&t), vec![(1, Ret::Value(Value::Int(0)))]);
    }

    #[test]
    fn ll_sc_ll_sees_stored_value() {
        let p = programs(&[(1, vec![OpCall::Ll, OpCall::Sc(Value::Int(7)), OpCall::Ll])]);
        let t = run(&LlScConfig::new(2).with_auditors(1), &p, &Schedule::RoundRobin).unwrap();
        assert_eq!(
            responses(&t),
            vec![(1, Ret::Value(Value::Int(0))), (1, Ret::Bool(true)), (1, Ret::Value(Value::Int(7)))]
        );
    }

    #[test]
    fn back_to_back_ll_is_rejected() {
        let p = programs(&[(1, vec![OpCall::Ll, OpCall::Ll])]);
        assert!(matches!(
            run(&LlScConfig::new(2), &p, &Schedule::RoundRobin),
            Err(SimError::WellFormedness(ObjError::WellFormedness { pid: 1, .. }))
        ));
        let p = programs(&[(2, vec![OpCall::Sc(Value::Int(1))])]);
        assert!(matches!(
            run(&LlScConfig::new(2), &p, &Schedule::RoundRobin),
            Err(SimError::WellFormedness(ObjError::WellFormedness { pid: 2, .. }))
        ));
    }

    #[test]
    fn runtime_guard_rejects_bad_alternation() {
        let mut store = Store::new();
        let obj = AuditableLlSc::alloc(&mut store, "L", vec![1, 2], Value::Int(0)).unwrap();
        assert!(obj.transition(1, Last::Sc).is_err());
        obj.transition(1, Last::Ll).unwrap();
        assert!(obj.transition(1, Last::Ll).is_err());
        obj.transition(1, Last::Sc).unwrap();
    }

    #[test]
    fn later_sc_fails_after_interfering_success() {
        // p: ll; q: ll; q: sc(9); p: sc(5)
        let cfg = LlScConfig::new(2);
        let p = programs(&[
            (1, vec![OpCall::Ll, OpCall::Sc(Value::Int(5))]),
            (2, vec![OpCall::Ll, OpCall::Sc(Value::Int(9))]),
        ]);
        let mut sim = Sim::new(&cfg, &p).unwrap();
        for pid in [1, 2, 2, 1] {
            sim.run_op(pid).unwrap();
        }
        let t = sim.finish(false);
        let rs = responses(&t);
        assert_eq!(rs[2], (2, Ret::Bool(true)));
        assert_eq!(rs[3], (1, Ret::Bool(false)));
        // The failing SC returns right after reading M.
        let last_op_prims = t
            .events
            .iter()
            .rev()
            .take_while(|e| !matches!(e.kind, EventKind::Invoke(_)))
            .filter(|e| matches!(e.kind, EventKind::Prim { .. }))
            .count();
        assert_eq!(last_op_prims, 1);
    }

    #[test]
    fn colliding_scs_have_exactly_one_winner() {
        let p = programs(&[
            (1, vec![OpCall::Ll, OpCall::Sc(Value::Int(5))]),
            (2, vec![OpCall::Ll, OpCall::Sc(Value::Int(9))]),
        ]);
        let cfg = LlScConfig::new(2);
        let opts = ExploreOptions { memoize: true, ..ExploreOptions::default() };
        let mut colliding = 0;
        for t in explore(&cfg, &p, opts) {
            let t = t.unwrap();
            let cells: Vec<(i64, Pid)> = t
                .events
                .iter()
                .filter_map(|e| match &e.kind {
                    EventKind::Prim { obj, prim: Prim::SlidingWrite(w) } if w.as_wtuple().is_some() => {
                        Some((obj.trim_start_matches("L.SLR[").trim_end_matches(']').parse().unwrap(), e.proc))
                    }
                    _ => None,
                })
                .collect();
            if cells.len() == 2 && cells[0].0 == cells[1].0 {
                colliding += 1;
                let wins = responses(&t).iter().filter(|(_, r)| *r == Ret::Bool(true)).count();
                assert_eq!(wins, 1);
            }
        }
        assert!(colliding > 0);
    }

    #[test]
    fn audit_reports_ll_readers() {
        let p = programs(&[(3, vec![OpCall::Audit])]);
        let cfg = LlScConfig::new(2).with_auditors(1);
        let t = run(&cfg, &p, &Schedule::RoundRobin).unwrap();
        assert_eq!(responses(&t), vec![(3, Ret::Pairs(AuditSet::new()))]);

        let p = programs(&[(1, vec![OpCall::Ll]), (3, vec![OpCall::Audit])]);
        let t = run(&cfg, &p, &Schedule::Exhaustive(1000)).unwrap();
        assert_eq!(responses(&t)[1], (3, Ret::Pairs(AuditSet::from([(1, Value::Int(0))]))));

        let p = programs(&[
            (1, vec![OpCall::Ll, OpCall::Sc(Value::Int(7)), OpCall::Ll]),
            (3, vec![OpCall::Audit, OpCall::AuditWriters]),
        ]);
        let t = run(&cfg, &p, &Schedule::Exhaustive(1000)).unwrap();
        let rs = responses(&t);
        match &rs[3].1 {
            Ret::Pairs(a) => assert!(a.contains(&(1, Value::Int(7)))),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(rs[4].1, Ret::Pairs(AuditSet::from([(1, Value::Int(7))])));
    }
}
