//! Multi-writer multi-reader auditable register over an unbounded array of
//! (m+n)-sliding registers, a max register `M` and one single-writer register
//! per reader announcing its current attempt.
//!
//! The current value lives in the first w-tuple of the highest `SLR` cell that
//! holds one; readers of that value are the ids written before any w-tuple in
//! the next cell, plus the help set of that cell's first w-tuple.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use crate::base::{first_wtuple, readers, MaxTriple, WindowEntry};
use crate::error::ObjError;
use crate::sim::trace::{ObjectSpec, ReturnPath};
use crate::sim::{Ctx, MaxId, OpFuture, Programs, Scenario, SlrId, Store, SwmrId, System};
use crate::value::{AuditSet, OpCall, Pid, Ret, Value};

/// Persistent local state of a reader: index of the last sliding register it
/// read and the value it returned.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReaderState {
    pub lsr: i64,
    pub lval: Value,
}

impl Default for ReaderState {
    fn default() -> Self {
        Self { lsr: -1, lval: Value::None }
    }
}

#[derive(Debug)]
pub struct AuditableRegister {
    name: String,
    writers: Vec<Pid>,
    readers: Vec<Pid>,
    v0: Value,
    m: MaxId,
    h: Vec<SwmrId>,
    slr: SlrId,
    // Each slot is touched only by the reader it belongs to.
    locals: Vec<Mutex<ReaderState>>,
    instrument: bool,
}

impl AuditableRegister {
    /// Allocate the shared objects of a register in `store`.
    ///
    /// `capacity` is the window size of every sliding register: `m + n` for a
    /// plain register, `2n` when the same processes both read and write.
    pub fn alloc(
        store: &mut Store,
        name: &str,
        writers: Vec<Pid>,
        readers: Vec<Pid>,
        v0: Value,
        capacity: usize,
        instrument: bool,
    ) -> Result<Self, ObjError> {
        if writers.is_empty() || readers.is_empty() {
            return Err(ObjError::Config(format!("{name}: needs at least one writer and one reader")));
        }
        let m = store.alloc_max(format!("{name}.M"), MaxTriple::initial(readers.len()));
        let h = readers
            .iter()
            .enumerate()
            .map(|(i, &pid)| store.alloc_swmr(format!("{name}.H[{}]", i + 1), pid, Value::Int(-1)))
            .collect();
        let slr = store.alloc_slr(format!("{name}.SLR"), capacity)?;
        // j0 is an arbitrary writer id; use the first one.
        store.preset_slr(slr, -1, vec![WindowEntry::write(1, v0.clone(), [])]);
        let locals = readers.iter().map(|_| Mutex::new(ReaderState::default())).collect();
        Ok(Self { name: name.to_string(), writers, readers, v0, m, h, slr, locals, instrument })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn writers(&self) -> &[Pid] {
        &self.writers
    }

    pub fn readers(&self) -> &[Pid] {
        &self.readers
    }

    pub fn v0(&self) -> &Value {
        &self.v0
    }

    pub fn reader_index(&self, pid: Pid) -> Option<u32> {
        self.readers.iter().position(|&p| p == pid).map(|i| i as u32 + 1)
    }

    pub fn writer_index(&self, pid: Pid) -> Option<u32> {
        self.writers.iter().position(|&p| p == pid).map(|i| i as u32 + 1)
    }

    fn reader_pid(&self, i: u32) -> Pid {
        self.readers[i as usize - 1]
    }

    /// Current local state of reader `pid`.
    pub fn reader_state(&self, pid: Pid) -> Option<ReaderState> {
        let i = self.reader_index(pid)?;
        Some(self.local(i).clone())
    }

    /// Digest of `pid`'s local state in this register.
    pub fn local_digest(&self, pid: Pid) -> u64 {
        crate::sim::hash_of(&self.reader_state(pid))
    }

    fn local(&self, i: u32) -> std::sync::MutexGuard<'_, ReaderState> {
        self.locals[i as usize - 1].lock().unwrap_or_else(|e| e.into_inner())
    }

    fn note(&self, ctx: &Ctx, f: impl FnOnce(&mut crate::sim::OpNote)) {
        if self.instrument {
            ctx.note(f);
        }
    }

    fn not_permitted(&self, ctx: &Ctx, op: &str, role: &str) -> ObjError {
        ObjError::NotPermitted { pid: ctx.pid(), op: op.into(), why: format!("not a {role} of {}", self.name) }
    }

    /// Value of the first w-tuple in `SLR[sn]`.
    pub async fn get_value(&self, ctx: &Ctx, sn: i64) -> Result<Value, ObjError> {
        let win = ctx.sliding_read(self.slr, sn).await;
        first_wtuple(&win).map(|t| t.value.clone()).ok_or(ObjError::MissingWTuple(sn))
    }

    /// Record every reader of `win` as a reader of `val` at index `at` and
    /// advance `M` past `at`.
    async fn complete_cell(&self, ctx: &Ctx, mut t: MaxTriple, at: i64, win: &[WindowEntry], val: &Value) {
        for j in readers(win) {
            t.ridx[j as usize - 1] = at;
            t.auditset.insert((j, val.clone()));
        }
        t.widx = at + 1;
        ctx.max_write(self.m, t).await;
    }

    pub async fn read(&self, ctx: &Ctx) -> Result<Value, ObjError> {
        let i = self.reader_index(ctx.pid()).ok_or_else(|| self.not_permitted(ctx, "read", "reader"))?;
        let ReaderState { mut lsr, mut lval } = self.local(i).clone();
        self.note(ctx, |n| n.x0 = Some(lsr));

        if lsr >= 0 {
            // Check for a new write since the last read.
            let win = ctx.sliding_read(self.slr, lsr).await;
            if first_wtuple(&win).is_none() {
                self.note(ctx, |n| n.path = Some(ReturnPath::Silent));
                return Ok(lval);
            }
            let t = ctx.max_read(self.m).await;
            if t.widx == lsr {
                // The write that invalidated SLR[lsr] may still need to advance M.
                self.complete_cell(ctx, t, lsr, &win, &lval).await;
            } else if t.widx < lsr {
                return Err(ObjError::Invariant(format!("M.widx {} below lsr {lsr}", t.widx)));
            }
        }

        let mut iters = 0;
        loop {
            iters += 1;
            self.note(ctx, |n| n.loop_iters = iters);
            let t = ctx.max_read(self.m).await;
            let helped_at = t.ridx[i as usize - 1];
            if helped_at > lsr {
                lsr = helped_at;
                lval = self.get_value(ctx, lsr - 1).await?;
                *self.local(i) = ReaderState { lsr, lval: lval.clone() };
                self.note(ctx, |n| n.path = Some(ReturnPath::Helped));
                return Ok(lval);
            }
            // Catch up with writers and announce the attempt.
            lsr = t.widx;
            ctx.swmr_write(self.h[i as usize - 1], Value::Int(lsr)).await?;
            ctx.sliding_write(self.slr, lsr, WindowEntry::Reader(i)).await;
            let win = ctx.sliding_read(self.slr, lsr).await;
            lval = self.get_value(ctx, lsr - 1).await?;
            *self.local(i) = ReaderState { lsr, lval: lval.clone() };
            if first_wtuple(&win).is_some() {
                self.complete_cell(ctx, t, lsr, &win, &lval).await;
            }
            if readers(&win).contains(&i) {
                break;
            }
        }
        self.note(ctx, |n| n.path = Some(ReturnPath::Loop));
        Ok(lval)
    }

    /// Help pending reads, post a w-tuple in `SLR[t.widx]` and advance `M`.
    /// Returns whether the posted w-tuple is the first one in its cell.
    async fn announce(&self, ctx: &Ctx, writer: u32, t: MaxTriple, v: Value) -> Result<bool, ObjError> {
        let widx = t.widx;
        let mut to_help = BTreeSet::new();
        for (k, &h) in self.h.iter().enumerate() {
            let r = k as u32 + 1;
            let aidx = match ctx.swmr_read(h).await {
                Value::Int(a) => a,
                other => return Err(ObjError::Invariant(format!("H[{r}] holds {other}"))),
            };
            if t.ridx[k] < aidx {
                // Reader r may need help.
                let win = ctx.sliding_read(self.slr, aidx).await;
                if !readers(&win).contains(&r) {
                    to_help.insert(r);
                }
            }
        }
        ctx.sliding_write(self.slr, widx, WindowEntry::write(writer, v, to_help)).await;
        let win = ctx.sliding_read(self.slr, widx).await;
        let val = self.get_value(ctx, widx - 1).await?;
        let first = first_wtuple(&win).map(|w| w.writer == writer).unwrap_or(false);
        self.complete_cell(ctx, t, widx, &win, &val).await;
        Ok(first)
    }

    pub async fn write(&self, ctx: &Ctx, v: Value) -> Result<(), ObjError> {
        let j = self.writer_index(ctx.pid()).ok_or_else(|| self.not_permitted(ctx, "write", "writer"))?;
        let t = ctx.max_read(self.m).await;
        self.announce(ctx, j, t, v).await?;
        Ok(())
    }

    /// Store-conditional on top of the write path: fails without writing when
    /// `M` has moved past the caller's last recorded read.
    pub async fn store_conditional(&self, ctx: &Ctx, v: Value) -> Result<bool, ObjError> {
        let j = self.writer_index(ctx.pid()).ok_or_else(|| self.not_permitted(ctx, "sc", "writer"))?;
        let i = self.reader_index(ctx.pid()).ok_or_else(|| self.not_permitted(ctx, "sc", "reader"))?;
        let lsr = self.local(i).lsr;
        self.note(ctx, |n| n.x0 = Some(lsr));
        let t = ctx.max_read(self.m).await;
        if t.widx > lsr {
            // A successful SC happened since the last LL.
            self.note(ctx, |n| n.path = Some(ReturnPath::Silent));
            return Ok(false);
        }
        self.announce(ctx, j, t, v).await
    }

    pub async fn audit(&self, ctx: &Ctx) -> Result<AuditSet, ObjError> {
        let t = ctx.max_read(self.m).await;
        let win = ctx.sliding_read(self.slr, t.widx).await;
        let val = self.get_value(ctx, t.widx - 1).await?;
        let mut out: AuditSet = t.auditset.iter().map(|(i, v)| (self.reader_pid(*i), v.clone())).collect();
        out.extend(readers(&win).into_iter().map(|i| (self.reader_pid(i), val.clone())));
        Ok(out)
    }

    /// Pairs `(writer, value)` for every write whose w-tuple is first in its cell.
    pub async fn visible_writes(&self, ctx: &Ctx) -> Result<AuditSet, ObjError> {
        let t = ctx.max_read(self.m).await;
        let mut out = AuditSet::new();
        for x in 0..=t.widx {
            let win = ctx.sliding_read(self.slr, x).await;
            if let Some(w) = first_wtuple(&win) {
                out.insert((self.writers[w.writer as usize - 1], w.value.clone()));
            }
        }
        Ok(out)
    }
}

/// An `n`-writer `m`-reader register with `auditors` extra audit-only processes.
///
/// Process ids: writers `1..=n`, readers `n+1..=n+m`, then auditors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterConfig {
    pub writers: usize,
    pub readers: usize,
    pub auditors: usize,
    pub v0: Value,
}

impl RegisterConfig {
    pub fn new(writers: usize, readers: usize) -> Self {
        Self { writers, readers, auditors: 0, v0: Value::Int(0) }
    }

    pub fn with_auditors(mut self, auditors: usize) -> Self {
        self.auditors = auditors;
        self
    }

    pub fn writer_pids(&self) -> Vec<Pid> {
        (1..=self.writers as Pid).collect()
    }

    pub fn reader_pids(&self) -> Vec<Pid> {
        let n = self.writers as Pid;
        (n + 1..=n + self.readers as Pid).collect()
    }

    pub fn auditor_pids(&self) -> Vec<Pid> {
        let base = (self.writers + self.readers) as Pid;
        (base + 1..=base + self.auditors as Pid).collect()
    }
}

#[derive(Debug)]
pub struct RegisterSystem {
    pub reg: AuditableRegister,
    auditors: Vec<Pid>,
}

impl Scenario for RegisterConfig {
    fn build(&self, store: &mut Store) -> Result<Arc<dyn System>, ObjError> {
        let reg = AuditableRegister::alloc(
            store,
            "R",
            self.writer_pids(),
            self.reader_pids(),
            self.v0.clone(),
            self.writers + self.readers,
            true,
        )?;
        Ok(Arc::new(RegisterSystem { reg, auditors: self.auditor_pids() }))
    }
}

impl System for RegisterSystem {
    fn spec(&self) -> ObjectSpec {
        ObjectSpec::Register {
            name: self.reg.name.clone(),
            writers: self.reg.writers.clone(),
            readers: self.reg.readers.clone(),
            v0: self.reg.v0.clone(),
        }
    }

    fn check_programs(&self, programs: &Programs) -> Result<(), ObjError> {
        for (&pid, script) in programs {
            let is_writer = self.reg.writer_index(pid).is_some();
            let is_reader = self.reg.reader_index(pid).is_some();
            let known = is_writer || is_reader || self.auditors.contains(&pid);
            for call in script {
                let ok = match call {
                    OpCall::Read => is_reader,
                    OpCall::Write(_) => is_writer,
                    OpCall::Audit => known,
                    _ => false,
                };
                if !ok {
                    return Err(ObjError::NotPermitted {
                        pid,
                        op: call.name().into(),
                        why: "not allowed for this process on an auditable register".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn local_digest(&self, pid: Pid) -> Option<u64> {
        Some(self.reg.local_digest(pid))
    }

    fn invoke(self: Arc<Self>, ctx: Ctx, call: OpCall) -> OpFuture {
        Box::pin(async move {
            match call {
                OpCall::Read => self.reg.read(&ctx).await.map(Ret::Value),
                OpCall::Write(v) => self.reg.write(&ctx, v).await.map(|()| Ret::Unit),
                OpCall::Audit => self.reg.audit(&ctx).await.map(Ret::Pairs),
                other => Err(ObjError::NotPermitted {
                    pid: ctx.pid(),
                    op: other.name().into(),
                    why: "unsupported by an auditable register".into(),
                }),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::{EventKind, Prim};
    use crate::sim::{run, Schedule, Trace};

    fn programs(entries: &[(Pid, Vec<OpCall>)]) -> Programs {
        entries.iter().cloned().collect()
    }

    fn prims(t: &Trace) -> Vec<(String, &'static str)> {
        t.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Prim { obj, prim } => Some((obj.clone(), prim.name())),
                _ => None,
            })
            .collect()
    }

    fn responses(t: &Trace) -> Vec<Ret> {
        t.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Respond { ret, .. } => Some(ret.clone()),
                _ => None,
            })
            .collect()
    }

    fn one_one() -> RegisterConfig {
        RegisterConfig::new(1, 1).with_auditors(1)
    }

    #[test]
    fn solo_write_follows_the_write_path() {
        let t = run(&one_one(), &programs(&[(1, vec![OpCall::Write(Value::Int(5))])]), &Schedule::RoundRobin).unwrap();
        let expected = [
            ("R.M", "max_read"),
            ("R.H[1]", "swmr_read"),
            ("R.SLR[0]", "sliding_write"),
            ("R.SLR[0]", "sliding_read"),
            ("R.SLR[-1]", "sliding_read"),
            ("R.M", "max_write"),
        ];
        let got = prims(&t);
        assert_eq!(got.iter().map(|(o, p)| (o.as_str(), *p)).collect::<Vec<_>>(), expected);
        let tuple = t.events.iter().find_map(|e| match &e.kind {
            EventKind::Prim { prim: Prim::SlidingWrite(w), .. } => Some(w.clone()),
            _ => None,
        });
        assert_eq!(tuple, Some(WindowEntry::write(1, Value::Int(5), [])));
        let last_m = t.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::Prim { prim: Prim::MaxWrite(m), .. } => Some(m.widx),
            _ => None,
        });
        assert_eq!(last_m, Some(1));
    }

    #[test]
    fn second_write_lands_in_next_cell() {
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(5)), OpCall::Write(Value::Int(6))])]);
        let t = run(&one_one(), &p, &Schedule::RoundRobin).unwrap();
        let cells: Vec<String> = prims(&t).into_iter().filter(|(_, p)| *p == "sliding_write").map(|(o, _)| o).collect();
        assert_eq!(cells, ["R.SLR[0]", "R.SLR[1]"]);
    }

    #[test]
    fn fresh_solo_read_returns_initial_value() {
        let t = run(&one_one(), &programs(&[(2, vec![OpCall::Read])]), &Schedule::RoundRobin).unwrap();
        assert_eq!(responses(&t), vec![Ret::Value(Value::Int(0))]);
        let n = t.note(0).unwrap();
        assert_eq!((n.x0, n.path, n.loop_iters), (Some(-1), Some(ReturnPath::Loop), 1));
    }

    #[test]
    fn read_after_write_and_silent_reread() {
        let p = programs(&[(1, vec![OpCall::Write(Value::Int(7))]), (2, vec![OpCall::Read, OpCall::Read])]);
        // Exhaustive(∞) runs the lowest pid to completion first.
        let t = run(&one_one(), &p, &Schedule::Exhaustive(1000)).unwrap();
        assert_eq!(responses(&t), vec![Ret::Unit, Ret::Value(Value::Int(7)), Ret::Value(Value::Int(7))]);
        let first = t.note(1).unwrap();
        assert_eq!(first.x0, Some(-1));
        let second = t.note(2).unwrap();
        assert_eq!((second.x0, second.path, second.loop_iters), (Some(1), Some(ReturnPath::Silent), 0));
        // The silent read applies a single read of SLR[1] and nothing else.
        let tail: Vec<_> = prims(&t).into_iter().rev().take(1).collect();
        assert_eq!(tail, vec![("R.SLR[1]".to_string(), "sliding_read")]);
        let second_read_prims = t
            .events
            .iter()
            .skip_while(|e| !(e.proc == 2 && matches!(e.kind, EventKind::Respond { .. })))
            .filter(|e| matches!(e.kind, EventKind::Prim { .. }))
            .count();
        assert_eq!(second_read_prims, 1);
    }

    #[test]
    fn audit_examples() {
        let fresh = run(&one_one(), &programs(&[(3, vec![OpCall::Audit])]), &Schedule::RoundRobin).unwrap();
        assert_eq!(responses(&fresh), vec![Ret::Pairs(AuditSet::new())]);

        let p = programs(&[(2, vec![OpCall::Read]), (3, vec![OpCall::Audit])]);
        let t = run(&one_one(), &p, &Schedule::Exhaustive(1000)).unwrap();
        assert_eq!(responses(&t)[1], Ret::Pairs(AuditSet::from([(2, Value::Int(0))])));

        let p = programs(&[
            (1, vec![OpCall::Write(Value::Int(5))]),
            (2, vec![OpCall::Read, OpCall::Read]),
            (3, vec![OpCall::Audit]),
        ]);
        let t = run(&one_one(), &p, &Schedule::Exhaustive(1000)).unwrap();
        // Exhaustive-leftmost runs pid 1 first, so both reads see 5.
        assert_eq!(responses(&t).last(), Some(&Ret::Pairs(AuditSet::from([(2, Value::Int(5))]))));
    }

    #[test]
    fn audit_after_reads_of_two_values() {
        let cfg = one_one();
        let p = programs(&[(2, vec![OpCall::Read]), (1, vec![OpCall::Write(Value::Int(5))])]);
        let mut sim = crate::sim::Sim::new(&cfg, &p).unwrap();
        while sim.enabled().contains(&2) {
            sim.step(2).unwrap();
        }
        while !sim.enabled().is_empty() {
            sim.step(1).unwrap();
        }
        let t = sim.finish(false);
        assert_eq!(responses(&t)[0], Ret::Value(Value::Int(0)));
        // continue with a second read and an audit on a fresh run of the same prefix
        let p = programs(&[
            (2, vec![OpCall::Read, OpCall::Read]),
            (1, vec![OpCall::Write(Value::Int(5))]),
            (3, vec![OpCall::Audit]),
        ]);
        let mut sim = crate::sim::Sim::new(&cfg, &p).unwrap();
        let drive = |sim: &mut crate::sim::Sim, pid: Pid| {
            let before = sim.enabled();
            assert!(before.contains(&pid));
            sim.step(pid).unwrap();
        };
        // first read to completion
        for _ in 0..5 {
            drive(&mut sim, 2);
        }
        while sim.enabled().contains(&1) {
            drive(&mut sim, 1);
        }
        while sim.enabled().contains(&2) {
            drive(&mut sim, 2);
        }
        while sim.enabled().contains(&3) {
            drive(&mut sim, 3);
        }
        let t = sim.finish(false);
        let rs = responses(&t);
        assert_eq!(rs[0], Ret::Value(Value::Int(0)));
        assert_eq!(rs.last(), Some(&Ret::Pairs(AuditSet::from([(2, Value::Int(0)), (2, Value::Int(5))]))));
    }

    #[test]
    fn writer_helps_reader_that_announced_an_attempt() {
        // Reader announces H[1] = 0 and stalls before writing its id; the
        // writer must then put reader 1 in its help set.
        let cfg = RegisterConfig::new(1, 1);
        let p = programs(&[(2, vec![OpCall::Read]), (1, vec![OpCall::Write(Value::Int(9))])]);
        let mut sim = crate::sim::Sim::new(&cfg, &p).unwrap();
        sim.step(2).unwrap(); // M.read
        sim.step(2).unwrap(); // H[1].write(0)
                              // The writer's helping test reads SLR[0], which does not yet hold id 1.
        while sim.enabled().contains(&1) {
            sim.step(1).unwrap();
        }
        while sim.enabled().contains(&2) {
            sim.step(2).unwrap();
        }
        let t = sim.finish(false);
        let tuple = t.events.iter().find_map(|e| match &e.kind {
            EventKind::Prim { prim: Prim::SlidingWrite(WindowEntry::Write(w)), .. } => Some(w.clone()),
            _ => None,
        });
        assert_eq!(tuple.unwrap().help, BTreeSet::from([1]));
        assert_eq!(responses(&t)[1], Ret::Value(Value::Int(0)));
    }

    #[test]
    fn get_value_examples() {
        use crate::sim::{Mode, Runtime};
        let mut store = Store::new();
        let reg = AuditableRegister::alloc(&mut store, "R", vec![1, 2], vec![3], Value::Int(0), 3, false).unwrap();
        let slr = reg.slr;
        store.preset_slr(
            slr,
            0,
            vec![
                WindowEntry::Reader(3),
                WindowEntry::write(1, Value::Int(8), []),
                WindowEntry::write(2, Value::Int(9), []),
            ],
        );
        store.preset_slr(slr, 1, vec![WindowEntry::write(2, Value::Int(9), [1])]);
        let rt = Runtime::new(store, Mode::Threads);
        let ctx = rt.ctx(3);
        let block = |f: std::pin::Pin<Box<dyn std::future::Future<Output = Result<Value, ObjError>> + '_>>| {
            let mut f = f;
            match f.as_mut().poll(&mut std::task::Context::from_waker(std::task::Waker::noop())) {
                std::task::Poll::Ready(v) => v,
                std::task::Poll::Pending => unreachable!("thread mode never yields"),
            }
        };
        assert_eq!(block(Box::pin(reg.get_value(&ctx, -1))), Ok(Value::Int(0)));
        assert_eq!(block(Box::pin(reg.get_value(&ctx, 0))), Ok(Value::Int(8)));
        assert_eq!(block(Box::pin(reg.get_value(&ctx, 1))), Ok(Value::Int(9)));
        assert_eq!(block(Box::pin(reg.get_value(&ctx, 2))), Err(ObjError::MissingWTuple(2)));
    }

    #[test]
    fn roles_are_enforced() {
        let p = programs(&[(2, vec![OpCall::Write(Value::Int(1))])]);
        assert!(matches!(
            run(&one_one(), &p, &Schedule::RoundRobin),
            Err(crate::error::SimError::WellFormedness(ObjError::NotPermitted { pid: 2, .. }))
        ));
    }
}
