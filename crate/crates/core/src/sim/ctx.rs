//! Process context: the only way algorithms touch shared memory.
//!
//! Under the simulator every primitive first yields to the scheduler, so one
//! scheduler step runs a process up to and including exactly one primitive.
//! In thread mode primitives never yield and the store mutex serializes them.

use std::collections::HashMap;
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::{Context, Poll};

use crate::base::{MaxTriple, Window, WindowEntry};
use crate::error::ObjError;
use crate::sim::store::{Access, MaxId, SlrId, Store, SwmrId};
use crate::sim::trace::{Event, EventKind, OpNote, Prim};
use crate::value::{OpCall, Pid, Ret, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sim,
    Threads,
}

#[derive(Debug, Default)]
pub(crate) struct Log {
    pub events: Vec<Event>,
    pub notes: Vec<OpNote>,
    open: HashMap<Pid, usize>,
    seq: u64,
}

impl Log {
    fn push(&mut self, proc: Pid, kind: EventKind) {
        self.events.push(Event { seq: self.seq, proc, kind });
        self.seq += 1;
    }

    pub fn invoke(&mut self, proc: Pid, call: &OpCall) -> usize {
        let op = self.notes.len();
        self.notes.push(OpNote { op, proc, ..Default::default() });
        self.open.insert(proc, op);
        self.push(proc, EventKind::Invoke(call.clone()));
        op
    }

    pub fn respond(&mut self, proc: Pid, call: &OpCall, ret: Ret) {
        self.open.remove(&proc);
        self.push(proc, EventKind::Respond { op: call.name().to_string(), ret });
    }
}

/// Shared state of one execution.
#[derive(Debug)]
pub struct Runtime {
    store: Mutex<Store>,
    pub(crate) log: Mutex<Log>,
    // the primitive each yielded process will apply when next scheduled
    next: Mutex<HashMap<Pid, Access>>,
    mode: Mode,
}

impl Runtime {
    pub fn new(store: Store, mode: Mode) -> Arc<Self> {
        Arc::new(Self { store: Mutex::new(store), log: Mutex::new(Log::default()), next: Mutex::default(), mode })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn log(&self) -> MutexGuard<'_, Log> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The access `pid` will perform when resumed, if it is waiting on one.
    pub fn next_access(&self, pid: Pid) -> Option<Access> {
        self.next.lock().unwrap_or_else(|e| e.into_inner()).get(&pid).copied()
    }

    pub fn ctx(self: &Arc<Self>, pid: Pid) -> Ctx {
        Ctx { pid, rt: Arc::clone(self) }
    }
}

/// Future that is pending exactly once.
struct YieldNow(bool);

impl Future for YieldNow {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<()> {
        if self.0 {
            Poll::Ready(())
        } else {
            self.0 = true;
            Poll::Pending
        }
    }
}

/// Handle a process uses to apply primitives.
#[derive(Debug, Clone)]
pub struct Ctx {
    pid: Pid,
    rt: Arc<Runtime>,
}

impl Ctx {
    pub fn pid(&self) -> Pid {
        self.pid
    }

    async fn apply<R>(
        &self,
        access: Access,
        f: impl FnOnce(&mut Store) -> Result<(R, String, Prim), ObjError>,
    ) -> Result<R, ObjError> {
        if self.rt.mode == Mode::Sim {
            self.rt.next.lock().unwrap_or_else(|e| e.into_inner()).insert(self.pid, access);
            YieldNow(false).await;
        }
        let mut store = self.rt.store();
        let (r, obj, prim) = f(&mut store)?;
        if self.rt.mode == Mode::Sim {
            self.rt.log().push(self.pid, EventKind::Prim { obj, prim });
        }
        Ok(r)
    }

    pub async fn swmr_read(&self, id: SwmrId) -> Value {
        self.apply(Access::Read(id.loc()), |s| {
            let v = s.swmr(id).read();
            Ok((v.clone(), s.swmr_name(id).to_string(), Prim::SwmrRead(v)))
        })
        .await
        .expect("reads cannot fail")
    }

    pub async fn swmr_write(&self, id: SwmrId, v: Value) -> Result<(), ObjError> {
        let pid = self.pid;
        self.apply(Access::Write(id.loc()), |s| {
            s.swmr_mut(id).write(pid, v.clone())?;
            Ok(((), s.swmr_name(id).to_string(), Prim::SwmrWrite(v)))
        })
        .await
    }

    pub async fn sliding_read(&self, id: SlrId, idx: i64) -> Window<WindowEntry> {
        self.apply(Access::Read(id.loc(idx)), |s| {
            let w = s.slr(id).read(idx);
            Ok((w.clone(), s.slr_cell_name(id, idx), Prim::SlidingRead(w)))
        })
        .await
        .expect("reads cannot fail")
    }

    pub async fn sliding_write(&self, id: SlrId, idx: i64, e: WindowEntry) {
        self.apply(Access::Write(id.loc(idx)), |s| {
            s.slr_mut(id).write(idx, e.clone());
            Ok(((), s.slr_cell_name(id, idx), Prim::SlidingWrite(e)))
        })
        .await
        .expect("sliding writes cannot fail")
    }

    pub async fn max_read(&self, id: MaxId) -> MaxTriple {
        self.apply(Access::Read(id.loc()), |s| {
            let t = s.max(id).read();
            Ok((t.clone(), s.max_name(id).to_string(), Prim::MaxRead(t)))
        })
        .await
        .expect("reads cannot fail")
    }

    pub async fn max_write(&self, id: MaxId, t: MaxTriple) {
        self.apply(Access::Write(id.loc()), |s| {
            s.max_mut(id).write(t.clone());
            Ok(((), s.max_name(id).to_string(), Prim::MaxWrite(t)))
        })
        .await
        .expect("max writes cannot fail")
    }

    /// Update the annotation of this process's pending top-level operation.
    pub fn note(&self, f: impl FnOnce(&mut OpNote)) {
        let mut log = self.rt.log();
        if let Some(&op) = log.open.get(&self.pid) {
            f(&mut log.notes[op]);
        }
    }
}
