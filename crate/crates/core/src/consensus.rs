//! Consensus among `m + n` processes from auditable registers, single-writer
//! registers and recursion on each side of a reader/writer partition.
//!
//! Readers read a shared register `AR` (initially ⊥) and writers write ⊤ to
//! it; an audit then tells every process whether some reader saw ⊥, that is,
//! whether a read came first. The side that came first wins and everyone
//! adopts the value that side agreed on.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex};

use crate::error::ObjError;
use crate::register::AuditableRegister;
use thiserror::Error;

use crate::sim::trace::{EventKind, ObjectSpec, Side, Trace};
use crate::sim::{Ctx, OpFuture, Programs, Scenario, Store, SwmrId, System};
use crate::value::{OpCall, Pid, Ret, Value};

type Decision<'a> = Pin<Box<dyn Future<Output = Result<Value, ObjError>> + 'a>>;

#[derive(Debug)]
struct Split {
    readers: Vec<Pid>,
    writers: Vec<Pid>,
    s: BTreeMap<Pid, SwmrId>,
    ar: AuditableRegister,
    sub_r: Option<Box<Instance>>,
    sub_w: Option<Box<Instance>>,
}

/// A consensus instance; a single participant decides its own proposal.
#[derive(Debug)]
pub struct Instance {
    participants: Vec<Pid>,
    split: Option<Split>,
    proposed: Mutex<BTreeSet<Pid>>,
}

impl Instance {
    /// Build an instance where the `m` lowest ids read and the rest write.
    pub fn alloc(store: &mut Store, name: &str, participants: Vec<Pid>, m: usize) -> Result<Self, ObjError> {
        let k = participants.len();
        if k == 0 {
            return Err(ObjError::Config(format!("{name}: no participants")));
        }
        let split = if k == 1 {
            None
        } else {
            if m == 0 || m >= k {
                return Err(ObjError::Config(format!("{name}: {m} readers among {k} participants")));
            }
            let readers = participants[..m].to_vec();
            let writers = participants[m..].to_vec();
            let s =
                participants.iter().map(|&p| (p, store.alloc_swmr(format!("{name}.S[{p}]"), p, Value::None))).collect();
            let ar = AuditableRegister::alloc(
                store,
                &format!("{name}.AR"),
                writers.clone(),
                readers.clone(),
                Value::Bottom,
                k,
                false,
            )?;
            let sub = |store: &mut Store, tag: &str, side: &[Pid], m: usize| {
                (side.len() > 1)
                    .then(|| Instance::alloc(store, &format!("{name}.{tag}"), side.to_vec(), m).map(Box::new))
                    .transpose()
            };
            let sub_r = sub(store, "r", &readers, readers.len().saturating_sub(1))?;
            let sub_w = sub(store, "w", &writers, 1)?;
            Some(Split { readers, writers, s, ar, sub_r, sub_w })
        };
        Ok(Self { participants, split, proposed: Mutex::new(BTreeSet::new()) })
    }

    pub fn local_digest(&self, pid: Pid) -> u64 {
        let proposed = self.proposed.lock().unwrap_or_else(|e| e.into_inner()).contains(&pid);
        let inner = self.split.as_ref().map(|sp| {
            let sub = |i: &Option<Box<Instance>>| i.as_ref().map(|i| i.local_digest(pid));
            (sp.ar.local_digest(pid), sub(&sp.sub_r), sub(&sp.sub_w))
        });
        crate::sim::hash_of(&(proposed, inner))
    }

    pub fn participants(&self) -> &[Pid] {
        &self.participants
    }

    /// Number of readers at the top level (0 for a singleton instance).
    pub fn readers(&self) -> usize {
        self.split.as_ref().map_or(0, |s| s.readers.len())
    }

    pub fn propose<'a>(&'a self, ctx: &'a Ctx, v: Value) -> Decision<'a> {
        Box::pin(async move {
            let pid = ctx.pid();
            if !self.participants.contains(&pid) {
                return Err(ObjError::NotPermitted { pid, op: "propose".into(), why: "not a participant".into() });
            }
            if !self.proposed.lock().unwrap_or_else(|e| e.into_inner()).insert(pid) {
                return Err(ObjError::DoublePropose(pid));
            }
            let Some(sp) = &self.split else {
                return Ok(v);
            };
            let reader = sp.readers.contains(&pid);
            let sub = if reader { &sp.sub_r } else { &sp.sub_w };
            let agreed = match sub {
                Some(inst) => inst.propose(ctx, v).await?,
                None => v,
            };
            ctx.swmr_write(sp.s[&pid], agreed).await?;
            if reader {
                // Only the audit below matters; the value read is not used.
                sp.ar.read(ctx).await?;
            } else {
                sp.ar.write(ctx, Value::Top).await?;
            }
            let audit = sp.ar.audit(ctx).await?;
            let readers_won = audit.iter().any(|(r, val)| *val == Value::Bottom && sp.readers.contains(r));
            let (side, winners) = if readers_won { (Side::Readers, &sp.readers) } else { (Side::Writers, &sp.writers) };
            // Sub-instances finish first, so the outermost winner is noted last.
            ctx.note(|n| n.winner = Some(side));
            let mut decided: Option<Value> = None;
            for p in winners {
                let val = ctx.swmr_read(sp.s[p]).await;
                match (&decided, val) {
                    (_, Value::None) => {}
                    (None, val) => decided = Some(val),
                    (Some(d), val) if *d != val => {
                        return Err(ObjError::Invariant(format!("winning side holds {d} and {val}")))
                    }
                    _ => {}
                }
            }
            decided.ok_or_else(|| ObjError::Invariant("winning side has no agreed value".into()))
        })
    }
}

/// Consensus among `participants` processes (ids `1..=participants`), the
/// lowest `readers` of which read the top-level register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub participants: usize,
    pub readers: usize,
}

impl ConsensusConfig {
    pub fn new(participants: usize, readers: usize) -> Self {
        Self { participants, readers }
    }

    /// Split as evenly as possible, readers rounding down.
    pub fn balanced(participants: usize) -> Self {
        Self { participants, readers: (participants / 2).max(1).min(participants.saturating_sub(1)) }
    }
}

#[derive(Debug)]
pub struct ConsensusSystem {
    pub root: Instance,
}

impl Scenario for ConsensusConfig {
    fn build(&self, store: &mut Store) -> Result<Arc<dyn System>, ObjError> {
        let pids = (1..=self.participants as Pid).collect();
        Ok(Arc::new(ConsensusSystem { root: Instance::alloc(store, "C", pids, self.readers)? }))
    }
}

impl System for ConsensusSystem {
    fn spec(&self) -> ObjectSpec {
        ObjectSpec::Consensus { participants: self.root.participants.clone(), readers: self.root.readers() }
    }

    fn check_programs(&self, programs: &Programs) -> Result<(), ObjError> {
        for (&pid, script) in programs {
            if !self.root.participants.contains(&pid) {
                return Err(ObjError::NotPermitted { pid, op: "propose".into(), why: "not a participant".into() });
            }
            let mut proposals = 0;
            for call in script {
                match call {
                    OpCall::Propose(Value::None | Value::Bottom | Value::Top) => {
                        return Err(ObjError::Config(format!("p{pid} proposes a reserved value")))
                    }
                    OpCall::Propose(_) => proposals += 1,
                    other => {
                        return Err(ObjError::NotPermitted {
                            pid,
                            op: other.name().into(),
                            why: "unsupported by consensus".into(),
                        })
                    }
                }
            }
            if proposals > 1 {
                return Err(ObjError::DoublePropose(pid));
            }
        }
        Ok(())
    }

    fn local_digest(&self, pid: Pid) -> Option<u64> {
        Some(self.root.local_digest(pid))
    }

    fn invoke(self: Arc<Self>, ctx: Ctx, call: OpCall) -> OpFuture {
        Box::pin(async move {
            match call {
                OpCall::Propose(v) => self.root.propose(&ctx, v).await.map(Ret::Value),
                other => Err(ObjError::NotPermitted {
                    pid: ctx.pid(),
                    op: other.name().into(),
                    why: "unsupported by consensus".into(),
                }),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("processes decided different values: {0:?}")]
    Disagreement(Vec<Value>),
    #[error("decided {0:?}, which nobody proposed")]
    Invalid(Value),
    #[error("process {0} never decided")]
    Unterminated(Pid),
}

/// Agreement, validity and termination of a consensus trace. Returns the
/// decided value, if anyone decided.
pub fn check_decisions(t: &Trace) -> Result<Option<Value>, DecisionError> {
    let mut proposed = BTreeSet::new();
    let mut open = BTreeSet::new();
    let mut decided = Vec::new();
    for e in &t.events {
        match &e.kind {
            EventKind::Invoke(OpCall::Propose(v)) => {
                proposed.insert(v.clone());
                open.insert(e.proc);
            }
            EventKind::Respond { ret: Ret::Value(v), .. } => {
                open.remove(&e.proc);
                decided.push(v.clone());
            }
            _ => {}
        }
    }
    // A trace cut short by a depth bound says nothing about termination.
    if let Some(&p) = open.first().filter(|_| !t.exhausted) {
        return Err(DecisionError::Unterminated(p));
    }
    if decided.windows(2).any(|w| w[0] != w[1]) {
        return Err(DecisionError::Disagreement(decided));
    }
    match decided.into_iter().next() {
        Some(v) if !proposed.contains(&v) => Err(DecisionError::Invalid(v)),
        d => Ok(d),
    }
}
