//! High-level histories extracted from traces.

use std::collections::BTreeMap;

use crate::checker::CheckError;
use crate::sim::trace::{EventKind, Trace};
use crate::value::{OpCall, Pid, Ret};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HOp {
    /// Position among invocations, matching the trace annotations.
    pub id: usize,
    pub proc: Pid,
    pub call: OpCall,
    pub invoked: u64,
    pub response: Option<(u64, Ret)>,
}

impl HOp {
    pub fn is_complete(&self) -> bool {
        self.response.is_some()
    }

    pub fn ret(&self) -> Option<&Ret> {
        self.response.as_ref().map(|(_, r)| r)
    }

    /// Real-time precedence: `self` responds before `other` is invoked.
    pub fn precedes(&self, other: &HOp) -> bool {
        matches!(self.response, Some((seq, _)) if seq < other.invoked)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub ops: Vec<HOp>,
}

impl History {
    pub fn from_trace(t: &Trace) -> Result<Self, CheckError> {
        let mut ops: Vec<HOp> = Vec::new();
        let mut open: BTreeMap<Pid, usize> = BTreeMap::new();
        for e in &t.events {
            match &e.kind {
                EventKind::Invoke(call) => {
                    if open.contains_key(&e.proc) {
                        return Err(CheckError::MalformedTrace(format!(
                            "seq {}: process {} invokes with an operation pending",
                            e.seq, e.proc
                        )));
                    }
                    open.insert(e.proc, ops.len());
                    ops.push(HOp { id: ops.len(), proc: e.proc, call: call.clone(), invoked: e.seq, response: None });
                }
                EventKind::Respond { op, ret } => {
                    let id = open.remove(&e.proc).ok_or_else(|| {
                        CheckError::MalformedTrace(format!("seq {}: response by idle process {}", e.seq, e.proc))
                    })?;
                    if ops[id].call.name() != op {
                        return Err(CheckError::MalformedTrace(format!(
                            "seq {}: {op} response to a {} invocation",
                            e.seq,
                            ops[id].call.name()
                        )));
                    }
                    ops[id].response = Some((e.seq, ret.clone()));
                }
                EventKind::Prim { .. } => {}
            }
        }
        Ok(Self { ops })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// The history made of the first `k` invocation and response events.
    pub fn prefix(&self, k: usize) -> History {
        if k == 0 {
            return History::default();
        }
        let mut seqs: Vec<u64> =
            self.ops.iter().flat_map(|o| std::iter::once(o.invoked).chain(o.response.as_ref().map(|r| r.0))).collect();
        seqs.sort_unstable();
        let Some(&cut) = seqs.get(k - 1) else {
            return self.clone();
        };
        let ops = self
            .ops
            .iter()
            .filter(|o| o.invoked <= cut)
            .map(|o| HOp { response: o.response.clone().filter(|r| r.0 <= cut), ..o.clone() })
            .collect();
        History { ops }
    }

    /// Number of invocation and response events.
    pub fn event_count(&self) -> usize {
        self.ops.iter().map(|o| 1 + usize::from(o.is_complete())).sum()
    }
}
