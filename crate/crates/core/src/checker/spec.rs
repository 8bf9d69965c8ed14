//! Sequential specifications of the checked objects.

use std::collections::BTreeSet;
use std::hash::Hash;

use crate::value::{AuditSet, Grants, OpCall, Pid, ResId, Ret, Value};

/// A deterministic sequential object: each operation applied in a state has
/// exactly one legal response. `None` means the operation is not part of
/// the object's interface.
pub trait SequentialSpec {
    type State: Clone + Eq + Hash + std::fmt::Debug;

    fn init(&self) -> Self::State;

    fn apply(&self, s: &Self::State, pid: Pid, call: &OpCall) -> Option<(Ret, Self::State)>;
}

/// Register with audit: reads return the last written value, audits the set
/// of (reader, value) pairs of all preceding reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterSpec {
    pub v0: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegisterState {
    pub value: Value,
    pub reads: AuditSet,
}

impl SequentialSpec for RegisterSpec {
    type State = RegisterState;

    fn init(&self) -> RegisterState {
        RegisterState { value: self.v0.clone(), reads: AuditSet::new() }
    }

    fn apply(&self, s: &RegisterState, pid: Pid, call: &OpCall) -> Option<(Ret, RegisterState)> {
        let mut next = s.clone();
        let ret = match call {
            OpCall::Read => {
                next.reads.insert((pid, s.value.clone()));
                Ret::Value(s.value.clone())
            }
            OpCall::Write(v) => {
                next.value = v.clone();
                Ret::Unit
            }
            OpCall::Audit => Ret::Pairs(s.reads.clone()),
            _ => return None,
        };
        Some((ret, next))
    }
}

/// LL/SC with auditable LL: SC by `p` succeeds iff no successful SC happened
/// since `p`'s last LL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlScSpec {
    pub v0: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LlScState {
    pub value: Value,
    pub linked: BTreeSet<Pid>,
    pub reads: AuditSet,
    pub stores: AuditSet,
}

impl SequentialSpec for LlScSpec {
    type State = LlScState;

    fn init(&self) -> LlScState {
        LlScState { value: self.v0.clone(), linked: BTreeSet::new(), reads: AuditSet::new(), stores: AuditSet::new() }
    }

    fn apply(&self, s: &LlScState, pid: Pid, call: &OpCall) -> Option<(Ret, LlScState)> {
        let mut next = s.clone();
        let ret = match call {
            OpCall::Ll => {
                next.linked.insert(pid);
                next.reads.insert((pid, s.value.clone()));
                Ret::Value(s.value.clone())
            }
            OpCall::Sc(v) => {
                let ok = next.linked.remove(&pid);
                if ok {
                    next.value = v.clone();
                    next.linked.clear();
                    next.stores.insert((pid, v.clone()));
                }
                Ret::Bool(ok)
            }
            OpCall::Audit => Ret::Pairs(s.reads.clone()),
            OpCall::AuditWriters => Ret::Pairs(s.stores.clone()),
            _ => return None,
        };
        Some((ret, next))
    }
}

/// Immediate deny list: a prove is invalid iff an append of its resource
/// came before it; reads return the valid proves so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenyListSpec;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DenyListState {
    pub appended: BTreeSet<ResId>,
    pub valid: Grants,
}

impl SequentialSpec for DenyListSpec {
    type State = DenyListState;

    fn init(&self) -> DenyListState {
        DenyListState { appended: BTreeSet::new(), valid: Grants::new() }
    }

    fn apply(&self, s: &DenyListState, pid: Pid, call: &OpCall) -> Option<(Ret, DenyListState)> {
        let mut next = s.clone();
        let ret = match call {
            OpCall::Append(x) => {
                next.appended.insert(*x);
                Ret::Unit
            }
            OpCall::Prove(x) => {
                let ok = !s.appended.contains(x);
                if ok {
                    next.valid.insert((pid, *x));
                }
                Ret::Bool(ok)
            }
            OpCall::ReadOne(x) => Ret::Grants(s.valid.iter().filter(|(_, y)| y == x).copied().collect()),
            OpCall::ReadAll => Ret::Grants(s.valid.clone()),
            _ => return None,
        };
        Some((ret, next))
    }
}
