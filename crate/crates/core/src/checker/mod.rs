//! Linearizability checking: sequential specifications, an exhaustive
//! search over orders for small histories, and a certifying linearizer that
//! builds the order directly from the shared-memory contents of a trace.

pub mod brute;
pub mod certify;
pub mod history;
pub mod spec;

use std::collections::BTreeMap;

use serde_json::{json, Value as Json};
use thiserror::Error;

pub use brute::{check_bruteforce, check_bruteforce_with, DEFAULT_BUDGET};
pub use certify::{build_linearization, certify, classify, Classification, Classified, OpClass};
pub use history::{HOp, History};
pub use spec::{DenyListSpec, LlScSpec, RegisterSpec, SequentialSpec};

use crate::sim::trace::{ObjectSpec, Trace};
use crate::value::{Ret, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("search budget of {budget} states exceeded")]
    BudgetExceeded { budget: usize },
    #[error("history of {0} operations is too long to search")]
    TooManyOps(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("linearization rule violated: {0}")]
    RuleViolation(String),
}

/// A total order of operations together with the responses chosen for the
/// pending operations it includes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Linearization {
    pub order: Vec<usize>,
    pub added: BTreeMap<usize, Ret>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub reason: String,
    /// Length, in invocation and response events, of the shortest failing prefix.
    pub prefix_events: Option<usize>,
    /// Operations of that prefix.
    pub ops: Vec<usize>,
    /// Operation whose event completes the failing prefix.
    pub culprit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub linearizable: bool,
    pub witness: Option<Linearization>,
    pub violation: Option<Violation>,
}

impl Verdict {
    pub fn ok(lin: Linearization) -> Self {
        Self { linearizable: true, witness: Some(lin), violation: None }
    }

    pub fn rejected(v: Violation) -> Self {
        Self { linearizable: false, witness: None, violation: Some(v) }
    }

    pub fn to_json(&self) -> Json {
        json!({
            "linearizable": self.linearizable,
            "witness": self.witness.as_ref().map(|w| w.order.clone()),
            "violation": self.violation.as_ref().map(|v| json!({
                "reason": v.reason,
                "prefix_events": v.prefix_events,
                "ops": v.ops,
                "culprit": v.culprit,
            })),
        })
    }
}

/// Sequential specification selected for a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecChoice {
    Register(RegisterSpec),
    LlSc(LlScSpec),
    DenyList,
}

impl SpecChoice {
    /// The specification matching the object recorded in the trace trailer.
    pub fn from_meta(meta: &ObjectSpec) -> Result<Self, CheckError> {
        match meta {
            ObjectSpec::Register { v0, .. } => Ok(Self::Register(RegisterSpec { v0: v0.clone() })),
            ObjectSpec::Llsc { v0, .. } => Ok(Self::LlSc(LlScSpec { v0: v0.clone() })),
            ObjectSpec::Denylist { .. } => Ok(Self::DenyList),
            ObjectSpec::Consensus { .. } => {
                Err(CheckError::Unsupported("consensus traces are checked for agreement, not linearizability".into()))
            }
        }
    }

    /// Look a specification up by name; the initial value comes from the
    /// trace trailer when present.
    pub fn by_name(name: &str, meta: Option<&ObjectSpec>) -> Result<Self, CheckError> {
        let v0 = match meta {
            Some(ObjectSpec::Register { v0, .. } | ObjectSpec::Llsc { v0, .. }) => v0.clone(),
            _ => Value::Int(0),
        };
        match name {
            "register" => Ok(Self::Register(RegisterSpec { v0 })),
            "llsc" => Ok(Self::LlSc(LlScSpec { v0 })),
            "denylist" => Ok(Self::DenyList),
            other => Err(CheckError::Unsupported(format!("unknown specification {other}"))),
        }
    }

    pub fn for_trace(t: &Trace) -> Result<Self, CheckError> {
        let meta =
            t.meta.as_ref().ok_or_else(|| CheckError::MalformedTrace("trace has no object description".into()))?;
        Self::from_meta(meta)
    }
}

/// Why `lin` is not a valid linearization of `h` under `spec`, if it is not.
pub fn explain_certificate<S: SequentialSpec>(h: &History, spec: &S, lin: &Linearization) -> Result<(), String> {
    let mut seen = vec![false; h.len()];
    for &id in &lin.order {
        let op = h.ops.get(id).ok_or_else(|| format!("unknown operation {id}"))?;
        if std::mem::replace(&mut seen[id], true) {
            return Err(format!("operation {id} placed twice"));
        }
        if op.is_complete() == lin.added.contains_key(&id) {
            return Err(format!("operation {id}: response must come from the history or be added, not both"));
        }
    }
    if let Some(op) = h.ops.iter().find(|o| o.is_complete() && !seen[o.id]) {
        return Err(format!("completed operation {} missing", op.id));
    }
    for (i, &a) in lin.order.iter().enumerate() {
        if let Some(&b) = lin.order[i + 1..].iter().find(|&&b| h.ops[b].precedes(&h.ops[a])) {
            return Err(format!("operation {b} precedes {a} in real time but follows it"));
        }
    }
    let mut state = spec.init();
    for &id in &lin.order {
        let op = &h.ops[id];
        let (ret, next) =
            spec.apply(&state, op.proc, &op.call).ok_or_else(|| format!("operation {id} ({}) not in spec", op.call))?;
        let expected = op.ret().or_else(|| lin.added.get(&id)).expect("checked above");
        if ret != *expected {
            return Err(format!("operation {id} by p{} ({}) returned {expected}, spec gives {ret}", op.proc, op.call));
        }
        state = next;
    }
    Ok(())
}

/// Whether `lin` extends real-time order and replays under `spec`.
pub fn verify_certificate<S: SequentialSpec>(h: &History, spec: &S, lin: &Linearization) -> bool {
    explain_certificate(h, spec, lin).is_ok()
}

/// [`explain_certificate`] for a specification chosen at runtime.
pub fn explain_with(h: &History, spec: &SpecChoice, lin: &Linearization) -> Result<(), String> {
    match spec {
        SpecChoice::Register(s) => explain_certificate(h, s, lin),
        SpecChoice::LlSc(s) => explain_certificate(h, s, lin),
        SpecChoice::DenyList => explain_certificate(h, &DenyListSpec, lin),
    }
}
