use thiserror::Error;

use crate::base::BaseError;
use crate::sim::trace::Trace;
use crate::value::{Pid, ResId};

/// Errors raised by the high-level objects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjError {
    #[error(transparent)]
    Base(#[from] BaseError),
    #[error("process {pid} may not invoke {op}: {why}")]
    NotPermitted { pid: Pid, op: String, why: String },
    #[error("well-formedness violated by process {pid}: {why}")]
    WellFormedness { pid: Pid, why: String },
    #[error("SLR[{0}] holds no w-tuple")]
    MissingWTuple(i64),
    #[error("unknown resource {0}")]
    UnknownResource(ResId),
    #[error("process {0} already proposed")]
    DoublePropose(Pid),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Errors raised by the runtime.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid programs: {0}")]
    WellFormedness(ObjError),
    #[error("invalid configuration: {0}")]
    Config(ObjError),
    #[error("process {pid} failed in {op}: {source}")]
    Object { pid: Pid, op: String, source: ObjError },
    #[error("depth bound reached with operations pending")]
    ScheduleExhausted(Box<Trace>),
    #[error("interleaving budget exceeded (cap {cap})")]
    BudgetExceeded { cap: usize },
    #[error("step limit of {0} reached")]
    StepLimit(usize),
}
