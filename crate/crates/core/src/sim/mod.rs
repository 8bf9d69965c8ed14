//! Deterministic step-level execution of process scripts with trace recording.

pub mod ctx;
pub mod sched;
pub mod store;
pub mod trace;

pub use ctx::{Ctx, Mode, Runtime};
pub(crate) use sched::hash_of;
pub use sched::{
    explore, run, run_threads, ExploreOptions, Explorer, OpFuture, Programs, Scenario, Schedule, Sim, System,
};
pub use store::{Access, Loc, MaxId, SlrId, Store, SwmrId};
pub use trace::{
    emit_trace, parse_trace, trace_from_str, trace_to_string, Event, EventKind, ObjectSpec, OpNote, Prim, ReturnPath,
    Side, Trace, TraceError,
};
