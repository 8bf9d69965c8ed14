//! Simulation and checking of auditable shared objects built from sliding
//! registers, max registers and single-writer registers.

pub mod base;
pub mod bench;
pub mod checker;
pub mod consensus;
pub mod denylist;
pub mod error;
pub mod invariants;
pub mod llsc;
pub mod register;
pub mod sim;
pub mod value;
pub mod workload;

pub use checker::{certify, check_bruteforce, History, SpecChoice, Verdict};
pub use consensus::{check_decisions, ConsensusConfig, DecisionError};
pub use denylist::{DenyList, DenyListConfig};
pub use error::{ObjError, SimError};
pub use llsc::{AuditableLlSc, LlScConfig};
pub use register::{AuditableRegister, RegisterConfig};
pub use value::{AuditSet, Grants, OpCall, Pid, ResId, Ret, Value};
