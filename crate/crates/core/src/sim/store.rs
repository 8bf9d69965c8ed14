//! The shared memory of one execution: every base object, addressed by typed
//! handles and carrying a display name used in trace events.

use std::hash::{Hash, Hasher};

use crate::base::{BaseError, MaxRegister, MaxTriple, SlidingArray, SwmrRegister, WindowEntry};
use crate::value::{Pid, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SwmrId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaxId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlrId(usize);

/// A single shared location: a register, or one cell of a sliding array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Loc {
    Swmr(usize),
    Max(usize),
    Slr(usize, i64),
}

impl SwmrId {
    pub fn loc(self) -> Loc {
        Loc::Swmr(self.0)
    }
}

impl MaxId {
    pub fn loc(self) -> Loc {
        Loc::Max(self.0)
    }
}

impl SlrId {
    pub fn loc(self, idx: i64) -> Loc {
        Loc::Slr(self.0, idx)
    }
}

/// What the next step of a process does to shared memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Access {
    /// Start a new operation; its first location is not known in advance.
    Invoke,
    Read(Loc),
    Write(Loc),
}

impl Access {
    /// Steps of different processes that commute: they touch different
    /// locations or both only read. Invocations commute with nothing, since
    /// moving one past a response changes the real-time order.
    pub fn independent(self, other: Access) -> bool {
        match (self, other) {
            (Access::Invoke, _) | (_, Access::Invoke) => false,
            (Access::Read(_), Access::Read(_)) => true,
            (Access::Read(a) | Access::Write(a), Access::Write(b)) | (Access::Write(a), Access::Read(b)) => a != b,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Store {
    swmr: Vec<SwmrRegister>,
    swmr_names: Vec<String>,
    max: Vec<MaxRegister>,
    max_names: Vec<String>,
    slr: Vec<SlidingArray>,
    slr_names: Vec<String>,
}

// Names are fixed at allocation, so only object state takes part in hashing.
impl Hash for Store {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.swmr.hash(state);
        self.max.hash(state);
        self.slr.hash(state);
    }
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc_swmr(&mut self, name: impl Into<String>, owner: Pid, init: Value) -> SwmrId {
        self.swmr.push(SwmrRegister::new(owner, init));
        self.swmr_names.push(name.into());
        SwmrId(self.swmr.len() - 1)
    }

    pub fn alloc_max(&mut self, name: impl Into<String>, init: MaxTriple) -> MaxId {
        self.max.push(MaxRegister::new(init));
        self.max_names.push(name.into());
        MaxId(self.max.len() - 1)
    }

    pub fn alloc_slr(&mut self, name: impl Into<String>, capacity: usize) -> Result<SlrId, BaseError> {
        self.slr.push(SlidingArray::new(capacity)?);
        self.slr_names.push(name.into());
        Ok(SlrId(self.slr.len() - 1))
    }

    pub fn preset_slr(&mut self, id: SlrId, idx: i64, entries: Vec<WindowEntry>) {
        self.slr[id.0].preset(idx, entries);
    }

    pub fn swmr(&self, id: SwmrId) -> &SwmrRegister {
        &self.swmr[id.0]
    }

    pub fn swmr_mut(&mut self, id: SwmrId) -> &mut SwmrRegister {
        &mut self.swmr[id.0]
    }

    pub fn max(&self, id: MaxId) -> &MaxRegister {
        &self.max[id.0]
    }

    pub fn max_mut(&mut self, id: MaxId) -> &mut MaxRegister {
        &mut self.max[id.0]
    }

    pub fn slr(&self, id: SlrId) -> &SlidingArray {
        &self.slr[id.0]
    }

    pub fn slr_mut(&mut self, id: SlrId) -> &mut SlidingArray {
        &mut self.slr[id.0]
    }

    pub fn swmr_name(&self, id: SwmrId) -> &str {
        &self.swmr_names[id.0]
    }

    pub fn max_name(&self, id: MaxId) -> &str {
        &self.max_names[id.0]
    }

    /// Name of one cell of a sliding array, e.g. `R.SLR[3]`.
    pub fn slr_cell_name(&self, id: SlrId, idx: i64) -> String {
        format!("{}[{idx}]", self.slr_names[id.0])
    }
}
