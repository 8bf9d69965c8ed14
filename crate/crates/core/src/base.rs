//! Linearizable base objects: single-writer registers, k-sliding registers and
//! the max register holding `(widx, ridx, auditset)` triples.
//!
//! These are plain data structures. Atomicity comes from the runtime, which
//! applies exactly one primitive per scheduler step while holding the store.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::value::{Pid, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaseError {
    #[error("process {writer} is not the owner of single-writer register (owner {owner})")]
    WrongWriter { owner: Pid, writer: Pid },
    #[error("sliding register capacity must be positive")]
    ZeroCapacity,
}

/// Single-writer multi-reader register.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SwmrRegister {
    owner: Pid,
    value: Value,
}

impl SwmrRegister {
    pub fn new(owner: Pid, init: Value) -> Self {
        Self { owner, value: init }
    }

    pub fn owner(&self) -> Pid {
        self.owner
    }

    pub fn read(&self) -> Value {
        self.value.clone()
    }

    pub fn write(&mut self, writer: Pid, v: Value) -> Result<(), BaseError> {
        if writer != self.owner {
            return Err(BaseError::WrongWriter { owner: self.owner, writer });
        }
        self.value = v;
        Ok(())
    }
}

/// Content of a sliding register: the most recent writes, oldest first.
pub type Window<T> = Vec<T>;

/// A k-sliding register: keeps the last `k` values written to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlidingRegister<T> {
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T: Clone> SlidingRegister<T> {
    pub fn new(capacity: usize) -> Result<Self, BaseError> {
        if capacity == 0 {
            return Err(BaseError::ZeroCapacity);
        }
        Ok(Self { capacity, entries: VecDeque::with_capacity(capacity) })
    }

    pub fn with_entries(capacity: usize, init: impl IntoIterator<Item = T>) -> Result<Self, BaseError> {
        let mut reg = Self::new(capacity)?;
        for e in init {
            reg.write(e);
        }
        Ok(reg)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write(&mut self, e: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    /// Snapshot of the current sequence.
    pub fn read(&self) -> Window<T> {
        self.entries.iter().cloned().collect()
    }
}

/// A write announcement `(w, writer, value, help)` stored in a sliding register.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WTuple {
    pub writer: u32,
    pub value: Value,
    pub help: BTreeSet<u32>,
}

/// Either a reader identifier or a w-tuple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WindowEntry {
    Reader(u32),
    Write(WTuple),
}

impl WindowEntry {
    pub fn write(writer: u32, value: Value, help: impl IntoIterator<Item = u32>) -> Self {
        WindowEntry::Write(WTuple { writer, value, help: help.into_iter().collect() })
    }

    pub fn as_wtuple(&self) -> Option<&WTuple> {
        match self {
            WindowEntry::Write(t) => Some(t),
            WindowEntry::Reader(_) => None,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            WindowEntry::Reader(i) => Json::from(*i),
            WindowEntry::Write(t) => json!({"w": t.writer, "v": t.value.to_json(), "h": t.help}),
        }
    }

    pub fn from_json(j: &Json) -> Option<Self> {
        if let Some(i) = j.as_u64() {
            return u32::try_from(i).ok().map(WindowEntry::Reader);
        }
        let o = j.as_object()?;
        let writer = u32::try_from(o.get("w")?.as_u64()?).ok()?;
        let value = Value::from_json(o.get("v")?)?;
        let mut help = BTreeSet::new();
        for h in o.get("h")?.as_array()? {
            help.insert(u32::try_from(h.as_u64()?).ok()?);
        }
        Some(WindowEntry::Write(WTuple { writer, value, help }))
    }
}

pub fn window_to_json(w: &[WindowEntry]) -> Json {
    Json::Array(w.iter().map(WindowEntry::to_json).collect())
}

pub fn window_from_json(j: &Json) -> Option<Window<WindowEntry>> {
    j.as_array()?.iter().map(WindowEntry::from_json).collect()
}

/// The first w-tuple of a window, if any.
pub fn first_wtuple(win: &[WindowEntry]) -> Option<&WTuple> {
    win.iter().find_map(WindowEntry::as_wtuple)
}

/// Reader ids recorded in a window: the ids preceding the first w-tuple, plus
/// that w-tuple's help set.
pub fn readers(win: &[WindowEntry]) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for e in win {
        match e {
            WindowEntry::Reader(i) => {
                out.insert(*i);
            }
            WindowEntry::Write(t) => {
                out.extend(t.help.iter().copied());
                break;
            }
        }
    }
    out
}

/// Payload of the max register, ordered by `widx` alone.
///
/// `ridx` is indexed by reader position (0-based here; reader `i` lives at
/// `ridx[i - 1]`). `auditset` holds `(reader index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaxTriple {
    pub widx: i64,
    pub ridx: Vec<i64>,
    pub auditset: BTreeSet<(u32, Value)>,
}

impl MaxTriple {
    pub fn initial(readers: usize) -> Self {
        Self { widx: 0, ridx: vec![-1; readers], auditset: BTreeSet::new() }
    }

    pub fn to_json(&self) -> Json {
        let audit: Vec<Json> =
            self.auditset.iter().map(|(i, v)| Json::Array(vec![Json::from(*i), v.to_json()])).collect();
        json!({"widx": self.widx, "ridx": self.ridx, "auditset": audit})
    }

    pub fn from_json(j: &Json) -> Option<Self> {
        let o = j.as_object()?;
        let widx = o.get("widx")?.as_i64()?;
        let ridx = o.get("ridx")?.as_array()?.iter().map(Json::as_i64).collect::<Option<Vec<_>>>()?;
        let mut auditset = BTreeSet::new();
        for pair in o.get("auditset")?.as_array()? {
            let pair = pair.as_array()?;
            let i = u32::try_from(pair.first()?.as_u64()?).ok()?;
            auditset.insert((i, Value::from_json(pair.get(1)?)?));
        }
        Some(Self { widx, ridx, auditset })
    }
}

/// Max register over [`MaxTriple`]s.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaxRegister {
    held: MaxTriple,
}

impl MaxRegister {
    pub fn new(init: MaxTriple) -> Self {
        Self { held: init }
    }

    pub fn read(&self) -> MaxTriple {
        self.held.clone()
    }

    /// Keeps the triple with the largest `widx`. Equal `widx` is a no-op; the
    /// algorithms only ever write equal payloads under the same index.
    pub fn write(&mut self, t: MaxTriple) {
        if t.widx > self.held.widx {
            self.held = t;
        } else if t.widx == self.held.widx {
            debug_assert_eq!(
                (&t.ridx, &t.auditset),
                (&self.held.ridx, &self.held.auditset),
                "max register tie with diverging payloads"
            );
        }
    }
}

/// Unbounded array of sliding registers indexed from -1, allocated lazily.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlidingArray {
    capacity: usize,
    cells: BTreeMap<i64, SlidingRegister<WindowEntry>>,
}

impl SlidingArray {
    pub fn new(capacity: usize) -> Result<Self, BaseError> {
        SlidingRegister::<WindowEntry>::new(capacity)?;
        Ok(Self { capacity, cells: BTreeMap::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn preset(&mut self, idx: i64, entries: Vec<WindowEntry>) {
        let reg = SlidingRegister::with_entries(self.capacity, entries).expect("capacity checked");
        self.cells.insert(idx, reg);
    }

    pub fn read(&self, idx: i64) -> Window<WindowEntry> {
        self.cells.get(&idx).map(SlidingRegister::read).unwrap_or_default()
    }

    pub fn write(&mut self, idx: i64, e: WindowEntry) {
        let cap = self.capacity;
        self.cells.entry(idx).or_insert_with(|| SlidingRegister::new(cap).expect("capacity checked")).write(e);
    }

    /// Indices of allocated cells.
    pub fn touched(&self) -> impl Iterator<Item = i64> + '_ {
        self.cells.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(r: &SlidingRegister<i32>) -> Vec<i32> {
        r.read()
    }

    #[test]
    fn swmr_initial_and_writes() {
        let mut h = SwmrRegister::new(1, Value::Int(-1));
        assert_eq!(h.read(), Value::Int(-1));
        h.write(1, Value::Int(5)).unwrap();
        assert_eq!(h.read(), Value::Int(5));
        h.write(1, Value::Int(7)).unwrap();
        assert_eq!(h.read(), Value::Int(7));
    }

    #[test]
    fn swmr_rejects_foreign_writer() {
        let mut h = SwmrRegister::new(1, Value::Int(-1));
        assert_eq!(h.write(2, Value::Int(3)), Err(BaseError::WrongWriter { owner: 1, writer: 2 }));
        assert_eq!(h.read(), Value::Int(-1));
    }

    #[test]
    fn sliding_write_examples() {
        let mut r = SlidingRegister::new(3).unwrap();
        r.write(5);
        assert_eq!(ints(&r), vec![5]);

        let mut r = SlidingRegister::with_entries(2, [1, 2]).unwrap();
        r.write(3);
        assert_eq!(ints(&r), vec![2, 3]);

        let mut r = SlidingRegister::with_entries(3, [1, 2, 3]).unwrap();
        r.write(4);
        assert_eq!(ints(&r), vec![2, 3, 4]);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert_eq!(SlidingRegister::<i32>::new(0).unwrap_err(), BaseError::ZeroCapacity);
    }

    #[test]
    fn sliding_read_is_a_snapshot() {
        let mut r = SlidingRegister::new(4).unwrap();
        r.write(WindowEntry::Reader(1));
        let mut snap = r.read();
        snap.push(WindowEntry::Reader(9));
        assert_eq!(r.read(), vec![WindowEntry::Reader(1)]);
    }

    #[test]
    fn sliding_array_examples() {
        let mut a = SlidingArray::new(4).unwrap();
        a.preset(-1, vec![WindowEntry::write(1, Value::Int(0), [])]);
        assert_eq!(a.read(0), vec![]);
        assert_eq!(a.read(-1), vec![WindowEntry::write(1, Value::Int(0), [])]);
        a.write(0, WindowEntry::Reader(1));
        a.write(0, WindowEntry::write(2, Value::Int(9), []));
        assert_eq!(a.read(0), vec![WindowEntry::Reader(1), WindowEntry::write(2, Value::Int(9), [])]);
    }

    fn triple(widx: i64, tag: i64) -> MaxTriple {
        MaxTriple { widx, ridx: vec![tag], auditset: BTreeSet::new() }
    }

    #[test]
    fn max_register_examples() {
        let m = MaxRegister::new(MaxTriple::initial(2));
        assert_eq!(m.read(), MaxTriple { widx: 0, ridx: vec![-1, -1], auditset: BTreeSet::new() });

        let mut m = MaxRegister::new(triple(0, 0));
        m.write(triple(2, 0));
        assert_eq!(m.read().widx, 2);

        let mut m = MaxRegister::new(triple(3, 0));
        m.write(triple(2, 0));
        assert_eq!(m.read().widx, 3);

        let mut m = MaxRegister::new(triple(2, 5));
        m.write(triple(2, 5));
        assert_eq!(m.read(), triple(2, 5));

        let mut m = MaxRegister::new(triple(0, 0));
        for (w, tag) in [(1, 1), (3, 3), (2, 2)] {
            m.write(triple(w, tag));
        }
        assert_eq!(m.read(), triple(3, 3));
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "diverging payloads")]
    fn max_register_tie_divergence_is_flagged() {
        let mut m = MaxRegister::new(triple(2, 5));
        m.write(triple(2, 6));
    }

    #[test]
    fn readers_examples() {
        use WindowEntry::Reader;
        let w = |h: &[u32]| WindowEntry::write(1, Value::Int(7), h.iter().copied());
        assert_eq!(readers(&[Reader(3), Reader(5)]), BTreeSet::from([3, 5]));
        assert_eq!(readers(&[w(&[2]), Reader(3)]), BTreeSet::from([2]));
        assert_eq!(readers(&[Reader(4), w(&[2]), Reader(3)]), BTreeSet::from([4, 2]));
    }

    #[test]
    fn entry_json_round_trip() {
        for e in [WindowEntry::Reader(3), WindowEntry::write(2, Value::Int(9), [1, 4])] {
            assert_eq!(WindowEntry::from_json(&e.to_json()), Some(e));
        }
        let t = MaxTriple { widx: 4, ridx: vec![2, -1], auditset: BTreeSet::from([(1, Value::Int(3))]) };
        assert_eq!(MaxTriple::from_json(&t.to_json()), Some(t));
    }
}
