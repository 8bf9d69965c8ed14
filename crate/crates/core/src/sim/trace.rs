//! Trace events, per-operation annotations and the JSON Lines trace format.
//!
//! One JSON object per event:
//! `{"seq":..,"kind":"invoke"|"respond"|"prim","proc":..,"op":..,"args":[..],"obj":..|null,"result":..}`
//! optionally followed by one trailing object keyed `"annotations"` that also
//! carries the description of the object under test.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value as Json;
use thiserror::Error;

use crate::base::{window_from_json, window_to_json, MaxTriple, Window, WindowEntry};
use crate::value::{OpCall, Pid, ResId, Ret, Value};

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = Json::deserialize(d)?;
        Value::from_json(&j).ok_or_else(|| serde::de::Error::custom(format!("not a value: {j}")))
    }
}

/// A primitive applied to a base object, with its argument or result.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Prim {
    SwmrRead(Value),
    SwmrWrite(Value),
    SlidingRead(Window<WindowEntry>),
    SlidingWrite(WindowEntry),
    MaxRead(MaxTriple),
    MaxWrite(MaxTriple),
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::SwmrRead(_) => "swmr_read",
            Prim::SwmrWrite(_) => "swmr_write",
            Prim::SlidingRead(_) => "sliding_read",
            Prim::SlidingWrite(_) => "sliding_write",
            Prim::MaxRead(_) => "max_read",
            Prim::MaxWrite(_) => "max_write",
        }
    }

    fn args_result(&self) -> (Vec<Json>, Json) {
        match self {
            Prim::SwmrRead(v) => (vec![], v.to_json()),
            Prim::SwmrWrite(v) => (vec![v.to_json()], Json::Null),
            Prim::SlidingRead(w) => (vec![], window_to_json(w)),
            Prim::SlidingWrite(e) => (vec![e.to_json()], Json::Null),
            Prim::MaxRead(t) => (vec![], t.to_json()),
            Prim::MaxWrite(t) => (vec![t.to_json()], Json::Null),
        }
    }

    fn from_parts(op: &str, args: &[Json], result: &Json) -> Option<Prim> {
        Some(match op {
            "swmr_read" => Prim::SwmrRead(Value::from_json(result)?),
            "swmr_write" => Prim::SwmrWrite(Value::from_json(args.first()?)?),
            "sliding_read" => Prim::SlidingRead(window_from_json(result)?),
            "sliding_write" => Prim::SlidingWrite(WindowEntry::from_json(args.first()?)?),
            "max_read" => Prim::MaxRead(MaxTriple::from_json(result)?),
            "max_write" => Prim::MaxWrite(MaxTriple::from_json(args.first()?)?),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    Invoke(OpCall),
    Respond { op: String, ret: Ret },
    Prim { obj: String, prim: Prim },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub seq: u64,
    pub proc: Pid,
    pub kind: EventKind,
}

/// How a read-like operation returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnPath {
    /// Returned after the first check without entering the retry loop
    /// (a read with no new write, or an SC that saw a newer index).
    Silent,
    /// Found its id in another operation's help set.
    Helped,
    /// Completed by recording its own id in the retry loop.
    Loop,
}

/// Which side of the consensus partition decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Readers,
    Writers,
}

/// Per-operation instrumentation. Recording it is not a step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpNote {
    pub op: usize,
    pub proc: Pid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<ReturnPath>,
    #[serde(default)]
    pub loop_iters: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<Side>,
}

/// Description of the object a trace was produced by.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "object", rename_all = "snake_case")]
pub enum ObjectSpec {
    Register { name: String, writers: Vec<Pid>, readers: Vec<Pid>, v0: Value },
    Llsc { name: String, procs: Vec<Pid>, v0: Value },
    Denylist { procs: Vec<Pid>, resources: Vec<ResId> },
    Consensus { participants: Vec<Pid>, readers: usize },
}

impl ObjectSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ObjectSpec::Register { .. } => "register",
            ObjectSpec::Llsc { .. } => "llsc",
            ObjectSpec::Denylist { .. } => "denylist",
            ObjectSpec::Consensus { .. } => "consensus",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<Event>,
    pub notes: Vec<OpNote>,
    pub meta: Option<ObjectSpec>,
    /// Set when the execution was cut short: a depth bound stopped it with
    /// operations pending, or exploration pruned it at a known state.
    pub exhausted: bool,
}

impl Trace {
    pub fn note(&self, op: usize) -> Option<&OpNote> {
        self.notes.iter().find(|n| n.op == op)
    }

    /// Whether primitive steps were recorded; real-thread runs record none.
    pub fn has_steps(&self) -> bool {
        self.events.iter().any(|e| matches!(e.kind, EventKind::Prim { .. }))
    }

    /// Number of invocations in the trace.
    pub fn op_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Invoke(_))).count()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    seq: u64,
    kind: String,
    proc: Pid,
    op: String,
    args: Vec<Json>,
    obj: Option<String>,
    result: Json,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    annotations: Vec<OpNote>,
    #[serde(default)]
    meta: Option<ObjectSpec>,
    #[serde(default)]
    exhausted: bool,
}

fn event_line(e: &Event) -> EventLine {
    let (kind, op, args, obj, result) = match &e.kind {
        EventKind::Invoke(c) => ("invoke", c.name().to_string(), c.args_json(), None, Json::Null),
        EventKind::Respond { op, ret } => ("respond", op.clone(), vec![], None, ret.to_json()),
        EventKind::Prim { obj, prim } => {
            let (args, result) = prim.args_result();
            ("prim", prim.name().to_string(), args, Some(obj.clone()), result)
        }
    };
    EventLine { seq: e.seq, kind: kind.to_string(), proc: e.proc, op, args, obj, result }
}

/// Write a trace as JSON Lines.
pub fn emit_trace<W: Write>(t: &Trace, sink: &mut W) -> io::Result<()> {
    for e in &t.events {
        serde_json::to_writer(&mut *sink, &event_line(e))?;
        sink.write_all(b"\n")?;
    }
    if t.meta.is_some() || !t.notes.is_empty() || t.exhausted {
        let trailer = Trailer { annotations: t.notes.clone(), meta: t.meta.clone(), exhausted: t.exhausted };
        serde_json::to_writer(&mut *sink, &trailer)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(t: &Trace) -> String {
    let mut buf = Vec::new();
    emit_trace(t, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parse a JSON Lines trace.
pub fn parse_trace<R: BufRead>(src: R) -> Result<Trace, TraceError> {
    let mut t = Trace::default();
    for (no, line) in src.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line: no + 1, msg };
        let j: Json = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if j.get("annotations").is_some() {
            let tr: Trailer = serde_json::from_value(j).map_err(|e| err(e.to_string()))?;
            t.notes = tr.annotations;
            t.meta = tr.meta;
            t.exhausted = tr.exhausted;
            continue;
        }
        let l: EventLine = serde_json::from_value(j).map_err(|e| err(e.to_string()))?;
        let kind = match l.kind.as_str() {
            "invoke" => EventKind::Invoke(
                OpCall::from_json(&l.op, &l.args).ok_or_else(|| err(format!("bad invocation {}", l.op)))?,
            ),
            "respond" => EventKind::Respond {
                ret: Ret::from_json(&l.op, &l.result).ok_or_else(|| err(format!("bad response for {}", l.op)))?,
                op: l.op,
            },
            "prim" => EventKind::Prim {
                prim: Prim::from_parts(&l.op, &l.args, &l.result)
                    .ok_or_else(|| err(format!("bad primitive {}", l.op)))?,
                obj: l.obj.ok_or_else(|| err("primitive without obj".into()))?,
            },
            other => return Err(err(format!("unknown event kind {other}"))),
        };
        if let Some(prev) = t.events.last() {
            if prev.seq >= l.seq {
                return Err(err("seq not strictly increasing".into()));
            }
        }
        t.events.push(Event { seq: l.seq, proc: l.proc, kind });
    }
    Ok(t)
}

pub fn trace_from_str(s: &str) -> Result<Trace, TraceError> {
    parse_trace(s.as_bytes())
}
