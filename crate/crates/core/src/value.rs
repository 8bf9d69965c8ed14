//! Application values, process ids and operation call/response types shared by
//! every object in the crate.

use std::collections::BTreeSet;
use std::fmt;

use serde_json::Value as Json;

/// Global process identifier. Processes are numbered from 1.
pub type Pid = u32;

/// Resource identifier for the deny list.
pub type ResId = u32;

/// A register value.
///
/// `None` is the distinguished "no value" sentinel (an unset local or SWMR
/// register). `Bottom` and `Top` are the two markers used by the consensus
/// construction; they never collide with application values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Value {
    #[default]
    None,
    Bottom,
    Top,
    Bool(bool),
    Int(i64),
}

impl Value {
    pub fn is_none(&self) -> bool {
        matches!(self, Value::None)
    }

    /// Value tagged with its writer and a per-writer counter so that every
    /// written value in a workload is unique. Counters stay below 1000.
    pub fn tagged(pid: Pid, counter: u32) -> Value {
        debug_assert!(counter < 1000, "tag counter {counter} out of range");
        Value::Int(i64::from(pid) * 1000 + i64::from(counter))
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::None => Json::Null,
            Value::Bottom => Json::String("bot".into()),
            Value::Top => Json::String("top".into()),
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::from(*i),
        }
    }

    pub fn from_json(j: &Json) -> Option<Value> {
        match j {
            Json::Null => Some(Value::None),
            Json::Bool(b) => Some(Value::Bool(*b)),
            Json::Number(n) => n.as_i64().map(Value::Int),
            Json::String(s) if s == "bot" => Some(Value::Bottom),
            Json::String(s) if s == "top" => Some(Value::Top),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::None => write!(f, "NONE"),
            Value::Bottom => write!(f, "⊥"),
            Value::Top => write!(f, "⊤"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

/// Set of (process, value) pairs returned by an audit.
pub type AuditSet = BTreeSet<(Pid, Value)>;

/// Set of (process, resource) pairs returned by a deny-list read.
pub type Grants = BTreeSet<(Pid, ResId)>;

/// A high-level operation invocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpCall {
    Read,
    Write(Value),
    Audit,
    Ll,
    Sc(Value),
    AuditWriters,
    Append(ResId),
    Prove(ResId),
    ReadOne(ResId),
    ReadAll,
    Propose(Value),
}

impl OpCall {
    pub fn name(&self) -> &'static str {
        match self {
            OpCall::Read => "read",
            OpCall::Write(_) => "write",
            OpCall::Audit => "audit",
            OpCall::Ll => "ll",
            OpCall::Sc(_) => "sc",
            OpCall::AuditWriters => "audit_writers",
            OpCall::Append(_) => "append",
            OpCall::Prove(_) => "prove",
            OpCall::ReadOne(_) => "read_one",
            OpCall::ReadAll => "read_all",
            OpCall::Propose(_) => "propose",
        }
    }

    pub fn args_json(&self) -> Vec<Json> {
        match self {
            OpCall::Write(v) | OpCall::Sc(v) | OpCall::Propose(v) => vec![v.to_json()],
            OpCall::Append(x) | OpCall::Prove(x) | OpCall::ReadOne(x) => vec![Json::from(*x)],
            _ => Vec::new(),
        }
    }

    pub fn from_json(name: &str, args: &[Json]) -> Option<OpCall> {
        let value = || args.first().and_then(Value::from_json);
        let res = || args.first().and_then(Json::as_u64).and_then(|x| ResId::try_from(x).ok());
        Some(match name {
            "read" => OpCall::Read,
            "write" => OpCall::Write(value()?),
            "audit" => OpCall::Audit,
            "ll" => OpCall::Ll,
            "sc" => OpCall::Sc(value()?),
            "audit_writers" => OpCall::AuditWriters,
            "append" => OpCall::Append(res()?),
            "prove" => OpCall::Prove(res()?),
            "read_one" => OpCall::ReadOne(res()?),
            "read_all" => OpCall::ReadAll,
            "propose" => OpCall::Propose(value()?),
            _ => return None,
        })
    }
}

impl fmt::Display for OpCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpCall::Write(v) | OpCall::Sc(v) | OpCall::Propose(v) => write!(f, "{}({v})", self.name()),
            OpCall::Append(x) | OpCall::Prove(x) | OpCall::ReadOne(x) => write!(f, "{}({x})", self.name()),
            _ => write!(f, "{}()", self.name()),
        }
    }
}

/// A high-level operation response.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ret {
    Unit,
    Value(Value),
    Bool(bool),
    Pairs(AuditSet),
    Grants(Grants),
}

impl Ret {
    pub fn to_json(&self) -> Json {
        match self {
            Ret::Unit => Json::Null,
            Ret::Value(v) => v.to_json(),
            Ret::Bool(b) => Json::Bool(*b),
            Ret::Pairs(s) => {
                Json::Array(s.iter().map(|(p, v)| Json::Array(vec![Json::from(*p), v.to_json()])).collect())
            }
            Ret::Grants(s) => {
                Json::Array(s.iter().map(|(p, x)| Json::Array(vec![Json::from(*p), Json::from(*x)])).collect())
            }
        }
    }

    /// Parse a response; the shape depends on the operation that produced it.
    pub fn from_json(op: &str, j: &Json) -> Option<Ret> {
        match op {
            "write" | "append" => j.is_null().then_some(Ret::Unit),
            "read" | "ll" | "propose" => Value::from_json(j).map(Ret::Value),
            "sc" | "prove" => j.as_bool().map(Ret::Bool),
            "audit" | "audit_writers" => {
                let mut set = AuditSet::new();
                for pair in j.as_array()? {
                    let pair = pair.as_array()?;
                    let p = Pid::try_from(pair.first()?.as_u64()?).ok()?;
                    set.insert((p, Value::from_json(pair.get(1)?)?));
                }
                Some(Ret::Pairs(set))
            }
            "read_one" | "read_all" => {
                let mut set = Grants::new();
                for pair in j.as_array()? {
                    let pair = pair.as_array()?;
                    let p = Pid::try_from(pair.first()?.as_u64()?).ok()?;
                    let x = ResId::try_from(pair.get(1)?.as_u64()?).ok()?;
                    set.insert((p, x));
                }
                Some(Ret::Grants(set))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Ret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_differs_from_application_values() {
        for v in [Value::Int(0), Value::Bool(false), Value::Bottom, Value::Top] {
            assert_ne!(Value::None, v);
        }
    }

    #[test]
    fn tagged_values_are_unique_per_writer_and_counter() {
        assert_ne!(Value::tagged(1, 2), Value::tagged(2, 1));
        assert_eq!(Value::tagged(3, 7), Value::Int(3007));
    }

    #[test]
    fn value_json_round_trip() {
        for v in [Value::None, Value::Bottom, Value::Top, Value::Bool(true), Value::Int(-4)] {
            assert_eq!(Value::from_json(&v.to_json()), Some(v));
        }
    }

    #[test]
    fn call_json_round_trip() {
        for c in [OpCall::Read, OpCall::Write(Value::Int(5)), OpCall::Prove(2), OpCall::ReadAll] {
            assert_eq!(OpCall::from_json(c.name(), &c.args_json()), Some(c));
        }
    }
}
