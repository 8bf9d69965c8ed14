//! Exhaustive search for a linearization, with memoization on the set of
//! placed operations and the abstract state reached.

use std::collections::HashSet;

use crate::checker::history::History;
use crate::checker::spec::{DenyListSpec, SequentialSpec};
use crate::checker::{CheckError, Linearization, SpecChoice, Verdict, Violation};

/// Default number of search nodes before giving up.
pub const DEFAULT_BUDGET: usize = 5_000_000;

struct Search<'a, S: SequentialSpec> {
    h: &'a History,
    spec: &'a S,
    // ops that must be placed before each op
    before: Vec<u64>,
    complete: u64,
    failed: HashSet<(u64, S::State)>,
    budget: usize,
    visited: usize,
}

impl<S: SequentialSpec> Search<'_, S> {
    fn dfs(&mut self, done: u64, state: &S::State, lin: &mut Linearization) -> Result<bool, CheckError> {
        if done & self.complete == self.complete {
            return Ok(true);
        }
        if self.failed.contains(&(done, state.clone())) {
            return Ok(false);
        }
        self.visited += 1;
        if self.visited > self.budget {
            return Err(CheckError::BudgetExceeded { budget: self.budget });
        }
        for (b, op) in self.h.ops.iter().enumerate() {
            let bit = 1u64 << b;
            if done & bit != 0 || self.before[b] & !done != 0 {
                continue;
            }
            let (ret, next) = self
                .spec
                .apply(state, op.proc, &op.call)
                .ok_or_else(|| CheckError::Unsupported(format!("{} is not an operation of this object", op.call)))?;
            if op.ret().is_some_and(|r| *r != ret) {
                continue;
            }
            lin.order.push(b);
            if !op.is_complete() {
                lin.added.insert(b, ret);
            }
            if self.dfs(done | bit, &next, lin)? {
                return Ok(true);
            }
            lin.order.pop();
            lin.added.remove(&b);
        }
        self.failed.insert((done, state.clone()));
        Ok(false)
    }
}

/// A linearization of `h`, trying each pending operation both included
/// (with the response the specification gives) and left out.
pub fn find_linearization<S: SequentialSpec>(
    h: &History,
    spec: &S,
    budget: usize,
) -> Result<Option<Linearization>, CheckError> {
    if h.len() > 64 {
        return Err(CheckError::TooManyOps(h.len()));
    }
    let before =
        h.ops.iter().map(|b| h.ops.iter().filter(|a| a.precedes(b)).fold(0u64, |m, a| m | (1 << a.id))).collect();
    let complete = h.ops.iter().filter(|o| o.is_complete()).fold(0u64, |m, o| m | (1 << o.id));
    let mut s = Search { h, spec, before, complete, failed: HashSet::new(), budget, visited: 0 };
    let mut lin = Linearization::default();
    Ok(s.dfs(0, &spec.init(), &mut lin)?.then_some(lin))
}

fn check_generic<S: SequentialSpec>(h: &History, spec: &S, budget: usize) -> Result<Verdict, CheckError> {
    if let Some(lin) = find_linearization(h, spec, budget)? {
        return Ok(Verdict::ok(lin));
    }
    // Shortest prefix that already fails. Extending a history with an
    // invocation never breaks linearizability, so only responses can.
    let events = h.event_count();
    for k in 1..=events {
        let p = h.prefix(k);
        if find_linearization(&p, spec, budget)?.is_none() {
            let last = p.ops.iter().filter_map(|o| o.response.as_ref().map(|r| (r.0, o.id))).max();
            return Ok(Verdict::rejected(Violation {
                reason: "no order of the operations extends real time and replays under the specification".into(),
                prefix_events: Some(k),
                ops: p.ops.iter().map(|o| o.id).collect(),
                culprit: last.map(|(_, id)| id),
            }));
        }
    }
    unreachable!("the full history failed, so some prefix does")
}

pub fn check_bruteforce_with(h: &History, spec: &SpecChoice, budget: usize) -> Result<Verdict, CheckError> {
    match spec {
        SpecChoice::Register(s) => check_generic(h, s, budget),
        SpecChoice::LlSc(s) => check_generic(h, s, budget),
        SpecChoice::DenyList => check_generic(h, &DenyListSpec, budget),
    }
}

pub fn check_bruteforce(h: &History, spec: &SpecChoice) -> Result<Verdict, CheckError> {
    check_bruteforce_with(h, spec, DEFAULT_BUDGET)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::history::HOp;
    use crate::checker::spec::RegisterSpec;
    use crate::checker::verify_certificate;
    use crate::value::{OpCall, Ret, Value};

    fn reg() -> SpecChoice {
        SpecChoice::Register(RegisterSpec { v0: Value::Int(0) })
    }

    fn op(id: usize, proc: u32, call: OpCall, invoked: u64, response: Option<(u64, Ret)>) -> HOp {
        HOp { id, proc, call, invoked, response }
    }

    #[test]
    fn empty_history_is_linearizable() {
        let v = check_bruteforce(&History::default(), &reg()).unwrap();
        assert!(v.linearizable);
        assert_eq!(v.witness.unwrap().order, Vec::<usize>::new());
    }

    #[test]
    fn write_then_read_is_linearizable() {
        let h = History {
            ops: vec![
                op(0, 1, OpCall::Write(Value::Int(5)), 0, Some((1, Ret::Unit))),
                op(1, 2, OpCall::Read, 2, Some((3, Ret::Value(Value::Int(5))))),
            ],
        };
        let v = check_bruteforce(&h, &reg()).unwrap();
        let w = v.witness.unwrap();
        assert_eq!(w.order, vec![0, 1]);
        assert!(verify_certificate(&h, &RegisterSpec { v0: Value::Int(0) }, &w));
    }

    #[test]
    fn read_of_unwritten_value_is_rejected() {
        let h = History {
            ops: vec![
                op(0, 1, OpCall::Write(Value::Int(5)), 0, Some((3, Ret::Unit))),
                op(1, 2, OpCall::Read, 1, Some((2, Ret::Value(Value::Int(3))))),
            ],
        };
        let v = check_bruteforce(&h, &reg()).unwrap();
        assert!(!v.linearizable);
        let viol = v.violation.unwrap();
        assert_eq!(viol.prefix_events, Some(3));
        assert_eq!(viol.culprit, Some(1));
    }

    #[test]
    fn pending_operations_may_take_effect_or_not() {
        // A pending write explains a read of its value...
        let h = History {
            ops: vec![
                op(0, 1, OpCall::Write(Value::Int(5)), 0, None),
                op(1, 2, OpCall::Read, 1, Some((2, Ret::Value(Value::Int(5))))),
                op(2, 2, OpCall::Read, 3, Some((4, Ret::Value(Value::Int(5))))),
            ],
        };
        let v = check_bruteforce(&h, &reg()).unwrap();
        assert_eq!(v.witness.unwrap().added.get(&0), Some(&Ret::Unit));
        // ...and can be left out when nobody saw it.
        let h = History {
            ops: vec![
                op(0, 1, OpCall::Write(Value::Int(5)), 0, None),
                op(1, 2, OpCall::Read, 1, Some((2, Ret::Value(Value::Int(0))))),
            ],
        };
        assert!(check_bruteforce(&h, &reg()).unwrap().linearizable);
    }

    #[test]
    fn audit_must_match_preceding_reads() {
        let h = History {
            ops: vec![
                op(0, 2, OpCall::Read, 0, Some((1, Ret::Value(Value::Int(0))))),
                op(1, 3, OpCall::Audit, 2, Some((3, Ret::Pairs([(2, Value::Int(1))].into())))),
            ],
        };
        assert!(!check_bruteforce(&h, &reg()).unwrap().linearizable);
    }

    #[test]
    fn budget_is_enforced() {
        let ops = (0..12)
            .map(|i| op(i, i as u32 + 1, OpCall::Write(Value::Int(i as i64)), 0, Some((100, Ret::Unit))))
            .chain([op(12, 20, OpCall::Read, 101, Some((102, Ret::Value(Value::Int(-7)))))])
            .collect();
        let h = History { ops };
        assert!(matches!(check_bruteforce_with(&h, &reg(), 50), Err(CheckError::BudgetExceeded { budget: 50 })));
    }
}
