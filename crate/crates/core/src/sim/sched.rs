//! Deterministic scheduling of process scripts over a [`System`].

use std::collections::hash_map::DefaultHasher;
use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::future::Future;
use std::hash::{Hash, Hasher};
use std::pin::Pin;
use std::sync::Arc;
use std::task::{Context, Poll, Waker};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ObjError, SimError};
use crate::sim::ctx::{Ctx, Mode, Runtime};
use crate::sim::store::{Access, Store};
use crate::sim::trace::{ObjectSpec, Trace};
use crate::value::{OpCall, Pid, Ret};

pub type OpFuture = Pin<Box<dyn Future<Output = Result<Ret, ObjError>>>>;

/// Per-process operation scripts.
pub type Programs = BTreeMap<Pid, Vec<OpCall>>;

/// An instantiated object under test.
pub trait System: Send + Sync {
    fn spec(&self) -> ObjectSpec;

    /// Reject scripts the object's usage rules forbid.
    fn check_programs(&self, programs: &Programs) -> Result<(), ObjError>;

    fn invoke(self: Arc<Self>, ctx: Ctx, call: OpCall) -> OpFuture;

    /// Digest of the local variables `pid` keeps between operations. With
    /// `None` the explorer keys states on everything the process has observed.
    fn local_digest(&self, _pid: Pid) -> Option<u64> {
        None
    }
}

/// Something that can allocate a fresh [`System`] in an empty store.
pub trait Scenario {
    fn build(&self, store: &mut Store) -> Result<Arc<dyn System>, ObjError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    RoundRobin,
    Random(u64),
    /// Leftmost interleaving (lowest enabled pid first) cut at a step bound.
    Exhaustive(usize),
}

/// Guard against runaway executions; wait-free objects never get close.
pub const STEP_LIMIT: usize = 50_000_000;

struct Proc {
    pid: Pid,
    script: Vec<OpCall>,
    next: usize,
    current: Option<(OpCall, OpFuture)>,
    // observations made during the current operation
    obs: u64,
    // completed operations with responses and real-time predecessors
    hist: u64,
    // call and real-time predecessors of the current operation
    seed: u64,
}

/// One execution in progress.
pub struct Sim {
    rt: Arc<Runtime>,
    sys: Arc<dyn System>,
    procs: Vec<Proc>,
    completed: BTreeSet<(Pid, usize)>,
    steps: usize,
}

fn poll_once(f: &mut OpFuture) -> Poll<Result<Ret, ObjError>> {
    let mut cx = Context::from_waker(Waker::noop());
    f.as_mut().poll(&mut cx)
}

pub(crate) fn hash_of<T: Hash>(t: &T) -> u64 {
    let mut h = DefaultHasher::new();
    t.hash(&mut h);
    h.finish()
}

impl Sim {
    pub fn new(scenario: &dyn Scenario, programs: &Programs) -> Result<Self, SimError> {
        let mut store = Store::new();
        let sys = scenario.build(&mut store).map_err(SimError::Config)?;
        sys.check_programs(programs).map_err(SimError::WellFormedness)?;
        let procs = programs
            .iter()
            .map(|(&pid, script)| Proc {
                pid,
                script: script.clone(),
                next: 0,
                current: None,
                obs: 0,
                hist: 0,
                seed: 0,
            })
            .collect();
        Ok(Self { rt: Runtime::new(store, Mode::Sim), sys, procs, completed: BTreeSet::new(), steps: 0 })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Processes with a pending operation or script left.
    pub fn enabled(&self) -> Vec<Pid> {
        self.procs.iter().filter(|p| p.current.is_some() || p.next < p.script.len()).map(|p| p.pid).collect()
    }

    /// Whether `pid` is in the middle of an operation.
    pub fn pending(&self, pid: Pid) -> bool {
        self.procs.iter().any(|p| p.pid == pid && p.current.is_some())
    }

    /// Run `pid` through its next operation, or the rest of its current one.
    pub fn run_op(&mut self, pid: Pid) -> Result<(), SimError> {
        self.step(pid)?;
        while self.pending(pid) {
            self.step(pid)?;
        }
        Ok(())
    }

    /// The shared-memory access of `pid`'s next step.
    pub fn access(&self, pid: Pid) -> Access {
        if self.pending(pid) {
            self.rt.next_access(pid).unwrap_or(Access::Invoke)
        } else {
            Access::Invoke
        }
    }

    pub fn has_pending(&self) -> bool {
        self.procs.iter().any(|p| p.current.is_some())
    }

    /// Run `pid` up to and including its next primitive, or to the end of an
    /// operation that needs no primitive.
    pub fn step(&mut self, pid: Pid) -> Result<(), SimError> {
        let at = self.procs.iter().position(|p| p.pid == pid).expect("unknown pid");
        let mark = self.rt.log().events.len();
        let proc = &mut self.procs[at];
        let fresh = proc.current.is_none();
        if fresh {
            let call = proc.script[proc.next].clone();
            proc.next += 1;
            self.rt.log().invoke(pid, &call);
            proc.seed = hash_of(&(&call, &self.completed));
            proc.obs = match self.sys.local_digest(pid) {
                Some(d) => proc.seed ^ d.rotate_left(17),
                None => proc.obs.rotate_left(5) ^ proc.seed,
            };
            let fut = Arc::clone(&self.sys).invoke(self.rt.ctx(pid), call.clone());
            proc.current = Some((call, fut));
        }
        let (call, fut) = proc.current.as_mut().expect("op in progress");
        let mut outcome = poll_once(fut);
        if fresh && outcome.is_pending() {
            outcome = poll_once(fut);
        }
        self.steps += 1;
        {
            let log = self.rt.log();
            for e in &log.events[mark..] {
                proc.obs = proc.obs.rotate_left(7) ^ hash_of(&e.kind);
            }
        }
        if let Poll::Ready(res) = outcome {
            let call = call.clone();
            proc.current = None;
            match res {
                Ok(ret) => {
                    proc.hist = proc.hist.rotate_left(11) ^ hash_of(&(&ret, proc.seed));
                    self.rt.log().respond(pid, &call, ret)
                }
                Err(source) => return Err(SimError::Object { pid, op: call.name().to_string(), source }),
            }
            self.completed.insert((pid, proc.next - 1));
        }
        Ok(())
    }

    /// Key identifying the state reached: shared memory, each process's
    /// observations and the real-time order among operations so far.
    pub fn state_key(&self) -> u128 {
        let store_hash = hash_of(&*self.rt.store());
        let mut h = DefaultHasher::new();
        for p in &self.procs {
            let local = match p.current {
                Some(_) => Some(p.obs),
                None => self.sys.local_digest(p.pid),
            };
            (p.pid, p.next, p.hist, local.unwrap_or(p.obs)).hash(&mut h);
        }
        (u128::from(store_hash) << 64) | u128::from(h.finish())
    }

    pub fn finish(self, exhausted: bool) -> Trace {
        let mut log = self.rt.log();
        Trace {
            events: std::mem::take(&mut log.events),
            notes: std::mem::take(&mut log.notes),
            meta: Some(self.sys.spec()),
            exhausted,
        }
    }
}

/// Execute `programs` under `schedule` and return the recorded trace.
pub fn run(scenario: &dyn Scenario, programs: &Programs, schedule: &Schedule) -> Result<Trace, SimError> {
    let mut sim = Sim::new(scenario, programs)?;
    match schedule {
        Schedule::RoundRobin => {
            let mut turn = 0usize;
            loop {
                let enabled = sim.enabled();
                if enabled.is_empty() {
                    break;
                }
                let pid = enabled.iter().copied().find(|&p| p as usize > turn).unwrap_or(enabled[0]);
                turn = pid as usize;
                sim.step(pid)?;
                if sim.steps() >= STEP_LIMIT {
                    return Err(SimError::StepLimit(STEP_LIMIT));
                }
            }
        }
        Schedule::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            loop {
                let enabled = sim.enabled();
                if enabled.is_empty() {
                    break;
                }
                sim.step(enabled[rng.gen_range(0..enabled.len())])?;
                if sim.steps() >= STEP_LIMIT {
                    return Err(SimError::StepLimit(STEP_LIMIT));
                }
            }
        }
        Schedule::Exhaustive(bound) => loop {
            let enabled = sim.enabled();
            if enabled.is_empty() {
                break;
            }
            if sim.steps() >= *bound {
                let pending = sim.has_pending();
                let trace = sim.finish(true);
                return if pending { Err(SimError::ScheduleExhausted(Box::new(trace))) } else { Ok(trace) };
            }
            sim.step(enabled[0])?;
        },
    }
    Ok(sim.finish(false))
}

/// Execute with one OS thread per process. Only invocations and responses
/// are recorded; there is no global primitive order.
pub fn run_threads(scenario: &dyn Scenario, programs: &Programs) -> Result<Trace, SimError> {
    let mut store = Store::new();
    let sys = scenario.build(&mut store).map_err(SimError::Config)?;
    sys.check_programs(programs).map_err(SimError::WellFormedness)?;
    let rt = Runtime::new(store, Mode::Threads);
    let results: Vec<Result<(), SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = programs
            .iter()
            .map(|(&pid, script)| {
                let rt = Arc::clone(&rt);
                let sys = Arc::clone(&sys);
                s.spawn(move || {
                    for call in script {
                        rt.log().invoke(pid, call);
                        let mut fut = Arc::clone(&sys).invoke(rt.ctx(pid), call.clone());
                        let res = loop {
                            if let Poll::Ready(r) = poll_once(&mut fut) {
                                break r;
                            }
                        };
                        match res {
                            Ok(ret) => rt.log().respond(pid, call, ret),
                            Err(source) => return Err(SimError::Object { pid, op: call.name().to_string(), source }),
                        }
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("process thread panicked")).collect()
    });
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    let mut log = rt.log();
    Ok(Trace {
        events: std::mem::take(&mut log.events),
        notes: std::mem::take(&mut log.notes),
        meta: Some(sys.spec()),
        exhausted: false,
    })
}

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    /// Maximum number of steps per interleaving.
    pub depth_bound: usize,
    /// Maximum number of interleavings to visit, pruned ones included, before
    /// failing with `BudgetExceeded`.
    pub cap: usize,
    /// Skip interleavings that reach an already explored state. Every distinct
    /// history is still produced, but fewer than the multinomial number of traces.
    pub memoize: bool,
    /// Sleep-set reduction: explore one order of each run of commuting steps.
    /// Every history is still produced.
    pub reduce: bool,
    /// Also yield the prefix of every pruned interleaving, marked `exhausted`.
    pub include_pruned: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self { depth_bound: 10_000, cap: 1_000_000, memoize: false, reduce: false, include_pruned: false }
    }
}

impl ExploreOptions {
    /// Memoization and sleep sets on, no trace cap.
    pub fn reduced() -> Self {
        Self { memoize: true, reduce: true, cap: usize::MAX, ..Self::default() }
    }
}

enum Leaf {
    Done(Trace),
    Pruned(Option<Trace>),
}

struct Choice {
    enabled: Vec<Pid>,
    access: Vec<Access>,
    /// Processes whose next step need not be tried here.
    sleep: Vec<Pid>,
    idx: usize,
}

impl Choice {
    fn first_awake(&self, from: usize) -> Option<usize> {
        (from..self.enabled.len()).find(|&i| !self.sleep.contains(&self.enabled[i]))
    }

    /// Sleep set of the child reached by taking `enabled[idx]`: every
    /// process already covered here whose step commutes with the chosen one.
    fn child_sleep(&self) -> Vec<Pid> {
        let chosen = self.access[self.idx];
        self.enabled
            .iter()
            .enumerate()
            .filter(|&(i, p)| i != self.idx && (i < self.idx || self.sleep.contains(p)))
            .filter(|&(i, _)| self.access[i].independent(chosen))
            .map(|(_, &p)| p)
            .collect()
    }
}

/// Depth-first enumeration of interleavings, re-executing each schedule
/// prefix from scratch.
pub struct Explorer<'a> {
    scenario: &'a dyn Scenario,
    programs: Programs,
    opts: ExploreOptions,
    stack: Vec<Choice>,
    // state key -> processes left unexplored there so far
    seen: HashMap<u128, Vec<Pid>>,
    started: bool,
    done: bool,
    yielded: usize,
    pruned: usize,
}

pub fn explore<'a>(scenario: &'a dyn Scenario, programs: &Programs, opts: ExploreOptions) -> Explorer<'a> {
    Explorer {
        scenario,
        programs: programs.clone(),
        opts,
        stack: Vec::new(),
        seen: HashMap::new(),
        started: false,
        done: false,
        yielded: 0,
        pruned: 0,
    }
}

impl Explorer<'_> {
    /// Interleavings cut short because they reached a known state or only
    /// had steps left that were covered elsewhere.
    pub fn pruned(&self) -> usize {
        self.pruned
    }

    /// Distinct states recorded by memoization.
    pub fn states(&self) -> usize {
        self.seen.len()
    }

    /// Complete interleavings reached so far.
    pub fn yielded(&self) -> usize {
        self.yielded
    }

    fn prune(&mut self, sim: Sim) -> Leaf {
        self.pruned += 1;
        Leaf::Pruned(self.opts.include_pruned.then(|| sim.finish(true)))
    }

    /// Execute the current prefix, extend it leftmost to a leaf, and return
    /// the trace unless the leaf was pruned.
    fn descend(&mut self) -> Result<Leaf, SimError> {
        let mut sim = Sim::new(self.scenario, &self.programs)?;
        for c in &self.stack {
            sim.step(c.enabled[c.idx])?;
        }
        loop {
            let enabled = sim.enabled();
            if enabled.is_empty() {
                return Ok(Leaf::Done(sim.finish(false)));
            }
            if sim.steps() >= self.opts.depth_bound {
                let pending = sim.has_pending();
                return Ok(Leaf::Done(sim.finish(pending)));
            }
            let mut sleep = match self.stack.last() {
                Some(parent) if self.opts.reduce => parent.child_sleep(),
                _ => Vec::new(),
            };
            if self.opts.memoize {
                match self.seen.entry(sim.state_key()) {
                    Entry::Vacant(v) => {
                        v.insert(sleep.clone());
                    }
                    Entry::Occupied(mut o) => {
                        let before = o.get_mut();
                        if before.iter().all(|p| sleep.contains(p)) {
                            return Ok(self.prune(sim));
                        }
                        // Only the steps skipped last time are still owed.
                        let owed: Vec<Pid> = before.iter().copied().filter(|p| !sleep.contains(p)).collect();
                        before.retain(|p| sleep.contains(p));
                        sleep = enabled.iter().copied().filter(|p| !owed.contains(p)).collect();
                    }
                }
            }
            let access = enabled.iter().map(|&p| sim.access(p)).collect();
            let mut node = Choice { enabled, access, sleep, idx: 0 };
            let Some(idx) = node.first_awake(0) else {
                return Ok(self.prune(sim));
            };
            node.idx = idx;
            let pid = node.enabled[idx];
            self.stack.push(node);
            sim.step(pid)?;
        }
    }

    fn backtrack(&mut self) {
        while let Some(top) = self.stack.last_mut() {
            if let Some(i) = top.first_awake(top.idx + 1) {
                top.idx = i;
                return;
            }
            self.stack.pop();
        }
        self.done = true;
    }
}

impl Iterator for Explorer<'_> {
    type Item = Result<Trace, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done {
                return None;
            }
            if self.started {
                self.backtrack();
                if self.done {
                    return None;
                }
            }
            self.started = true;
            match self.descend() {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(leaf) => {
                    self.yielded += usize::from(matches!(leaf, Leaf::Done(_)));
                    if self.yielded + self.pruned > self.opts.cap {
                        self.done = true;
                        return Some(Err(SimError::BudgetExceeded { cap: self.opts.cap }));
                    }
                    if let Leaf::Pruned(Some(t)) | Leaf::Done(t) = leaf {
                        return Some(Ok(t));
                    }
                }
            }
        }
    }
}
