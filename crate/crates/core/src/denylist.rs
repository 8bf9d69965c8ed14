//! Immediate deny list over a set of resources. Every resource `x` owns a
//! vector of single-writer auditable registers `AR_x[1..n]`, initially true;
//! process `i` appends by writing false to `AR_x[i]`, and proves by reading
//! every other register of `x`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use crate::error::ObjError;
use crate::register::AuditableRegister;
use crate::sim::trace::ObjectSpec;
use crate::sim::{Ctx, OpFuture, Programs, Scenario, Store, System};
use crate::value::{AuditSet, Grants, OpCall, Pid, ResId, Ret, Value};

#[derive(Debug)]
pub struct DenyList {
    procs: Vec<Pid>,
    ar: BTreeMap<ResId, Vec<AuditableRegister>>,
    // append flags, one set of resources per process
    appended: Vec<Mutex<BTreeSet<ResId>>>,
}

impl DenyList {
    pub fn alloc(store: &mut Store, procs: Vec<Pid>, resources: &BTreeSet<ResId>) -> Result<Self, ObjError> {
        if procs.len() < 2 {
            return Err(ObjError::Config("a deny list needs at least two processes".into()));
        }
        let n = procs.len();
        let mut ar = BTreeMap::new();
        for &x in resources {
            let regs = procs
                .iter()
                .map(|&owner| {
                    let others = procs.iter().copied().filter(|&p| p != owner).collect();
                    let name = format!("AR{x}[{owner}]");
                    AuditableRegister::alloc(store, &name, vec![owner], others, Value::Bool(true), n, false)
                })
                .collect::<Result<Vec<_>, _>>()?;
            ar.insert(x, regs);
        }
        let appended = procs.iter().map(|_| Mutex::new(BTreeSet::new())).collect();
        Ok(Self { procs, ar, appended })
    }

    pub fn resources(&self) -> impl Iterator<Item = ResId> + '_ {
        self.ar.keys().copied()
    }

    fn registers(&self, x: ResId) -> Result<&[AuditableRegister], ObjError> {
        self.ar.get(&x).map(Vec::as_slice).ok_or(ObjError::UnknownResource(x))
    }

    fn index(&self, pid: Pid) -> Result<usize, ObjError> {
        self.procs.iter().position(|&p| p == pid).ok_or_else(|| ObjError::NotPermitted {
            pid,
            op: "deny list".into(),
            why: "not a process of the deny list".into(),
        })
    }

    pub fn local_digest(&self, pid: Pid) -> u64 {
        let flags = self.index(pid).ok().map(|i| self.flags(i).clone());
        let regs: Vec<u64> = self.ar.values().flatten().map(|r| r.local_digest(pid)).collect();
        crate::sim::hash_of(&(flags, regs))
    }

    fn flags(&self, i: usize) -> std::sync::MutexGuard<'_, BTreeSet<ResId>> {
        self.appended[i].lock().unwrap_or_else(|e| e.into_inner())
    }

    pub async fn append(&self, ctx: &Ctx, x: ResId) -> Result<(), ObjError> {
        let regs = self.registers(x)?;
        let i = self.index(ctx.pid())?;
        regs[i].write(ctx, Value::Bool(false)).await?;
        self.flags(i).insert(x);
        Ok(())
    }

    pub async fn prove(&self, ctx: &Ctx, x: ResId) -> Result<bool, ObjError> {
        let regs = self.registers(x)?;
        let i = self.index(ctx.pid())?;
        if self.flags(i).contains(&x) {
            return Ok(false);
        }
        for (j, reg) in regs.iter().enumerate() {
            if j != i && reg.read(ctx).await? == Value::Bool(false) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// One collect over the registers of `x`: processes that read true from
    /// every register other than their own.
    async fn collect(&self, ctx: &Ctx, x: ResId) -> Result<Grants, ObjError> {
        let regs = self.registers(x)?;
        let mut audits: Vec<AuditSet> = Vec::with_capacity(regs.len());
        for reg in regs {
            audits.push(reg.audit(ctx).await?);
        }
        let yes = Value::Bool(true);
        Ok(self
            .procs
            .iter()
            .enumerate()
            .filter(|&(q, &pq)| audits.iter().enumerate().all(|(j, a)| j == q || a.contains(&(pq, yes.clone()))))
            .map(|(_, &pq)| (pq, x))
            .collect())
    }

    pub async fn read_one(&self, ctx: &Ctx, x: ResId) -> Result<Grants, ObjError> {
        self.registers(x)?;
        let mut c2 = Grants::new();
        let mut collects = 0;
        loop {
            let c1 = std::mem::take(&mut c2);
            c2 = self.collect(ctx, x).await?;
            collects += 1;
            ctx.note(|n| n.loop_iters = collects);
            if c1 == c2 {
                return Ok(c2);
            }
        }
    }

    pub async fn read_all(&self, ctx: &Ctx) -> Result<Grants, ObjError> {
        let mut c2 = Grants::new();
        let mut sweeps = 0;
        loop {
            let c1 = std::mem::take(&mut c2);
            for x in self.resources() {
                c2.extend(self.collect(ctx, x).await?);
            }
            sweeps += 1;
            ctx.note(|n| n.loop_iters = sweeps);
            if c1 == c2 {
                return Ok(c2);
            }
        }
    }
}

/// Deny list over `procs` processes (ids `1..=procs`) and `resources`.
/// `managers` and `provers` restrict who may append and prove; `None` lets
/// every process do both. Auditors (ids after the processes) may only read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenyListConfig {
    pub procs: usize,
    pub resources: BTreeSet<ResId>,
    pub managers: Option<BTreeSet<Pid>>,
    pub provers: Option<BTreeSet<Pid>>,
    pub auditors: usize,
}

impl DenyListConfig {
    pub fn new(procs: usize, resources: usize) -> Self {
        Self { procs, resources: (1..=resources as ResId).collect(), managers: None, provers: None, auditors: 0 }
    }

    pub fn with_auditors(mut self, auditors: usize) -> Self {
        self.auditors = auditors;
        self
    }

    pub fn proc_pids(&self) -> Vec<Pid> {
        (1..=self.procs as Pid).collect()
    }

    pub fn auditor_pids(&self) -> Vec<Pid> {
        let n = self.procs as Pid;
        (n + 1..=n + self.auditors as Pid).collect()
    }
}

#[derive(Debug)]
pub struct DenyListSystem {
    pub list: DenyList,
    cfg: DenyListConfig,
}

impl Scenario for DenyListConfig {
    fn build(&self, store: &mut Store) -> Result<Arc<dyn System>, ObjError> {
        let list = DenyList::alloc(store, self.proc_pids(), &self.resources)?;
        Ok(Arc::new(DenyListSystem { list, cfg: self.clone() }))
    }
}

impl System for DenyListSystem {
    fn spec(&self) -> ObjectSpec {
        ObjectSpec::Denylist { procs: self.list.procs.clone(), resources: self.cfg.resources.iter().copied().collect() }
    }

    fn check_programs(&self, programs: &Programs) -> Result<(), ObjError> {
        let member = |pid: Pid| self.list.procs.contains(&pid);
        let allowed =
            |set: &Option<BTreeSet<Pid>>, pid: Pid| member(pid) && set.as_ref().is_none_or(|s| s.contains(&pid));
        for (&pid, script) in programs {
            for call in script {
                let (ok, res) = match call {
                    OpCall::Append(x) => (allowed(&self.cfg.managers, pid), Some(*x)),
                    OpCall::Prove(x) => (allowed(&self.cfg.provers, pid), Some(*x)),
                    OpCall::ReadOne(x) => (member(pid) || self.cfg.auditor_pids().contains(&pid), Some(*x)),
                    OpCall::ReadAll => (member(pid) || self.cfg.auditor_pids().contains(&pid), None),
                    _ => (false, None),
                };
                if !ok {
                    return Err(ObjError::NotPermitted {
                        pid,
                        op: call.name().into(),
                        why: "not allowed for this process on a deny list".into(),
                    });
                }
                if let Some(x) = res.filter(|x| !self.cfg.resources.contains(x)) {
                    return Err(ObjError::UnknownResource(x));
                }
            }
        }
        Ok(())
    }

    fn local_digest(&self, pid: Pid) -> Option<u64> {
        Some(self.list.local_digest(pid))
    }

    fn invoke(self: Arc<Self>, ctx: Ctx, call: OpCall) -> OpFuture {
        Box::pin(async move {
            match call {
                OpCall::Append(x) => self.list.append(&ctx, x).await.map(|()| Ret::Unit),
                OpCall::Prove(x) => self.list.prove(&ctx, x).await.map(Ret::Bool),
                OpCall::ReadOne(x) => self.list.read_one(&ctx, x).await.map(Ret::Grants),
                OpCall::ReadAll => self.list.read_all(&ctx).await.map(Ret::Grants),
                other => Err(ObjError::NotPermitted {
                    pid: ctx.pid(),
                    op: other.name().into(),
                    why: "unsupported by a deny list".into(),
                }),
            }
        })
    }
}
