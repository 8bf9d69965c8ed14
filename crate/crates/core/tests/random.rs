use auditsim::invariants::check_all;
use auditsim::sim::{run, Programs, Scenario, Schedule};
use auditsim::workload::{self, Workload};
use auditsim::{check_decisions, ConsensusConfig, DenyListConfig, LlScConfig, RegisterConfig};

fn invariants_hold(sc: &dyn Scenario, programs: impl Fn(u64) -> Programs, seeds: u64) {
    for seed in 0..seeds {
        let t = run(sc, &programs(seed), &Schedule::Random(seed)).unwrap();
        if let Err(e) = check_all(&t) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn register_runs() {
    let cfg = RegisterConfig::new(3, 3).with_auditors(1);
    invariants_hold(&cfg, |s| workload::register(&cfg, 8, Workload::Random(s)), 300);
}

#[test]
fn llsc_runs() {
    let cfg = LlScConfig::new(4).with_auditors(1);
    invariants_hold(&cfg, |s| workload::llsc(&cfg, 8, Workload::Random(s)), 300);
}

// read_all may need more sweeps than read_one needs collects
#[test]
fn denylist_runs() {
    let cfg = DenyListConfig::new(3, 2).with_auditors(1);
    invariants_hold(&cfg, |s| workload::denylist(&cfg, 6, Workload::Random(s)), 300);
}

#[test]
fn consensus_decides() {
    for (p, m) in [(2, 1), (3, 1), (3, 2), (5, 2), (6, 3)] {
        let cfg = ConsensusConfig::new(p, m);
        for seed in 0..200 {
            let t = run(&cfg, &workload::consensus(&cfg), &Schedule::Random(seed)).unwrap();
            let v = check_decisions(&t).unwrap_or_else(|e| panic!("{p}/{m} seed {seed}: {e}"));
            assert!(v.is_some());
        }
    }
}
