//! Step-complexity statistics over random workloads.

use std::collections::BTreeMap;

use crate::error::SimError;
use crate::invariants::op_steps;
use crate::sim::{run, Schedule, Trace};
use crate::workload::{self, Workload};
use crate::{LlScConfig, RegisterConfig};

/// Calibrated bound: every READ, WRITE, AUDIT, LL and SC takes at most
/// `FROZEN_C * k` primitive steps, `k` being the number of processes
/// (m + n for a register, n for LL/SC).
pub const FROZEN_C: f64 = 11.0;

/// Largest share the quadratic term of a fit may contribute at the top of
/// the measured range before growth counts as superlinear.
pub const SUPERLINEAR_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindStats {
    pub ops: usize,
    pub max: usize,
    pub mean: f64,
}

/// Per-operation-kind primitive counts at one system size.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub size: usize,
    pub kinds: BTreeMap<&'static str, KindStats>,
}

impl StepReport {
    pub fn from_traces<'a>(size: usize, traces: impl IntoIterator<Item = &'a Trace>) -> Self {
        let mut acc: BTreeMap<&'static str, (usize, usize, usize)> = BTreeMap::new();
        for t in traces {
            for s in op_steps(t).into_iter().filter(|s| s.complete) {
                let e = acc.entry(s.name).or_default();
                e.0 += 1;
                e.1 = e.1.max(s.steps);
                e.2 += s.steps;
            }
        }
        let kinds = acc
            .into_iter()
            .map(|(k, (ops, max, sum))| (k, KindStats { ops, max, mean: sum as f64 / ops as f64 }))
            .collect();
        Self { size, kinds }
    }

    pub fn max_steps(&self) -> usize {
        self.kinds.values().map(|k| k.max).max().unwrap_or(0)
    }

    /// Smallest C with max ≤ C·size for every kind.
    pub fn c(&self) -> f64 {
        self.max_steps() as f64 / self.size as f64
    }
}

/// Split `size` processes into writers and readers, writers rounding down.
pub fn split(size: usize) -> (usize, usize) {
    let n = (size / 2).max(1);
    (n, size - n)
}

/// Random register workload of about `total_ops` operations over `n` writers
/// and `m` readers, run under `runs` random schedules.
pub fn register_steps(n: usize, m: usize, total_ops: usize, runs: u64, seed: u64) -> Result<StepReport, SimError> {
    let cfg = RegisterConfig::new(n, m);
    let per = total_ops.div_ceil(n + m);
    let traces = (0..runs)
        .map(|r| run(&cfg, &workload::register(&cfg, per, Workload::Random(seed + r)), &Schedule::Random(seed + r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StepReport::from_traces(n + m, &traces))
}

pub fn llsc_steps(n: usize, total_ops: usize, runs: u64, seed: u64) -> Result<StepReport, SimError> {
    let cfg = LlScConfig::new(n);
    let per = total_ops.div_ceil(n);
    let traces = (0..runs)
        .map(|r| run(&cfg, &workload::llsc(&cfg, per, Workload::Random(seed + r)), &Schedule::Random(seed + r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StepReport::from_traces(n, &traces))
}

/// Linear and quadratic least-squares fits of `ys` against `xs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub intercept: f64,
    pub slope: f64,
    /// Coefficient of x² in the quadratic fit.
    pub quad: f64,
    /// Share of the quadratic fit's value at the largest x due to the x² term.
    pub superlinear_share: f64,
}

impl Fit {
    pub fn is_linear(&self) -> bool {
        self.superlinear_share <= SUPERLINEAR_TOLERANCE
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *o = det(m) / d;
    }
    Some(out)
}

/// Needs at least three distinct x values.
pub fn fit(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    assert_eq!(xs.len(), ys.len());
    let k = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = k * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    let slope = (k * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / k;
    let p = |e: i32| xs.iter().map(|x| x.powi(e)).sum::<f64>();
    let q = |e: i32| xs.iter().zip(ys).map(|(x, y)| x.powi(e) * y).sum::<f64>();
    let [c0, c1, c2] = solve3([[k, p(1), p(2)], [p(1), p(2), p(3)], [p(2), p(3), p(4)]], [q(0), q(1), q(2)])?;
    let xmax = xs.iter().copied().fold(f64::MIN, f64::max);
    let quad_part = c2 * xmax * xmax;
    let total = (c0 + c1 * xmax + quad_part).abs().max(1e-12);
    let superlinear_share = if c2 > 0.0 { quad_part / total } else { 0.0 };
    Some(Fit { intercept, slope, quad: c2, superlinear_share })
}
