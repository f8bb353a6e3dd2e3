//! Built-in oracle checks: DBA worked examples, waste formulas, CBR rate,
//! slice size and percentile rule.

use std::collections::BTreeMap;

use crate::analytics::{ipact_waste_percent, wmax_per_onu};
use crate::dba::{classify, distribute_excess, Demand, DemandSet, ExcessPolicy, ExcessPool};
use crate::metrics::percentile_set;
use crate::sched::slice_bytes;
use crate::time::SimTime;
use crate::traffic::{cbr_arrivals, CbrSpec};

/// Signature of the excess distribution under test.
pub type DistributeFn = fn(ExcessPolicy, &DemandSet, &[usize], &ExcessPool) -> BTreeMap<usize, u64>;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn over_grants(dist: DistributeFn, policy: ExcessPolicy, requests: &[u64], wmax: u64, e: u64) -> Vec<u64> {
    let d: DemandSet = requests
        .iter()
        .enumerate()
        .map(|(i, &r)| Demand::new(i, r, wmax))
        .collect();
    let (_, over) = classify(&d);
    let pool = ExcessPool {
        total_bytes: e,
        contributors: Vec::new(),
    };
    let g = dist(policy, &d, &over, &pool);
    over.iter().map(|o| g.get(o).copied().unwrap_or(0)).collect()
}

fn check<T: PartialEq + std::fmt::Debug>(name: &'static str, got: T, want: T) -> CheckResult {
    CheckResult {
        name,
        passed: got == want,
        detail: format!("got {got:?}, expected {want:?}"),
    }
}

/// Runs every check against `dist`.
pub fn run_checks(dist: DistributeFn) -> Vec<CheckResult> {
    let ms = SimTime::from_millis(1);
    let cbr = {
        let spec = CbrSpec::default();
        let horizon = SimTime::from_secs(1);
        let bytes: u64 = cbr_arrivals(spec, horizon).map(|f| f.payload_bytes as u64).sum();
        bytes * 8
    };
    let p = percentile_set(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap_or_default();
    vec![
        check("dba1_request_proportional", over_grants(dist, ExcessPolicy::Dba1, &[12000, 8000], 5000, 4000), vec![7400, 6600]),
        check("dba2_equal_split", over_grants(dist, ExcessPolicy::Dba2, &[12000, 8000], 5000, 4000), vec![7000, 7000]),
        check("dba3_clamped_split", over_grants(dist, ExcessPolicy::Dba3, &[12000, 6000], 5000, 4000), vec![7000, 6000]),
        check("wdba_excess_proportional", over_grants(dist, ExcessPolicy::Wdba, &[12000, 8000], 5000, 4000), vec![7800, 6200]),
        check("wdba1_clamped", over_grants(dist, ExcessPolicy::Wdba1, &[5200, 12000], 5000, 8000), vec![5200, 12000]),
        check("ipact_waste_100us", ipact_waste_percent(ms, SimTime::from_micros(100)), 10.0),
        check("ipact_waste_200us", ipact_waste_percent(ms, SimTime::from_micros(200)), 20.0),
        check("wmax_per_onu_1us_guard", wmax_per_onu(ms, 32, SimTime::from_micros(1)).ok(), Some(SimTime(30_250))),
        check("cbr_rate_44_8_mbps", cbr, 44_800_000),
        check("slice_bytes_25g", slice_bytes(0.015, ms, 25e9), 46_875),
        check("nearest_rank_percentiles", p.values().copied().collect::<Vec<_>>(), vec![10.0, 30.0, 50.0, 80.0, 100.0]),
    ]
}

pub fn selftest() -> Vec<CheckResult> {
    run_checks(distribute_excess)
}

/// One line per check, `PASS name` or `FAIL name: detail`.
pub fn render(results: &[CheckResult]) -> String {
    results
        .iter()
        .map(|r| {
            if r.passed {
                format!("PASS {}\n", r.name)
            } else {
                format!("FAIL {}: {}\n", r.name, r.detail)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_build_passes() {
        let r = selftest();
        assert!(r.iter().all(|c| c.passed), "{}", render(&r));
    }

    fn proportional_dba2(policy: ExcessPolicy, d: &DemandSet, over: &[usize], pool: &ExcessPool) -> BTreeMap<usize, u64> {
        let policy = if policy == ExcessPolicy::Dba2 { ExcessPolicy::Dba1 } else { policy };
        distribute_excess(policy, d, over, pool)
    }

    #[test]
    fn corrupted_dba2_is_named() {
        let failed: Vec<&str> = run_checks(proportional_dba2)
            .into_iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        assert_eq!(failed, vec!["dba2_equal_split"]);
    }
}
