//! Grant sizing: the limited policy, the excess-distribution family and the
//! group-SLA aggregation built on top of them.
//!
//! All quantities are bytes per polling cycle. An ONU is underloaded when
//! its request is at most its maximum window (`R <= W_max`) and overloaded
//! otherwise. Underloaded ONUs leave `W_max - R` unused; the sum of those
//! leftovers is the excess pool that the policies hand to overloaded ONUs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DbaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Demand {
    pub onu: usize,
    pub request: u64,
    pub wmax: u64,
}

impl Demand {
    pub fn new(onu: usize, request: u64, wmax: u64) -> Self {
        Demand { onu, request, wmax }
    }

    pub fn is_overloaded(&self) -> bool {
        self.request > self.wmax
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DemandSet {
    entries: Vec<Demand>,
}

impl DemandSet {
    /// Panics on duplicate ONU indices or a zero maximum window.
    pub fn new(entries: Vec<Demand>) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        for d in &entries {
            assert!(d.wmax > 0, "W_max must be positive (onu {})", d.onu);
            assert!(seen.insert(d.onu), "duplicate onu {}", d.onu);
        }
        DemandSet { entries }
    }

    pub fn entries(&self) -> &[Demand] {
        &self.entries
    }

    pub fn get(&self, onu: usize) -> Option<&Demand> {
        self.entries.iter().find(|d| d.onu == onu)
    }
}

impl FromIterator<Demand> for DemandSet {
    fn from_iter<I: IntoIterator<Item = Demand>>(iter: I) -> Self {
        DemandSet::new(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExcessPolicy {
    /// Excess shared in proportion to each overloaded request.
    #[serde(rename = "DBA1")]
    Dba1,
    /// Excess shared equally (uncontrolled).
    #[serde(rename = "DBA2")]
    Dba2,
    /// Equal share, clamped to the request.
    #[serde(rename = "DBA3")]
    Dba3,
    /// Excess shared in proportion to the excess demand `R - W_max`.
    /// Also accepted as `WDBA2`.
    #[serde(rename = "WDBA", alias = "WDBA2")]
    Wdba,
    /// WDBA clamped to the request.
    #[serde(rename = "WDBA1")]
    Wdba1,
}

impl ExcessPolicy {
    pub const ALL: [ExcessPolicy; 5] = [
        ExcessPolicy::Dba1,
        ExcessPolicy::Dba2,
        ExcessPolicy::Dba3,
        ExcessPolicy::Wdba,
        ExcessPolicy::Wdba1,
    ];

    /// Controlled policies never grant more than was requested.
    pub fn is_controlled(self) -> bool {
        matches!(self, ExcessPolicy::Dba3 | ExcessPolicy::Wdba1)
    }
}

impl fmt::Display for ExcessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExcessPolicy::Dba1 => "DBA1",
            ExcessPolicy::Dba2 => "DBA2",
            ExcessPolicy::Dba3 => "DBA3",
            ExcessPolicy::Wdba => "WDBA",
            ExcessPolicy::Wdba1 => "WDBA1",
        })
    }
}

pub fn limited_grant(request: u64, wmax: u64) -> u64 {
    request.min(wmax)
}

/// Splits the set into (underloaded, overloaded) ONU indices, in entry order.
/// `R == W_max` counts as underloaded.
pub fn classify(demands: &DemandSet) -> (Vec<usize>, Vec<usize>) {
    let (over, under): (Vec<&Demand>, Vec<&Demand>) = demands.entries.iter().partition(|d| d.is_overloaded());
    (
        under.into_iter().map(|d| d.onu).collect(),
        over.into_iter().map(|d| d.onu).collect(),
    )
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExcessPool {
    pub total_bytes: u64,
    pub contributors: Vec<usize>,
}

pub fn excess_pool(demands: &DemandSet, under: &[usize]) -> ExcessPool {
    let total_bytes = under
        .iter()
        .map(|&onu| {
            let d = demands.get(onu).expect("underloaded onu not in demand set");
            debug_assert!(d.request <= d.wmax);
            d.wmax - d.request
        })
        .sum();
    ExcessPool {
        total_bytes,
        contributors: under.to_vec(),
    }
}

/// Grant per ONU: underloaded ONUs receive their request, overloaded ONUs
/// receive `W_max` plus their share of the pool under `policy`. Shares are
/// rounded down; a controlled policy's clamp is applied once and whatever
/// it cuts off is not handed to anyone else.
pub fn distribute_excess(
    policy: ExcessPolicy,
    demands: &DemandSet,
    over: &[usize],
    pool: &ExcessPool,
) -> BTreeMap<usize, u64> {
    let mut grants: BTreeMap<usize, u64> = demands
        .entries
        .iter()
        .filter(|d| !d.is_overloaded())
        .map(|d| (d.onu, d.request))
        .collect();
    if over.is_empty() {
        return grants;
    }
    let over: Vec<&Demand> = over
        .iter()
        .map(|&onu| demands.get(onu).expect("overloaded onu not in demand set"))
        .collect();
    let e = pool.total_bytes as u128;
    let n = over.len() as u128;
    let sum_requests: u128 = over.iter().map(|d| d.request as u128).sum();
    let sum_excess: u128 = over.iter().map(|d| (d.request - d.wmax) as u128).sum();
    for d in over {
        assert!(d.is_overloaded(), "onu {} is not overloaded", d.onu);
        let share = match policy {
            ExcessPolicy::Dba1 => e * d.request as u128 / sum_requests,
            ExcessPolicy::Dba2 | ExcessPolicy::Dba3 => e / n,
            ExcessPolicy::Wdba | ExcessPolicy::Wdba1 => e * (d.request - d.wmax) as u128 / sum_excess,
        } as u64;
        let mut grant = d.wmax + share;
        if policy.is_controlled() {
            grant = grant.min(d.request);
        }
        grants.insert(d.onu, grant);
    }
    grants
}

/// One SLA group: reports of all members are buffered and scheduled together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupState {
    pub id: u32,
    pub members: Vec<usize>,
    pub policy: ExcessPolicy,
    /// Buffered `(request, W_max)` per member, in report-arrival order.
    buffered: Vec<Demand>,
}

impl GroupState {
    pub fn new(id: u32, members: Vec<usize>, policy: ExcessPolicy) -> Self {
        GroupState {
            id,
            members,
            policy,
            buffered: Vec::new(),
        }
    }

    pub fn contains(&self, onu: usize) -> bool {
        self.members.contains(&onu)
    }

    /// Buffers a member's request; returns true once every member has reported.
    pub fn buffer(&mut self, onu: usize, request: u64, wmax: u64) -> bool {
        debug_assert!(self.contains(onu));
        if let Some(d) = self.buffered.iter_mut().find(|d| d.onu == onu) {
            d.request = request;
            d.wmax = wmax;
        } else {
            self.buffered.push(Demand::new(onu, request, wmax));
        }
        self.is_complete()
    }

    pub fn is_complete(&self) -> bool {
        self.buffered.len() == self.members.len()
    }

    pub fn pending(&self) -> usize {
        self.buffered.len()
    }
}

/// Grants for every member, in report-arrival order: the limited (legacy)
/// window plus, for overloaded members, the share of the group's excess.
/// Clears the buffer.
pub fn group_schedule(group: &mut GroupState) -> Result<Vec<(usize, u64)>, DbaError> {
    if !group.is_complete() {
        return Err(DbaError::IncompleteGroup { group: group.id });
    }
    let demands = DemandSet::new(std::mem::take(&mut group.buffered));
    let (under, over) = classify(&demands);
    let pool = excess_pool(&demands, &under);
    let excess = distribute_excess(group.policy, &demands, &over, &pool);
    Ok(demands
        .entries()
        .iter()
        .map(|d| {
            let legacy = limited_grant(d.request, d.wmax);
            let new_length = if d.is_overloaded() { excess[&d.onu] - d.wmax } else { 0 };
            (d.onu, legacy + new_length)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(requests: &[u64], wmax: u64) -> DemandSet {
        requests
            .iter()
            .enumerate()
            .map(|(i, &r)| Demand::new(i, r, wmax))
            .collect()
    }

    fn over_grants(policy: ExcessPolicy, requests: &[u64], wmax: u64, e: u64) -> Vec<u64> {
        let d = set(requests, wmax);
        let (_, over) = classify(&d);
        let pool = ExcessPool {
            total_bytes: e,
            contributors: vec![],
        };
        let g = distribute_excess(policy, &d, &over, &pool);
        over.iter().map(|o| g[o]).collect()
    }

    #[test]
    fn limited() {
        assert_eq!(limited_grant(1000, 5000), 1000);
        assert_eq!(limited_grant(8000, 5000), 5000);
        assert_eq!(limited_grant(0, 5000), 0);
    }

    #[test]
    fn classification() {
        let d = set(&[3000, 4500, 12000, 8000], 5000);
        assert_eq!(classify(&d), (vec![0, 1], vec![2, 3]));
        let d = set(&[5000, 5000], 5000);
        assert_eq!(classify(&d), (vec![0, 1], vec![]));
        assert_eq!(classify(&DemandSet::default()), (vec![], vec![]));
    }

    #[test]
    fn pool() {
        let d = set(&[3000, 4500], 5000);
        assert_eq!(excess_pool(&d, &[0, 1]).total_bytes, 2500);
        assert_eq!(excess_pool(&d, &[]).total_bytes, 0);
        let idle = set(&[0, 0, 0, 0], 5000);
        assert_eq!(excess_pool(&idle, &[0, 1, 2, 3]).total_bytes, 20000);
    }

    #[test]
    fn worked_examples() {
        assert_eq!(over_grants(ExcessPolicy::Dba1, &[12000, 8000], 5000, 4000), vec![7400, 6600]);
        assert_eq!(over_grants(ExcessPolicy::Dba2, &[12000, 8000], 5000, 4000), vec![7000, 7000]);
        assert_eq!(over_grants(ExcessPolicy::Dba3, &[12000, 6000], 5000, 4000), vec![7000, 6000]);
        assert_eq!(over_grants(ExcessPolicy::Wdba, &[12000, 8000], 5000, 4000), vec![7800, 6200]);
        assert_eq!(over_grants(ExcessPolicy::Wdba1, &[12000, 8000], 5000, 4000), vec![7800, 6200]);
        // With R = {12000, 6000} the excess demands are {7000, 1000}, so the
        // WDBA shares are {3500, 500} and neither clamp binds.
        assert_eq!(over_grants(ExcessPolicy::Wdba, &[12000, 6000], 5000, 4000), vec![8500, 5500]);
        assert_eq!(over_grants(ExcessPolicy::Wdba1, &[12000, 6000], 5000, 4000), vec![8500, 5500]);
        assert_eq!(over_grants(ExcessPolicy::Wdba, &[5200, 12000], 5000, 8000), vec![5222, 12777]);
        assert_eq!(over_grants(ExcessPolicy::Wdba1, &[5200, 12000], 5000, 8000), vec![5200, 12000]);
    }

    #[test]
    fn underloaded_get_their_request() {
        let d = set(&[3000, 12000], 5000);
        let (under, over) = classify(&d);
        let pool = excess_pool(&d, &under);
        let g = distribute_excess(ExcessPolicy::Dba2, &d, &over, &pool);
        assert_eq!(g[&0], 3000);
        assert_eq!(g[&1], 7000);
    }

    #[test]
    fn no_overloaded_leaves_pool_unused() {
        let d = set(&[1000, 2000], 5000);
        let pool = excess_pool(&d, &[0, 1]);
        let g = distribute_excess(ExcessPolicy::Dba3, &d, &[], &pool);
        assert_eq!(g.values().copied().collect::<Vec<_>>(), vec![1000, 2000]);
    }

    #[test]
    fn group_examples() {
        let mut g = GroupState::new(1, vec![0, 1], ExcessPolicy::Dba2);
        assert!(!g.buffer(0, 2000, 5000));
        assert_eq!(group_schedule(&mut g.clone()), Err(DbaError::IncompleteGroup { group: 1 }));
        assert!(g.buffer(1, 9000, 5000));
        assert_eq!(group_schedule(&mut g).unwrap(), vec![(0, 2000), (1, 8000)]);
        assert_eq!(g.pending(), 0);

        let mut g = GroupState::new(2, vec![3, 4], ExcessPolicy::Dba1);
        g.buffer(4, 100, 5000);
        g.buffer(3, 200, 5000);
        assert_eq!(group_schedule(&mut g).unwrap(), vec![(4, 100), (3, 200)]);

        let mut g = GroupState::new(3, vec![0, 1], ExcessPolicy::Wdba);
        g.buffer(0, 5000, 5000);
        g.buffer(1, 5000, 5000);
        assert_eq!(group_schedule(&mut g).unwrap(), vec![(0, 5000), (1, 5000)]);
    }

    #[test]
    fn wdba2_alias_maps_to_wdba() {
        #[derive(Deserialize)]
        struct W {
            p: ExcessPolicy,
        }
        let w: W = toml::from_str("p = \"WDBA2\"").unwrap();
        assert_eq!(w.p, ExcessPolicy::Wdba);
    }
}
