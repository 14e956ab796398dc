//! Analytic look-ahead for share allocations.
//!
//! Each active user is a closed interactive class (N processes, mean demand D,
//! mean think Z) served by a slice of the CPU. Slices are share-weighted and
//! water-filled: what a lightly loaded user cannot use is handed to the rest in
//! proportion to their shares, and caps clamp a slice when capping is on. At
//! saturation every slice equals the user's entitlement.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{GroupId, GroupShares, Scenario, ShareAllocation, UserId, UserShares};
use crate::entitlements::{dynamic_entitlements, EntitlementTable};
use crate::error::{Error, Result};

pub const TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanUser {
    pub user: UserId,
    pub group: GroupId,
    pub active: bool,
    pub processes: u32,
    pub entitlement: f64,
    /// Fraction of the CPU the user was modelled to have.
    pub capacity: f64,
    pub utilization: f64,
    pub tps: f64,
    pub resp_mean_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub scenario: String,
    pub active: Vec<UserId>,
    pub users: Vec<PlanUser>,
    pub entitlements: EntitlementTable,
    pub total_utilization: f64,
    pub iterations: u32,
    pub residual: f64,
}

impl PlanReport {
    pub fn user(&self, id: &str) -> Option<&PlanUser> {
        self.users.iter().find(|u| u.user.as_str() == id)
    }
}

/// Exact single-class mean-value analysis of `n` processes with demand `d`
/// and think `z` against a processor of relative speed `c`.
/// Returns `(throughput per ms, response ms)`.
pub fn mva(n: u32, d: f64, z: f64, c: f64) -> (f64, f64) {
    if n == 0 || c <= 0.0 {
        return (0.0, f64::INFINITY);
    }
    let s = d / c;
    let mut q = 0.0;
    let mut x = 0.0;
    let mut r = s;
    for k in 1..=n {
        r = s * (1.0 + q);
        x = f64::from(k) / (r + z);
        q = x * r;
    }
    (x, r)
}

struct Class {
    idx: usize,
    n: u32,
    d: f64,
    z: f64,
    weight: f64,
    ceiling: f64,
}

impl Class {
    fn capacity(&self, level: f64) -> f64 {
        (level * self.weight).min(self.ceiling)
    }

    fn utilization(&self, c: f64) -> f64 {
        let (x, _) = mva(self.n, self.d, self.z, c);
        (x * self.d).min(c)
    }
}

/// Raises a common fill level until the classes' combined utilisation reaches
/// the whole CPU. Each class's slice is `level * shares`, clamped by its cap, so
/// capacity a light class leaves unused flows to the others by share.
/// Returns per-class capacities and utilisations, iterations and residual.
fn water_fill(classes: &[Class]) -> Result<(Vec<f64>, Vec<f64>, u32, f64)> {
    let total = |level: f64| -> f64 { classes.iter().map(|c| c.utilization(c.capacity(level))).sum() };
    let at = |level: f64| -> (Vec<f64>, Vec<f64>) {
        let cap: Vec<f64> = classes.iter().map(|c| c.capacity(level)).collect();
        let util = classes.iter().zip(&cap).map(|(c, &x)| c.utilization(x)).collect();
        (cap, util)
    };

    // Level at which every class sits at its ceiling.
    let top = classes
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| c.ceiling / c.weight)
        .fold(0.0, f64::max);
    if total(top) <= 1.0 {
        let (cap, util) = at(top);
        return Ok((cap, util, 1, 0.0));
    }

    let (mut lo, mut hi) = (0.0, top);
    let (mut f_lo, mut f_hi) = (0.0, total(top));
    let mut iterations = 1;
    while f_hi - f_lo >= TOLERANCE {
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations, residual: f_hi - f_lo });
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = total(mid);
        if f <= 1.0 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    let (cap, util) = at(lo);
    Ok((cap, util, iterations, f_hi - f_lo))
}

pub fn predict(s: &Scenario, active: &BTreeSet<UserId>) -> Result<PlanReport> {
    let violations = crate::domain::validate_scenario(s);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let table = dynamic_entitlements(&s.allocation, active)?;
    let alloc = &s.allocation;

    let mut classes = Vec::new();
    for (idx, u) in alloc.users.iter().enumerate() {
        if !active.contains(&u.id) {
            continue;
        }
        let Some(w) = s.workload.get(&u.id) else { continue };
        let ceiling = match (alloc.capping_enabled, u.cap) {
            (true, Some(cap)) => cap,
            _ => 1.0,
        };
        classes.push(Class { idx, n: w.processes, d: w.demand_ms, z: w.think_ms, weight: u.shares as f64, ceiling });
    }

    let (cap, util, iterations, residual) = water_fill(&classes)?;

    let mut users: Vec<PlanUser> = alloc
        .users
        .iter()
        .map(|u| PlanUser {
            user: u.id.clone(),
            group: u.group.clone(),
            active: active.contains(&u.id),
            processes: s.processes_of(&u.id),
            entitlement: table.user(&u.id).map_or(0.0, |e| e.effective_e),
            capacity: 0.0,
            utilization: 0.0,
            tps: 0.0,
            resp_mean_ms: None,
        })
        .collect();
    for (i, c) in classes.iter().enumerate() {
        let (x, r) = mva(c.n, c.d, c.z, cap[i]);
        let p = &mut users[c.idx];
        p.capacity = cap[i];
        p.utilization = util[i];
        p.tps = x * 1000.0;
        p.resp_mean_ms = r.is_finite().then_some(r);
    }
    let total_utilization = util.iter().sum();

    Ok(PlanReport {
        scenario: s.name.clone(),
        active: active.iter().cloned().collect(),
        users,
        entitlements: table,
        total_utilization,
        iterations,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDelta {
    pub hypothesis: usize,
    pub user: UserId,
    pub entitlement_delta: f64,
    pub utilization_delta: f64,
    pub resp_delta_ms: Option<f64>,
    /// Response relative to the baseline.
    pub resp_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub reports: Vec<PlanReport>,
    pub deltas: Vec<PlanDelta>,
}

/// One prediction per active set, with deltas against the first.
pub fn what_if(s: &Scenario, hypotheses: &[BTreeSet<UserId>]) -> Result<WhatIf> {
    if hypotheses.is_empty() {
        return Err(Error::NoHypotheses);
    }
    let reports = hypotheses.iter().map(|h| predict(s, h)).collect::<Result<Vec<_>>>()?;
    let base = &reports[0];
    let mut deltas = Vec::new();
    for (h, r) in reports.iter().enumerate() {
        for (b, u) in base.users.iter().zip(&r.users) {
            let (resp_delta_ms, resp_factor) = match (b.resp_mean_ms, u.resp_mean_ms) {
                (Some(x), Some(y)) => (Some(y - x), (x > 0.0).then(|| y / x)),
                _ => (None, None),
            };
            deltas.push(PlanDelta {
                hypothesis: h,
                user: u.user.clone(),
                entitlement_delta: u.entitlement - b.entitlement,
                utilization_delta: u.utilization - b.utilization,
                resp_delta_ms,
                resp_factor,
            });
        }
    }
    Ok(WhatIf { reports, deltas })
}

pub const SUGGESTED_GROUP: &str = "users";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub allocation: ShareAllocation,
    /// Users who would get less CPU at saturation than they used under time-share.
    pub flagged: Vec<UserId>,
    pub warnings: Vec<String>,
}

/// Turns measured time-share utilisations into a first share allocation.
///
/// `resp_max` carries the worst response time seen per user; users listed
/// there whose rounded entitlement falls short of their measured fraction are
/// flagged, since they have no headroom left for those peaks.
pub fn suggest_shares(
    measured: &[(UserId, f64)],
    pool: u64,
    resp_max: Option<&[(UserId, f64)]>,
) -> Result<Suggestion> {
    if measured.is_empty() {
        return Err(Error::ZeroMeasurements);
    }
    if let Some((u, v)) = measured.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("measurement {v} for user {u} must be finite and non-negative")));
    }
    let mut seen = BTreeSet::new();
    if let Some((u, _)) = measured.iter().find(|(u, _)| !seen.insert(u)) {
        return Err(Error::InvalidArgument(format!("user {u} measured twice")));
    }
    if pool < measured.len() as u64 {
        return Err(Error::InvalidArgument(format!(
            "pool {pool} is smaller than the {} users to allocate",
            measured.len()
        )));
    }
    let total: f64 = measured.iter().map(|(_, v)| v).sum();
    if total <= 0.0 {
        return Err(Error::ZeroMeasurements);
    }

    let mut shares: Vec<u64> = measured
        .iter()
        .map(|(_, v)| ((pool as f64 * v / total).round() as u64).max(1))
        .collect();

    // Largest consumers absorb the rounding residue; earlier entries win ties.
    let mut order: Vec<usize> = (0..measured.len()).collect();
    order.sort_by(|&a, &b| measured[b].1.total_cmp(&measured[a].1).then(a.cmp(&b)));
    let sum: u64 = shares.iter().sum();
    if sum < pool {
        shares[order[0]] += pool - sum;
    } else {
        let mut excess = sum - pool;
        for &i in &order {
            let take = excess.min(shares[i] - 1);
            shares[i] -= take;
            excess -= take;
            if excess == 0 {
                break;
            }
        }
    }

    let mut warnings = Vec::new();
    if pool > 100 {
        warnings.push(format!(
            "pool of {pool} shares implies more precision than fair-share delivers; 100 is enough"
        ));
    }
    let mut flagged = Vec::new();
    if let Some(rm) = resp_max {
        for (i, (u, v)) in measured.iter().enumerate() {
            let Some((_, r)) = rm.iter().find(|(x, _)| x == u) else { continue };
            let frac = v / total;
            let ent = shares[i] as f64 / pool as f64;
            if ent + 1e-12 < frac {
                warnings.push(format!(
                    "user {u} used {:.1}% under time-share but is entitled to {:.1}%; \
                     its worst response of {r:.0} ms has no headroom",
                    frac * 100.0,
                    ent * 100.0
                ));
                flagged.push(u.clone());
            }
        }
    }

    let group = GroupId::new(SUGGESTED_GROUP);
    let allocation = ShareAllocation {
        pool_total: pool,
        capping_enabled: false,
        groups: vec![GroupShares { id: group.clone(), shares: pool }],
        users: measured
            .iter()
            .zip(&shares)
            .map(|((u, _), &s)| UserShares { id: u.clone(), group: group.clone(), shares: s, cap: None })
            .collect(),
    };
    Ok(Suggestion { allocation, flagged, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        Distribution, Policy, SchedulerConfig, UserWorkload, WorkloadSpec, DEFAULT_WINDOW_MS,
    };

    fn scenario(users: &[(&str, u64, u32, f64, f64)]) -> Scenario {
        let pool = users.iter().map(|u| u.1).sum();
        let g = GroupId::new("g");
        Scenario {
            name: "t".into(),
            allocation: ShareAllocation {
                pool_total: pool,
                capping_enabled: false,
                groups: vec![GroupShares { id: g.clone(), shares: pool }],
                users: users
                    .iter()
                    .map(|u| UserShares { id: u.0.into(), group: g.clone(), shares: u.1, cap: None })
                    .collect(),
            },
            workload: WorkloadSpec {
                users: users
                    .iter()
                    .map(|u| UserWorkload {
                        user: u.0.into(),
                        processes: u.2,
                        demand_ms: u.3,
                        think_ms: u.4,
                        demand_dist: Distribution::Fixed,
                        think_dist: Distribution::Exponential,
                        nice: 0,
                    })
                    .collect(),
            },
            scheduler: SchedulerConfig { policy: Policy::Fs, ..SchedulerConfig::default() },
            duration_ms: 60_000,
            warmup_ms: 0,
            window_ms: DEFAULT_WINDOW_MS,
            seed: 1,
        }
    }

    fn all(s: &Scenario) -> BTreeSet<UserId> {
        s.allocation.users.iter().map(|u| u.id.clone()).collect()
    }

    #[test]
    fn lone_process_without_think() {
        let s = scenario(&[("a", 10, 1, 100.0, 0.0)]);
        let r = predict(&s, &all(&s)).unwrap();
        let a = r.user("a").unwrap();
        assert!((a.utilization - 1.0).abs() < 1e-9);
        assert!((a.resp_mean_ms.unwrap() - 100.0).abs() < 1e-9);
        assert!((a.tps - 10.0).abs() < 1e-9);
    }

    #[test]
    fn saturating_classes_get_entitlements() {
        let s = scenario(&[("h", 90, 10, 100.0, 0.0), ("l", 10, 10, 100.0, 0.0)]);
        let r = predict(&s, &all(&s)).unwrap();
        assert!((r.user("h").unwrap().utilization - 0.9).abs() < 1e-4);
        assert!((r.user("l").unwrap().utilization - 0.1).abs() < 1e-4);
        assert!(r.total_utilization <= 1.0 + 1e-6);
    }

    #[test]
    fn light_user_leaves_surplus_to_heavy() {
        let s = scenario(&[("h", 50, 4, 100.0, 0.0), ("l", 50, 1, 50.0, 1000.0)]);
        let r = predict(&s, &all(&s)).unwrap();
        let l = r.user("l").unwrap().utilization;
        let h = r.user("h").unwrap().utilization;
        assert!(l < 0.06, "{l}");
        assert!((h + l - 1.0).abs() < 1e-4, "{h} {l}");
    }

    #[test]
    fn inactive_users_are_unloaded() {
        let s = scenario(&[("h", 90, 10, 100.0, 0.0), ("l", 10, 10, 100.0, 0.0)]);
        let only: BTreeSet<UserId> = [UserId::new("l")].into();
        let r = predict(&s, &only).unwrap();
        assert_eq!(r.user("h").unwrap().utilization, 0.0);
        assert!(r.user("h").unwrap().resp_mean_ms.is_none());
        assert!((r.user("l").unwrap().utilization - 1.0).abs() < 1e-6);
    }

    #[test]
    fn more_processes_never_help_response() {
        let mut prev = 0.0;
        for n in 1..=30 {
            let s = scenario(&[("h", 50, n, 200.0, 1000.0), ("l", 50, 5, 50.0, 1000.0)]);
            let r = predict(&s, &all(&s)).unwrap().user("h").unwrap().resp_mean_ms.unwrap();
            assert!(r + 1e-6 >= prev, "n={n}: {r} < {prev}");
            prev = r;
        }
    }

    #[test]
    fn empty_active_set_is_an_error() {
        let s = scenario(&[("a", 10, 1, 100.0, 0.0)]);
        assert!(matches!(predict(&s, &BTreeSet::new()), Err(Error::NoActiveShares)));
    }

    #[test]
    fn what_if_needs_hypotheses_and_zero_deltas_on_repeat() {
        let s = scenario(&[("h", 90, 10, 100.0, 0.0), ("l", 10, 10, 100.0, 0.0)]);
        assert!(matches!(what_if(&s, &[]), Err(Error::NoHypotheses)));
        let w = what_if(&s, &[all(&s), all(&s)]).unwrap();
        assert!(w.deltas.iter().all(|d| d.entitlement_delta == 0.0 && d.utilization_delta == 0.0));
        assert!(w.deltas.iter().all(|d| d.resp_factor == Some(1.0)));
    }

    fn measured(v: &[(&str, f64)]) -> Vec<(UserId, f64)> {
        v.iter().map(|(u, x)| (UserId::new(*u), *x)).collect()
    }

    fn shares_of(s: &Suggestion) -> Vec<u64> {
        s.allocation.users.iter().map(|u| u.shares).collect()
    }

    #[test]
    fn proportional_suggestion() {
        let s = suggest_shares(&measured(&[("A", 0.45), ("B", 0.30), ("C", 0.25)]), 100, None).unwrap();
        assert_eq!(shares_of(&s), vec![45, 30, 25]);
        assert!(s.warnings.is_empty());
        assert!(s.allocation.validate().is_empty());
    }

    #[test]
    fn residue_goes_to_first_of_equals() {
        let third = 1.0 / 3.0;
        let s = suggest_shares(&measured(&[("A", third), ("B", third), ("C", third)]), 100, None).unwrap();
        assert_eq!(shares_of(&s), vec![34, 33, 33]);
    }

    #[test]
    fn large_pool_is_flagged_as_false_precision() {
        let s = suggest_shares(&measured(&[("A", 0.45), ("B", 0.30), ("C", 0.25)]), 10_000, None).unwrap();
        assert_eq!(shares_of(&s), vec![4500, 3000, 2500]);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn tiny_users_still_get_a_share() {
        let s = suggest_shares(&measured(&[("A", 0.999), ("B", 0.0), ("C", 0.001)]), 100, None).unwrap();
        assert_eq!(shares_of(&s), vec![98, 1, 1]);
    }

    #[test]
    fn zero_measurements_are_rejected() {
        assert!(matches!(
            suggest_shares(&measured(&[("A", 0.0), ("B", 0.0)]), 100, None),
            Err(Error::ZeroMeasurements)
        ));
        assert!(matches!(suggest_shares(&[], 100, None), Err(Error::ZeroMeasurements)));
        assert!(suggest_shares(&measured(&[("A", 1.0), ("B", 1.0)]), 1, None).is_err());
    }

    #[test]
    fn rounding_losers_with_peaks_are_flagged() {
        let third = 1.0 / 3.0;
        let m = measured(&[("A", third), ("B", third), ("C", third)]);
        let peaks = measured(&[("B", 900.0)]);
        let s = suggest_shares(&m, 100, Some(&peaks)).unwrap();
        assert_eq!(s.flagged, vec![UserId::new("B")]);
    }
}
