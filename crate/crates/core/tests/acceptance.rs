//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use common::{shipped, SHIPPED};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use sharesim::entitlements::{active_without, dynamic_entitlements, resolve_users, static_entitlements};
use sharesim::{
    planner, sim, GroupId, GroupShares, Policy, Scenario, ShareAllocation, UserId, UserShares,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn entitlement_algebra() -> Outcome {
    let s = shipped("consolidation");
    let st = static_entitlements(&s.allocation).map_err(|e| e.to_string())?;
    let g = |t: &sharesim::EntitlementTable, id: &str| t.group(&GroupId::new(id)).unwrap().static_e;
    fn u<'a>(t: &'a sharesim::EntitlementTable, id: &str) -> &'a sharesim::UserEntitlement {
        t.user(&UserId::new(id)).unwrap()
    }
    let mut ok = close(g(&st, "DBMS"), 0.60, 1e-12)
        && close(g(&st, "Web"), 0.10, 1e-12)
        && close(g(&st, "Users"), 0.30, 1e-12)
        && close(u(&st, "usrA").static_e, 0.06, 1e-12)
        && close(u(&st, "usrB").static_e, 0.05, 1e-12)
        && close(u(&st, "usrC").static_e, 0.19, 1e-12);
    let active = active_without(&s.allocation, ["DBMS"]).map_err(|e| e.to_string())?;
    let dy = dynamic_entitlements(&s.allocation, &active).map_err(|e| e.to_string())?;
    let got = ["web", "usrA", "usrB", "usrC"].map(|n| u(&dy, n).dynamic_e);
    ok &= close(got[0], 0.25, 1e-12)
        && close(got[1], 0.15, 1e-12)
        && close(got[2], 0.125, 1e-12)
        && close(got[3], 0.475, 1e-12);
    check(ok, format!("static 0.60/0.10/0.30, users 0.06/0.05/0.19; without DBMS {got:?}"))
}

fn sole_active_user() -> Outcome {
    let mut capped = shipped("capdemo");
    capped.warmup_ms = 0;
    let mut free = capped.clone();
    free.allocation.capping_enabled = false;
    let u_free = sim::run(&free).map_err(|e| e.to_string())?.user("usr10").unwrap().utilization;
    let r = sim::run(&capped).map_err(|e| e.to_string())?;
    let u_cap = r.user("usr10").unwrap().utilization;
    check(
        u_free >= 0.98 && u_cap <= 0.12,
        format!("uncapped {u_free:.3}, capped {u_cap:.3} over {} s, idle {:.3}", capped.duration_ms / 1000, 1.0 - r.system.total_utilization),
    )
}

fn fs_convergence() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [10, 20, 50] {
        let s = shipped("fairshare9010").cpu_bound().with_processes(n);
        let r = sim::run(&s).map_err(|e| e.to_string())?;
        let h = r.user("heavy").unwrap().utilization;
        let l = r.user("light").unwrap().utilization;
        let t = r.system.total_utilization;
        ok &= close(h, 0.9, 0.05) && close(l, 0.1, 0.05) && close(t, 1.0, 0.01);
        lines.push(format!("N={n} {h:.3}/{l:.3} total {t:.3}"));
    }
    check(ok, lines.join(", "))
}

fn fs_dominance() -> Outcome {
    let reports = sim::sweep(&shipped("fairshare9010"), 1..=50).map_err(|e| e.to_string())?;
    let losing: Vec<u32> = reports
        .iter()
        .filter(|r| r.user("heavy").unwrap().work_tput_ms_per_s <= r.user("light").unwrap().work_tput_ms_per_s)
        .map(|r| r.users[0].processes)
        .collect();
    let worst = reports
        .iter()
        .map(|r| r.user("heavy").unwrap().work_tput_ms_per_s - r.user("light").unwrap().work_tput_ms_per_s)
        .fold(f64::INFINITY, f64::min);
    check(losing.is_empty(), format!("heavy ahead at every N in 1..=50, smallest margin {worst:.1} ms/s; behind at {losing:?}"))
}

fn ts_loophole() -> Outcome {
    let reports = sim::sweep(&shipped("loophole"), 1..=50).map_err(|e| e.to_string())?;
    let heavy: Vec<f64> = reports.iter().map(|r| r.user("heavy").unwrap().utilization).collect();
    let crossover = reports
        .iter()
        .find(|r| r.user("light").unwrap().work_tput_ms_per_s > r.user("heavy").unwrap().work_tput_ms_per_s)
        .map(|r| r.users[0].processes);
    let (peak_i, peak) = heavy.iter().copied().enumerate().fold((0, f64::MIN), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    let peak_n = peak_i as u32 + 1;
    let last = *heavy.last().unwrap();
    let ok = crossover.is_some_and(|n| (5..=25).contains(&n) && peak_n < n)
        && close(peak, 0.80, 0.10)
        && last < peak;
    check(ok, format!("crossover at N={crossover:?}, heavy peak {peak:.3} at N={peak_n}, heavy at N=50 {last:.3}"))
}

fn pitfall_ratio() -> Outcome {
    let c = sim::compare_policies(&shipped("loophole").with_processes(20)).map_err(|e| e.to_string())?;
    let ratio = |u: &str| c.degradation.iter().find(|d| d.user.as_str() == u).and_then(|d| d.ratio);
    let (l, h) = (ratio("light"), ratio("heavy"));
    let ok = l.is_some_and(|x| x >= 4.0) && h.is_some_and(|x| x < 1.0);
    check(ok, format!("light resp fs/ts {l:.2?}, heavy {h:.2?}"))
}

/// The consolidation scenario with only the named users running processes.
fn only(s: &Scenario, active: &BTreeSet<UserId>) -> Scenario {
    let mut t = s.clone();
    for w in &mut t.workload.users {
        if !active.contains(&w.user) {
            w.processes = 0;
        }
    }
    t
}

fn stress_degradation() -> Outcome {
    let s = shipped("consolidation");
    let steps: Vec<BTreeSet<UserId>> = [
        vec!["usrA", "usrB"],
        vec!["usrA", "usrB", "usrC"],
        vec!["usrA", "usrB", "usrC", "web"],
        vec!["usrA", "usrB", "usrC", "web", "dbms"],
    ]
    .iter()
    .map(|v| resolve_users(&s.allocation, v.iter().copied()).unwrap())
    .collect();

    let sims: Vec<_> = steps.iter().map(|a| sim::run(&only(&s, a))).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let plan = planner::what_if(&s, &steps).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for user in ["usrA", "usrB"] {
        let resp: Vec<f64> = sims.iter().map(|r| r.user(user).unwrap().resp_mean_ms.unwrap()).collect();
        let sim_factors: Vec<f64> = resp.iter().map(|r| r / resp[0]).collect();
        let plan_factor = plan
            .deltas
            .iter()
            .find(|d| d.hypothesis == steps.len() - 1 && d.user.as_str() == user)
            .and_then(|d| d.resp_factor)
            .unwrap_or(f64::NAN);
        let sim_final = *sim_factors.last().unwrap();
        ok &= (8.0..=12.0).contains(&sim_final) && (8.0..=12.0).contains(&plan_factor);
        ok &= sim_factors.windows(2).all(|w| w[1] >= w[0] * 0.98);
        parts.push(format!(
            "{user} simulated {} planned {plan_factor:.2}x",
            sim_factors.iter().map(|f| format!("{f:.2}x")).collect::<Vec<_>>().join(" -> ")
        ));
    }
    check(ok, parts.join("; "))
}

fn planner_oracle() -> Outcome {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for name in SHIPPED {
        let mut s = shipped(name).cpu_bound().with_policy(Policy::Fs);
        for w in &mut s.workload.users {
            if w.processes == 0 {
                w.processes = 4;
            }
        }
        let everyone: BTreeSet<UserId> = s.allocation.users.iter().map(|u| u.id.clone()).collect();
        let p = planner::predict(&s, &everyone).map_err(|e| e.to_string())?;
        let r = sim::run(&s).map_err(|e| e.to_string())?;
        let gap = p
            .users
            .iter()
            .zip(&r.users)
            .map(|(a, b)| (a.utilization - b.utilization).abs())
            .fold(0.0, f64::max);
        worst = worst.max(gap);
        ok &= gap <= 0.05;
        parts.push(format!("{name} {gap:.4}"));
    }
    check(ok, format!("largest per-user gap {worst:.4} ({})", parts.join(", ")))
}

fn random_allocation() -> impl Strategy<Value = (ShareAllocation, Vec<bool>)> {
    prop::collection::vec(prop::collection::vec(1u64..200, 1..5), 1..5).prop_flat_map(|groups| {
        let users: usize = groups.iter().map(Vec::len).sum();
        let alloc = {
            let mut gs = Vec::new();
            let mut us = Vec::new();
            for (gi, members) in groups.iter().enumerate() {
                let gid = GroupId::new(format!("g{gi}"));
                gs.push(GroupShares { id: gid.clone(), shares: members.iter().sum() });
                for (ui, &sh) in members.iter().enumerate() {
                    us.push(UserShares { id: UserId::new(format!("u{gi}_{ui}")), group: gid.clone(), shares: sh, cap: None });
                }
            }
            let pool = gs.iter().map(|g| g.shares).sum();
            ShareAllocation { pool_total: pool, capping_enabled: false, groups: gs, users: us }
        };
        (Just(alloc), prop::collection::vec(any::<bool>(), users))
    })
}

fn properties() -> Outcome {
    let mut notes = Vec::new();

    // Determinism.
    for name in SHIPPED {
        let s = shipped(name);
        let (a, b) = (sim::run(&s), sim::run(&s));
        if a.as_ref().ok() != b.as_ref().ok() || a.is_err() {
            return Err(format!("{name} not reproducible"));
        }
    }
    notes.push("deterministic".to_owned());

    // Work conservation, accounting identity and bounded waits on every
    // shipped scenario under both disciplines.
    let mut longest = 0;
    for name in SHIPPED {
        for policy in [Policy::Ts, Policy::Fs] {
            let mut s = shipped(name).with_policy(policy);
            s.warmup_ms = 0;
            let r = sim::run(&s).map_err(|e| e.to_string())?;
            if r.system.busy_ms + r.system.idle_ms != s.duration_ms {
                return Err(format!("{name}/{policy}: busy + idle != duration"));
            }
            let uncapped = !s.allocation.capping_enabled;
            let saturated = s.workload.users.iter().all(|w| w.think_ms == 0.0 && w.processes > 0);
            if uncapped && saturated && r.system.idle_ms != 0 {
                return Err(format!("{name}/{policy}: idle while work was ready"));
            }
            let tick = s.scheduler.tick_ms as f64;
            for u in &r.users {
                let acc = u.completed_demand_ms + u.inflight_ms as f64;
                let busy = u.busy_ms as f64;
                if busy + 1e-6 < acc || busy > acc + tick * u.transactions as f64 + 1e-6 {
                    return Err(format!("{name}/{policy} {}: busy {busy} vs accounted {acc}", u.user));
                }
            }
            for u in &r.users {
                longest = longest.max(u.max_ready_wait_ms);
            }
        }
    }
    if longest > 30_000 {
        return Err(format!("a ready process waited {longest} ms"));
    }
    notes.push(format!("conserving, accounted, longest ready wait {longest} ms"));

    // Entitlement algebra on random allocations.
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let result = runner.run(&random_allocation(), |(alloc, mask)| {
        let active: BTreeSet<UserId> =
            alloc.users.iter().zip(&mask).filter(|(_, m)| **m).map(|(u, _)| u.id.clone()).collect();
        prop_assume!(!active.is_empty());
        let t = dynamic_entitlements(&alloc, &active).unwrap();
        let sum: f64 = t.users.iter().map(|u| u.effective_e).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        for u in &t.users {
            prop_assert!(!u.active || u.dynamic_e + 1e-12 >= u.static_e);
        }
        if active.len() > 1 {
            let gone = active.iter().next().unwrap().clone();
            let mut fewer = active.clone();
            fewer.remove(&gone);
            let t2 = dynamic_entitlements(&alloc, &fewer).unwrap();
            for u in fewer.iter() {
                prop_assert!(t2.user(u).unwrap().dynamic_e + 1e-12 >= t.user(u).unwrap().dynamic_e);
            }
        }
        Ok(())
    });
    result.map_err(|e| format!("entitlement property: {e}"))?;
    notes.push("entitlements sum to one and are monotone over 1000 allocations".to_owned());
    Ok(notes.join("; "))
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 9] = [
        ("entitlement algebra", entitlement_algebra),
        ("sole active user and cap", sole_active_user),
        ("fair-share convergence", fs_convergence),
        ("fair-share dominance", fs_dominance),
        ("time-share loophole", ts_loophole),
        ("response pitfall", pitfall_ratio),
        ("stress degradation", stress_degradation),
        ("planner vs simulator", planner_oracle),
        ("property suites", properties),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_owned()));
        let ms = t.elapsed().as_millis();
        match outcome {
            Ok(d) => println!("PASS {} {name} ({ms} ms): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name} ({ms} ms): {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} passed in {:.1} s", checks.len() - failed, checks.len(), started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
