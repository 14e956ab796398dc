//! Tick-resolution simulation of closed interactive workloads on one CPU.
//!
//! Every process loops forever: think, then demand CPU. The engine feeds
//! arrivals to a scheduler, burns one tick at a time on whichever process the
//! scheduler picks, and records what each user got.

pub mod report;
pub mod rng;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::ops::RangeInclusive;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::{validate_scenario, Entity, MetricRecord, Policy, Scenario};
use crate::entitlements::{dynamic_entitlements, static_entitlements};
use crate::error::{Error, Result};
use crate::sched::{FairShare, Pid, ProcSpec, Scheduler, TimeShare};

pub use report::{
    csv_header, csv_rows, percentile, Comparison, Degradation, FsTraceEntry, GroupMetrics,
    SimReport, SystemMetrics, UserMetrics, CSV_COLUMNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcPhase {
    Thinking,
    Ready,
    Running,
}

#[derive(Debug)]
struct Process {
    owner: usize,
    workload: usize,
    rng: ChaCha8Rng,
    phase: ProcPhase,
    /// Sampled demand of the current transaction.
    demand_ms: f64,
    remaining_ticks: u64,
    consumed_ms: u64,
    /// Instant the current transaction became ready.
    txn_start_ms: u64,
    /// Instant the process last joined the run queue.
    queued_since_ms: u64,
}

enum Engine {
    Ts(TimeShare),
    Fs(FairShare),
}

impl Engine {
    fn inner(&mut self) -> &mut dyn Scheduler {
        match self {
            Engine::Ts(s) => s,
            Engine::Fs(s) => s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record fair-share accounting at every usage-window boundary.
    pub fs_trace: bool,
}

#[derive(Debug, Default, Clone)]
struct UserAcc {
    busy_ms: u64,
    transactions: u64,
    resp: Vec<u64>,
    preemptions: u64,
    max_wait_ms: u64,
    in_cpu_ticks: u64,
    completed_demand_ms: f64,
}

pub fn run(s: &Scenario) -> Result<SimReport> {
    run_with(s, &RunOptions::default())
}

pub fn run_with(s: &Scenario, opts: &RunOptions) -> Result<SimReport> {
    let violations = validate_scenario(s);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let alloc = &s.allocation;
    let sc = &s.scheduler;
    let tick = sc.tick_ms;
    let n_users = alloc.users.len();

    let mut procs = Vec::new();
    for (ui, u) in alloc.users.iter().enumerate() {
        let wi = s
            .workload
            .users
            .iter()
            .position(|w| w.user == u.id)
            .ok_or_else(|| Error::UnknownEntity(u.id.to_string()))?;
        for k in 0..s.workload.users[wi].processes {
            procs.push(Process {
                owner: ui,
                workload: wi,
                rng: rng::process_stream(s.seed, u.id.as_str(), k),
                phase: ProcPhase::Thinking,
                demand_ms: 0.0,
                remaining_ticks: 0,
                consumed_ms: 0,
                txn_start_ms: 0,
                queued_since_ms: 0,
            });
        }
    }
    let specs: Vec<ProcSpec> = procs
        .iter()
        .map(|p| ProcSpec { owner: p.owner, nice: s.workload.users[p.workload].nice })
        .collect();

    let mut engine = match sc.policy {
        Policy::Ts => Engine::Ts(TimeShare::new(sc.ts.clone(), tick, sc.quantum_ms, n_users, &specs)),
        Policy::Fs => {
            let users: Vec<_> = alloc.users.iter().map(|u| (u.shares, u.cap)).collect();
            let mut fs = FairShare::new(
                sc.fs.clone(),
                tick,
                sc.quantum_ms,
                alloc.capping_enabled,
                &users,
                &specs,
            );
            if opts.fs_trace {
                fs.enable_trace();
            }
            Engine::Fs(fs)
        }
    };
    let sched = engine.inner();

    let mut wakeups: BinaryHeap<Reverse<(u64, Pid)>> = BinaryHeap::new();
    for (pid, p) in procs.iter_mut().enumerate() {
        let w = &s.workload.users[p.workload];
        let think = rng::sample(&mut p.rng, w.think_dist, w.think_ms);
        wakeups.push(Reverse((ms_after(0, think), pid)));
    }

    let warmup = s.warmup_ms;
    let end = s.duration_ms;
    let measured_ms = end - warmup;
    let n_windows = measured_ms.div_ceil(s.window_ms) as usize;
    let mut windows: Vec<Vec<MetricRecord>> = (0..n_windows)
        .map(|k| {
            let start = warmup + k as u64 * s.window_ms;
            let stop = (start + s.window_ms).min(end);
            alloc
                .users
                .iter()
                .map(|u| MetricRecord::new(Entity::User(u.id.clone()), start, stop))
                .collect()
        })
        .collect();
    let mut acc = vec![UserAcc::default(); n_users];
    let mut census = vec![0u32; n_users];

    let mut now = 0u64;
    while now < end {
        let measuring = now >= warmup;
        while let Some(&Reverse((at, pid))) = wakeups.peek() {
            if at > now {
                break;
            }
            wakeups.pop();
            let p = &mut procs[pid];
            let w = &s.workload.users[p.workload];
            p.demand_ms = rng::sample(&mut p.rng, w.demand_dist, w.demand_ms);
            p.remaining_ticks = ((p.demand_ms / tick as f64).ceil() as u64).max(1);
            p.consumed_ms = 0;
            p.txn_start_ms = now;
            p.queued_since_ms = now;
            p.phase = ProcPhase::Ready;
            census[p.owner] += 1;
            sched.admit(pid);
        }

        if sched.running().is_none() {
            if let Some(pid) = sched.dispatch() {
                let p = &mut procs[pid];
                debug_assert_eq!(p.phase, ProcPhase::Ready);
                p.phase = ProcPhase::Running;
                if measuring {
                    let a = &mut acc[p.owner];
                    a.max_wait_ms = a.max_wait_ms.max(now - p.queued_since_ms);
                }
            }
        }
        debug_assert_eq!(sched.census(), census);

        let running = sched.running();
        sched.tick();
        let done_at = now + tick;
        let win = if measuring { Some(((now - warmup) / s.window_ms) as usize) } else { None };
        if let Some(k) = win {
            for (u, c) in census.iter().enumerate() {
                acc[u].in_cpu_ticks += u64::from(*c);
            }
            if let Some(pid) = running {
                let o = procs[pid].owner;
                acc[o].busy_ms += tick;
                windows[k][o].busy_ms += tick;
            }
        }

        if let Some(pid) = running {
            let p = &mut procs[pid];
            p.remaining_ticks -= 1;
            p.consumed_ms += tick;
            if p.remaining_ticks == 0 {
                sched.complete();
                census[p.owner] -= 1;
                p.phase = ProcPhase::Thinking;
                if let Some(k) = win {
                    let resp = done_at - p.txn_start_ms;
                    let a = &mut acc[p.owner];
                    a.transactions += 1;
                    a.resp.push(resp);
                    a.completed_demand_ms += p.demand_ms;
                    let r = &mut windows[k][p.owner];
                    r.transactions_completed += 1;
                    r.resp_sum_ms += resp;
                    r.resp_samples.push(resp);
                }
                let w = &s.workload.users[p.workload];
                let think = rng::sample(&mut p.rng, w.think_dist, w.think_ms);
                wakeups.push(Reverse((ms_after(done_at, think), pid)));
            } else if sched.quantum_expired() {
                sched.preempt();
                p.phase = ProcPhase::Ready;
                p.queued_since_ms = done_at;
                if measuring {
                    acc[p.owner].preemptions += 1;
                }
            }
        }

        sched.on_clock(done_at);
        now = done_at;
    }

    // Processes still waiting at the end count toward the longest wait.
    let mut inflight = vec![0u64; n_users];
    for p in &procs {
        if p.phase == ProcPhase::Ready {
            let since = p.queued_since_ms.max(warmup);
            let a = &mut acc[p.owner];
            a.max_wait_ms = a.max_wait_ms.max(end - since);
        }
        if p.phase != ProcPhase::Thinking {
            inflight[p.owner] += p.consumed_ms;
        }
    }

    let fs_trace_rows = match &mut engine {
        Engine::Fs(fs) => fs
            .take_trace()
            .into_iter()
            .map(|r| FsTraceEntry {
                window_end_ms: r.window_end_ms,
                user: alloc.users[r.user].id.clone(),
                usage: r.usage,
                cost: r.cost,
                p_active: r.p_active,
            })
            .collect(),
        Engine::Ts(_) => Vec::new(),
    };

    assemble(s, acc, inflight, windows, measured_ms, fs_trace_rows)
}

/// Adds a sampled duration to an instant without overflowing.
fn ms_after(at: u64, dur_ms: f64) -> u64 {
    at.saturating_add(dur_ms.max(0.0).round() as u64)
}

fn assemble(
    s: &Scenario,
    acc: Vec<UserAcc>,
    inflight: Vec<u64>,
    user_windows: Vec<Vec<MetricRecord>>,
    measured_ms: u64,
    fs_trace: Vec<FsTraceEntry>,
) -> Result<SimReport> {
    let alloc = &s.allocation;
    let secs = measured_ms as f64 / 1000.0;
    let stat = static_entitlements(alloc)?;
    let populated = s.populated_users();
    let dynamic = if populated.is_empty() { None } else { Some(dynamic_entitlements(alloc, &populated)?) };

    let mut users = Vec::with_capacity(alloc.users.len());
    for ((u, a), inflight_ms) in alloc.users.iter().zip(acc.iter()).zip(inflight) {
        let mut resp = a.resp.clone();
        users.push(UserMetrics {
            user: u.id.clone(),
            group: u.group.clone(),
            processes: s.processes_of(&u.id),
            shares: u.shares,
            entitlement_static: stat.user(&u.id).map_or(0.0, |e| e.static_e),
            entitlement_dynamic: dynamic
                .as_ref()
                .and_then(|d| d.user(&u.id))
                .map_or(0.0, |e| e.effective_e),
            busy_ms: a.busy_ms,
            transactions: a.transactions,
            utilization: a.busy_ms as f64 / measured_ms as f64,
            tps: a.transactions as f64 / secs,
            work_tput_ms_per_s: a.busy_ms as f64 / secs,
            resp_mean_ms: mean(&a.resp),
            resp_p95_ms: percentile(&mut resp, 0.95),
            preemptions: a.preemptions,
            max_ready_wait_ms: a.max_wait_ms,
            mean_in_cpu: a.in_cpu_ticks as f64 * s.scheduler.tick_ms as f64 / measured_ms as f64,
            completed_demand_ms: a.completed_demand_ms,
            inflight_ms,
        });
    }

    let mut groups = Vec::with_capacity(alloc.groups.len());
    for g in &alloc.groups {
        let members: Vec<usize> = alloc
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.group == g.id)
            .map(|(i, _)| i)
            .collect();
        let busy: u64 = members.iter().map(|&i| acc[i].busy_ms).sum();
        let tx: u64 = members.iter().map(|&i| acc[i].transactions).sum();
        let mut resp: Vec<u64> = members.iter().flat_map(|&i| acc[i].resp.iter().copied()).collect();
        groups.push(GroupMetrics {
            group: g.id.clone(),
            shares: g.shares,
            processes: members.iter().map(|&i| users[i].processes).sum(),
            busy_ms: busy,
            transactions: tx,
            utilization: busy as f64 / measured_ms as f64,
            tps: tx as f64 / secs,
            work_tput_ms_per_s: busy as f64 / secs,
            resp_mean_ms: mean(&resp),
            resp_p95_ms: percentile(&mut resp, 0.95),
        });
    }

    let busy: u64 = acc.iter().map(|a| a.busy_ms).sum();
    let tx: u64 = acc.iter().map(|a| a.transactions).sum();
    let system = SystemMetrics {
        measured_ms,
        busy_ms: busy,
        idle_ms: measured_ms - busy,
        total_utilization: busy as f64 / measured_ms as f64,
        tps: tx as f64 / secs,
    };

    let mut windows = Vec::new();
    for per_user in user_windows {
        let (start, stop) = match per_user.first() {
            Some(r) => (r.start_ms, r.end_ms),
            None => continue,
        };
        let mut sys = MetricRecord::new(Entity::System, start, stop);
        let mut grp: Vec<MetricRecord> = alloc
            .groups
            .iter()
            .map(|g| MetricRecord::new(Entity::Group(g.id.clone()), start, stop))
            .collect();
        for (i, r) in per_user.iter().enumerate() {
            let gi = alloc.groups.iter().position(|g| g.id == alloc.users[i].group);
            for target in std::iter::once(&mut sys).chain(gi.map(|gi| &mut grp[gi])) {
                target.busy_ms += r.busy_ms;
                target.transactions_completed += r.transactions_completed;
                target.resp_sum_ms += r.resp_sum_ms;
                target.resp_samples.extend_from_slice(&r.resp_samples);
            }
        }
        windows.extend(per_user);
        windows.extend(grp);
        windows.push(sys);
    }

    Ok(SimReport {
        scenario: s.name.clone(),
        policy: s.scheduler.policy,
        seed: s.seed,
        users,
        groups,
        system,
        windows,
        fs_trace,
        config: s.clone(),
    })
}

fn mean(v: &[u64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64)
    }
}

/// One run per per-user process count, every user set to that count.
/// Points run in parallel; results come back in range order.
pub fn sweep(s: &Scenario, range: RangeInclusive<u32>) -> Result<Vec<SimReport>> {
    if range.is_empty() {
        return Err(Error::EmptyRange);
    }
    let points: Vec<u32> = range.collect();
    points.par_iter().map(|&n| run(&s.with_processes(n))).collect()
}

/// Per-user `resp(fs) / resp(ts)` between two runs over the same users.
pub fn degradation(ts: &SimReport, fs: &SimReport) -> Vec<Degradation> {
    ts.users
        .iter()
        .map(|t| {
            let f = fs.user(t.user.as_str());
            let resp_fs = f.and_then(|f| f.resp_mean_ms);
            let ratio = match (t.resp_mean_ms, resp_fs) {
                (Some(a), Some(b)) if a > 0.0 => Some(b / a),
                _ => None,
            };
            Degradation { user: t.user.clone(), resp_ts_ms: t.resp_mean_ms, resp_fs_ms: resp_fs, ratio }
        })
        .collect()
}

/// Runs the same workload under both disciplines.
pub fn compare_policies(s: &Scenario) -> Result<Comparison> {
    let (ts, fs) = rayon::join(|| run(&s.with_policy(Policy::Ts)), || run(&s.with_policy(Policy::Fs)));
    let (ts, fs) = (ts?, fs?);
    let degradation = degradation(&ts, &fs);
    Ok(Comparison { ts, fs, degradation })
}
