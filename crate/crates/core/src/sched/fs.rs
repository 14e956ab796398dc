//! Two-level fair-share discipline.
//!
//! Users accumulate share-normalised cost, which decays into `usage` once per
//! usage window. A running process has its `sharepri` pushed up by its owner's
//! usage scaled by the owner's ready population and divided by the owner's
//! shares; every process is forgiven geometrically once per priority window.
//! The lowest `sharepri` runs next.

use std::collections::VecDeque;

use super::{Pid, ProcSpec, RunQueue, Scheduler};
use crate::domain::FsParams;

#[derive(Debug, Clone, PartialEq)]
pub struct FsUserState {
    pub shares: u64,
    /// Decayed accumulated cost.
    pub usage: f64,
    /// Cost accumulated in the current usage window.
    pub cost: f64,
    /// Ready or running processes owned.
    pub p_active: u32,
    pub cap: Option<f64>,
    /// Ticks consumed inside the trailing cap window.
    pub window_busy_ticks: u64,
    /// Held off the CPU by the cap.
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsProcState {
    pub pid: Pid,
    pub owner: usize,
    pub nice: i32,
    pub sharepri: f64,
    pub quantum_left_ms: u64,
}

/// One user's accounting state at the end of a usage window.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FsTraceRow {
    pub window_end_ms: u64,
    pub user: usize,
    pub usage: f64,
    /// Cost charged during the window that just closed.
    pub cost: f64,
    pub p_active: u32,
}

#[derive(Debug, Clone)]
pub struct FairShare {
    params: FsParams,
    tick_ms: u64,
    quantum_ms: u64,
    capping: bool,
    users: Vec<FsUserState>,
    procs: Vec<FsProcState>,
    queue: RunQueue,
    running: Option<Pid>,
    cap_ring: VecDeque<Option<usize>>,
    cap_window_ticks: u64,
    trace: Option<Vec<FsTraceRow>>,
}

impl FairShare {
    /// `users` lists `(shares, cap)` per user in allocation order.
    pub fn new(
        params: FsParams,
        tick_ms: u64,
        quantum_ms: u64,
        capping: bool,
        users: &[(u64, Option<f64>)],
        procs: &[ProcSpec],
    ) -> Self {
        let cap_window_ticks = (params.usage_window_ms / tick_ms.max(1)).max(1);
        let users = users
            .iter()
            .map(|&(shares, cap)| FsUserState {
                shares,
                usage: 0.0,
                cost: 0.0,
                p_active: 0,
                cap,
                window_busy_ticks: 0,
                held: false,
            })
            .collect();
        let procs = procs
            .iter()
            .enumerate()
            .map(|(pid, p)| FsProcState {
                pid,
                owner: p.owner,
                nice: p.nice,
                sharepri: 0.0,
                quantum_left_ms: quantum_ms,
            })
            .collect();
        Self {
            params,
            tick_ms,
            quantum_ms,
            capping,
            users,
            procs,
            queue: RunQueue::default(),
            running: None,
            cap_ring: VecDeque::with_capacity(cap_window_ticks as usize),
            cap_window_ticks,
            trace: None,
        }
    }

    /// Start recording a row per user at every usage-window boundary.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<FsTraceRow> {
        self.trace.take().unwrap_or_default()
    }

    pub fn user_state(&self, user: usize) -> &FsUserState {
        &self.users[user]
    }

    pub fn user_state_mut(&mut self, user: usize) -> &mut FsUserState {
        &mut self.users[user]
    }

    pub fn proc_state(&self, pid: Pid) -> &FsProcState {
        &self.procs[pid]
    }

    pub fn proc_state_mut(&mut self, pid: Pid) -> &mut FsProcState {
        &mut self.procs[pid]
    }

    pub fn charge_tick(&mut self, pid: Pid) {
        let u = &mut self.users[self.procs[pid].owner];
        u.cost += self.tick_ms as f64 / u.shares as f64;
    }

    pub fn decay_usage(&mut self) {
        let d = self.params.decay_usage;
        for u in &mut self.users {
            u.usage *= d;
            u.usage += u.cost;
            u.cost = 0.0;
        }
    }

    pub fn decay_sharepri(&mut self) {
        for p in &mut self.procs {
            p.sharepri *= self.params.pri_decay(p.nice);
        }
    }

    /// Pushes the running process back by its owner's usage times the owner's
    /// ready population, per share.
    pub fn tick_adjust(&mut self) {
        if let Some(pid) = self.running {
            let u = &self.users[self.procs[pid].owner];
            let inc = u.usage * f64::from(u.p_active) / u.shares as f64;
            self.procs[pid].sharepri += inc;
        }
    }

    pub fn select_next(&self) -> Option<Pid> {
        self.queue.min_by_key(
            |pid| !self.users[self.procs[pid].owner].held,
            |pid| self.procs[pid].sharepri,
        )
    }

    /// Slides the trailing cap window forward by one tick and holds or
    /// releases capped users.
    pub fn enforce_cap(&mut self) {
        if !self.capping {
            return;
        }
        let owner = self.running.map(|pid| self.procs[pid].owner);
        if let Some(o) = owner {
            self.users[o].window_busy_ticks += 1;
        }
        self.cap_ring.push_back(owner);
        if self.cap_ring.len() as u64 > self.cap_window_ticks {
            if let Some(Some(o)) = self.cap_ring.pop_front() {
                self.users[o].window_busy_ticks -= 1;
            }
        }
        let w = self.cap_window_ticks as f64;
        for u in &mut self.users {
            let Some(cap) = u.cap else { continue };
            let limit = cap * w;
            let busy = u.window_busy_ticks as f64;
            if busy > limit {
                u.held = true;
            } else if busy < limit {
                u.held = false;
            }
        }
    }
}

impl Scheduler for FairShare {
    fn admit(&mut self, pid: Pid) {
        self.procs[pid].quantum_left_ms = self.quantum_ms;
        self.users[self.procs[pid].owner].p_active += 1;
        self.queue.push_back(pid);
    }

    fn dispatch(&mut self) -> Option<Pid> {
        debug_assert!(self.running.is_none());
        let pid = self.select_next()?;
        self.queue.remove(pid);
        self.procs[pid].quantum_left_ms = self.quantum_ms;
        self.running = Some(pid);
        Some(pid)
    }

    fn tick(&mut self) {
        if let Some(pid) = self.running {
            self.charge_tick(pid);
            let p = &mut self.procs[pid];
            p.quantum_left_ms = p.quantum_left_ms.saturating_sub(self.tick_ms);
        }
        self.tick_adjust();
        self.enforce_cap();
    }

    fn running(&self) -> Option<Pid> {
        self.running
    }

    fn quantum_expired(&self) -> bool {
        self.running.is_some_and(|pid| self.procs[pid].quantum_left_ms == 0)
    }

    fn preempt(&mut self) {
        if let Some(pid) = self.running.take() {
            self.procs[pid].quantum_left_ms = self.quantum_ms;
            self.queue.push_back(pid);
        }
    }

    fn complete(&mut self) {
        if let Some(pid) = self.running.take() {
            self.users[self.procs[pid].owner].p_active -= 1;
        }
    }

    fn on_clock(&mut self, now_ms: u64) {
        if now_ms.is_multiple_of(self.params.pri_window_ms) {
            self.decay_sharepri();
        }
        if now_ms.is_multiple_of(self.params.usage_window_ms) {
            let closing: Vec<f64> = self.users.iter().map(|u| u.cost).collect();
            self.decay_usage();
            if let Some(trace) = &mut self.trace {
                for (i, u) in self.users.iter().enumerate() {
                    trace.push(FsTraceRow {
                        window_end_ms: now_ms,
                        user: i,
                        usage: u.usage,
                        cost: closing[i],
                        p_active: u.p_active,
                    });
                }
            }
        }
    }

    fn census(&self) -> Vec<u32> {
        self.users.iter().map(|u| u.p_active).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(shares: &[u64]) -> FairShare {
        let users: Vec<_> = shares.iter().map(|&s| (s, None)).collect();
        let procs: Vec<_> = (0..shares.len()).map(|i| ProcSpec { owner: i, nice: 0 }).collect();
        FairShare::new(FsParams::default(), 10, 10, false, &users, &procs)
    }

    #[test]
    fn charge_is_share_normalised() {
        let mut s = fs(&[10, 90]);
        s.charge_tick(0);
        s.charge_tick(1);
        assert!((s.user_state(0).cost - 1.0).abs() < 1e-12);
        assert!((s.user_state(1).cost - 0.1111).abs() < 1e-4);
    }

    #[test]
    fn idle_tick_charges_nobody() {
        let mut s = fs(&[10, 90]);
        s.tick();
        assert_eq!(s.user_state(0).cost, 0.0);
        assert_eq!(s.user_state(1).cost, 0.0);
    }

    #[test]
    fn usage_recurrence() {
        let params = FsParams { decay_usage: 0.5, ..FsParams::default() };
        let mut s = FairShare::new(params, 10, 10, false, &[(10, None)], &[ProcSpec { owner: 0, nice: 0 }]);
        s.user_state_mut(0).usage = 100.0;
        s.user_state_mut(0).cost = 20.0;
        s.decay_usage();
        assert_eq!(s.user_state(0).usage, 70.0);
        assert_eq!(s.user_state(0).cost, 0.0);
    }

    #[test]
    fn zero_decay_keeps_last_window_only() {
        let params = FsParams { decay_usage: 0.0, ..FsParams::default() };
        let mut s = FairShare::new(params, 10, 10, false, &[(10, None)], &[ProcSpec { owner: 0, nice: 0 }]);
        s.user_state_mut(0).usage = 100.0;
        s.user_state_mut(0).cost = 7.0;
        s.decay_usage();
        assert_eq!(s.user_state(0).usage, 7.0);
    }

    #[test]
    fn usage_converges_to_geometric_fixed_point() {
        let mut s = fs(&[10]);
        let d = FsParams::default().decay_usage;
        for _ in 0..200 {
            s.user_state_mut(0).cost = 3.0;
            s.decay_usage();
        }
        let want = 3.0 / (1.0 - d);
        assert!((s.user_state(0).usage - want).abs() / want < 0.01);
    }

    #[test]
    fn sharepri_decay_uses_nice() {
        let params = FsParams { pri_a: 0.01, pri_b: 0.5, ..FsParams::default() };
        let procs = [
            ProcSpec { owner: 0, nice: 0 },
            ProcSpec { owner: 0, nice: 19 },
            ProcSpec { owner: 0, nice: -19 },
        ];
        let mut s = FairShare::new(params, 10, 10, false, &[(10, None)], &procs);
        for pid in 0..3 {
            s.proc_state_mut(pid).sharepri = 200.0;
        }
        s.decay_sharepri();
        assert!((s.proc_state(0).sharepri - 100.0).abs() < 1e-9);
        assert!((s.proc_state(1).sharepri - 138.0).abs() < 1e-9);
        assert!((s.proc_state(2).sharepri - 62.0).abs() < 1e-9);
    }

    #[test]
    fn fresh_user_is_not_pushed_back() {
        let mut s = fs(&[10]);
        s.admit(0);
        s.dispatch();
        s.tick();
        assert_eq!(s.proc_state(0).sharepri, 0.0);
    }

    #[test]
    fn running_process_gains_usage_times_population_per_share() {
        let procs: Vec<_> = (0..4).map(|_| ProcSpec { owner: 0, nice: 0 }).collect();
        let mut s = FairShare::new(FsParams::default(), 10, 10, false, &[(1, None)], &procs);
        for pid in 0..4 {
            s.admit(pid);
        }
        s.user_state_mut(0).usage = 5.0;
        let pid = s.dispatch().unwrap();
        s.tick_adjust();
        assert_eq!(s.proc_state(pid).sharepri, 20.0);
        for other in (0..4).filter(|&p| p != pid) {
            assert_eq!(s.proc_state(other).sharepri, 0.0);
        }
    }

    #[test]
    fn lowest_sharepri_wins_and_empty_is_idle() {
        let mut s = fs(&[10, 90]);
        assert_eq!(s.dispatch(), None);
        s.proc_state_mut(0).sharepri = 500.0;
        s.admit(0);
        s.admit(1);
        assert_eq!(s.dispatch(), Some(1));
    }

    fn saturated_split(shares: &[u64], seconds: u64) -> Vec<u64> {
        let mut s = fs(shares);
        for pid in 0..shares.len() {
            s.admit(pid);
        }
        let mut ran = vec![0u64; shares.len()];
        for t in 1..=seconds * 100 {
            if s.running().is_none() {
                s.dispatch();
            }
            ran[s.running().unwrap()] += 1;
            s.tick();
            if s.quantum_expired() {
                s.preempt();
            }
            s.on_clock(t * 10);
        }
        ran
    }

    #[test]
    fn saturated_split_follows_shares() {
        let ran = saturated_split(&[90, 10], 120);
        let frac = ran[0] as f64 / (ran[0] + ran[1]) as f64;
        assert!((frac - 0.9).abs() <= 0.05, "{ran:?}");
    }

    #[test]
    fn cap_holds_user_near_limit() {
        let users = [(10, Some(0.10))];
        let mut s = FairShare::new(FsParams::default(), 10, 10, true, &users, &[ProcSpec { owner: 0, nice: 0 }]);
        s.admit(0);
        let mut busy = 0u64;
        let ticks = 60_000u64;
        for t in 1..=ticks {
            if s.running().is_none() {
                s.dispatch();
            }
            if s.running().is_some() {
                busy += 1;
            }
            s.tick();
            if s.quantum_expired() {
                s.preempt();
            }
            s.on_clock(t * 10);
        }
        let util = busy as f64 / ticks as f64;
        assert!((0.08..=0.12).contains(&util), "{util}");
    }

    #[test]
    fn trace_rows_at_window_boundaries() {
        let mut s = fs(&[10, 90]);
        s.enable_trace();
        s.admit(0);
        for t in 1..=800u64 {
            if s.running().is_none() {
                s.dispatch();
            }
            s.tick();
            if s.quantum_expired() {
                s.preempt();
            }
            s.on_clock(t * 10);
        }
        let trace = s.take_trace();
        assert_eq!(trace.len(), 4);
        assert_eq!(trace[0].window_end_ms, 4000);
        assert!((trace[0].cost - 400.0).abs() < 1e-9);
        assert_eq!(trace[0].p_active, 1);
    }
}
