//! Process-blind multilevel time-share discipline.
//!
//! Every process is judged only by its own recent CPU consumption, its nice
//! value and how many quanta its current burst has already burned. The owner
//! is carried for reporting but never consulted when choosing who runs.

use super::{Pid, ProcSpec, RunQueue, Scheduler};
use crate::domain::{TsParams, PRIORITY_DECAY_INTERVAL_MS};

#[derive(Debug, Clone, PartialEq)]
pub struct TsProcState {
    pub pid: Pid,
    pub owner: usize,
    pub nice: i32,
    /// Decayed count of ticks spent on the CPU.
    pub recent_cpu: f64,
    /// Quantum expiries since the current burst began.
    pub expiries: u32,
    pub quantum_left_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TimeShare {
    params: TsParams,
    tick_ms: u64,
    quantum_ms: u64,
    procs: Vec<TsProcState>,
    queue: RunQueue,
    running: Option<Pid>,
    users: usize,
}

impl TimeShare {
    pub fn new(params: TsParams, tick_ms: u64, quantum_ms: u64, users: usize, procs: &[ProcSpec]) -> Self {
        debug_assert!(procs.iter().all(|p| p.owner < users));
        let procs = procs
            .iter()
            .enumerate()
            .map(|(pid, p)| TsProcState {
                pid,
                owner: p.owner,
                nice: p.nice,
                recent_cpu: 0.0,
                expiries: 0,
                quantum_left_ms: quantum_ms,
            })
            .collect();
        Self { params, tick_ms, quantum_ms, procs, queue: RunQueue::default(), running: None, users }
    }

    pub fn proc_state(&self, pid: Pid) -> &TsProcState {
        &self.procs[pid]
    }

    pub fn proc_state_mut(&mut self, pid: Pid) -> &mut TsProcState {
        &mut self.procs[pid]
    }

    pub fn queue(&self) -> &RunQueue {
        &self.queue
    }

    /// Raw priority value; lower is better.
    pub fn priority(&self, pid: Pid) -> f64 {
        let p = &self.procs[pid];
        self.params.cpu_weight * p.recent_cpu
            + self.params.nice_weight * f64::from(p.nice)
            + self.params.expiry_penalty * f64::from(p.expiries)
    }

    /// Run-queue level the priority falls into.
    pub fn level(&self, pid: Pid) -> u32 {
        let top = self.params.levels.saturating_sub(1);
        let v = self.priority(pid).floor();
        if v <= 0.0 {
            0
        } else if v >= f64::from(top) {
            top
        } else {
            v as u32
        }
    }

    /// Best ready process without removing it from the queue.
    pub fn select_next(&self) -> Option<Pid> {
        self.queue.min_by_key(|_| true, |pid| self.level(pid))
    }

    /// Charges one tick to the running process.
    pub fn on_tick(&mut self) {
        if let Some(pid) = self.running {
            let p = &mut self.procs[pid];
            p.recent_cpu += 1.0;
            p.quantum_left_ms = p.quantum_left_ms.saturating_sub(self.tick_ms);
        }
    }

    pub fn on_quantum_expiry(&mut self, pid: Pid) {
        let q = self.quantum_ms;
        let p = &mut self.procs[pid];
        p.expiries += 1;
        p.quantum_left_ms = q;
        if self.running == Some(pid) {
            self.running = None;
        }
        self.queue.push_back(pid);
    }

    pub fn decay_recent_cpu(&mut self) {
        let d = self.params.decay_per_s;
        for p in &mut self.procs {
            p.recent_cpu *= d;
        }
    }
}

impl Scheduler for TimeShare {
    fn admit(&mut self, pid: Pid) {
        self.procs[pid].quantum_left_ms = self.quantum_ms;
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
        self.on_tick();
    }

    fn running(&self) -> Option<Pid> {
        self.running
    }

    fn quantum_expired(&self) -> bool {
        self.running.is_some_and(|pid| self.procs[pid].quantum_left_ms == 0)
    }

    fn preempt(&mut self) {
        if let Some(pid) = self.running {
            self.on_quantum_expiry(pid);
        }
    }

    fn complete(&mut self) {
        if let Some(pid) = self.running.take() {
            self.procs[pid].expiries = 0;
        }
    }

    fn on_clock(&mut self, now_ms: u64) {
        if now_ms.is_multiple_of(PRIORITY_DECAY_INTERVAL_MS) {
            self.decay_recent_cpu();
        }
    }

    fn census(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.users];
        for pid in self.queue.pids().chain(self.running) {
            c[self.procs[pid].owner] += 1;
        }
        c
    }
}
