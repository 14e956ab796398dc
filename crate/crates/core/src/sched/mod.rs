//! CPU dispatch disciplines driven by the simulation engine.
//!
//! A scheduler owns its run queue and per-process priority state. The engine
//! owns everything about workloads (demands, think times, metrics) and tells
//! the scheduler when processes arrive, run, finish or exhaust their quantum.

pub mod fs;
pub mod ts;

pub use fs::{FairShare, FsProcState, FsTraceRow, FsUserState};
pub use ts::{TimeShare, TsProcState};

/// Index of a process inside one simulation run.
pub type Pid = usize;

/// Static description of a process handed to a scheduler at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcSpec {
    /// Index of the owning user in the scenario's allocation.
    pub owner: usize,
    pub nice: i32,
}

pub trait Scheduler {
    /// A process starts a new CPU burst and joins the back of the run queue.
    fn admit(&mut self, pid: Pid);

    /// Removes the best ready process from the queue and puts it on the CPU
    /// with a fresh quantum. `None` means the CPU idles.
    fn dispatch(&mut self) -> Option<Pid>;

    /// One tick has elapsed; the running process (if any) held the CPU for it.
    fn tick(&mut self);

    fn running(&self) -> Option<Pid>;

    /// Whether the running process has used up its quantum.
    fn quantum_expired(&self) -> bool;

    /// The running process exhausted its quantum without finishing its burst.
    fn preempt(&mut self);

    /// The running process finished its burst and leaves the CPU to think.
    fn complete(&mut self);

    /// The clock reached `now_ms` at the end of a tick.
    fn on_clock(&mut self, now_ms: u64);

    /// Number of ready or running processes per user, indexed like the allocation.
    fn census(&self) -> Vec<u32>;
}

/// Ready processes in FIFO arrival order.
#[derive(Debug, Clone, Default)]
pub struct RunQueue {
    entries: Vec<(Pid, u64)>,
    next_seq: u64,
}

impl RunQueue {
    pub fn push_back(&mut self, pid: Pid) {
        debug_assert!(!self.contains(pid), "pid {pid} queued twice");
        self.entries.push((pid, self.next_seq));
        self.next_seq += 1;
    }

    pub fn remove(&mut self, pid: Pid) -> bool {
        match self.entries.iter().position(|(p, _)| *p == pid) {
            Some(i) => {
                self.entries.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, pid: Pid) -> bool {
        self.entries.iter().any(|(p, _)| *p == pid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> + '_ {
        self.entries.iter().map(|(p, _)| *p)
    }

    /// Ready process with the smallest key; equal keys go to the earliest arrival.
    pub fn min_by_key<K: PartialOrd>(
        &self,
        mut eligible: impl FnMut(Pid) -> bool,
        mut key: impl FnMut(Pid) -> K,
    ) -> Option<Pid> {
        let mut best: Option<(K, u64, Pid)> = None;
        for &(pid, seq) in &self.entries {
            if !eligible(pid) {
                continue;
            }
            let k = key(pid);
            let better = match &best {
                None => true,
                Some((bk, bseq, _)) => k < *bk || (k == *bk && seq < *bseq),
            };
            if better {
                best = Some((k, seq, pid));
            }
        }
        best.map(|(_, _, pid)| pid)
    }
}
