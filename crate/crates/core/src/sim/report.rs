use serde::{Deserialize, Serialize};

use crate::domain::{GroupId, MetricRecord, Policy, Scenario, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: UserId,
    pub group: GroupId,
    pub processes: u32,
    pub shares: u64,
    pub entitlement_static: f64,
    /// Entitlement among the users that have processes, after capping.
    pub entitlement_dynamic: f64,
    pub busy_ms: u64,
    pub transactions: u64,
    pub utilization: f64,
    pub tps: f64,
    pub work_tput_ms_per_s: f64,
    /// `None` when nothing completed inside the measured interval.
    pub resp_mean_ms: Option<f64>,
    pub resp_p95_ms: Option<f64>,
    pub preemptions: u64,
    /// Longest time any of the user's processes sat ready without running.
    pub max_ready_wait_ms: u64,
    /// Time-averaged number of the user's processes ready or running.
    pub mean_in_cpu: f64,
    /// Sum of sampled demands of transactions completed in the measured interval.
    pub completed_demand_ms: f64,
    /// CPU held by transactions still unfinished when the run ended.
    pub inflight_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: GroupId,
    pub shares: u64,
    pub processes: u32,
    pub busy_ms: u64,
    pub transactions: u64,
    pub utilization: f64,
    pub tps: f64,
    pub work_tput_ms_per_s: f64,
    pub resp_mean_ms: Option<f64>,
    pub resp_p95_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub measured_ms: u64,
    pub busy_ms: u64,
    pub idle_ms: u64,
    pub total_utilization: f64,
    pub tps: f64,
}

/// Fair-share accounting snapshot for one user at a usage-window boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsTraceEntry {
    pub window_end_ms: u64,
    pub user: UserId,
    pub usage: f64,
    pub cost: f64,
    pub p_active: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub users: Vec<UserMetrics>,
    pub groups: Vec<GroupMetrics>,
    pub system: SystemMetrics,
    pub windows: Vec<MetricRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fs_trace: Vec<FsTraceEntry>,
    pub config: Scenario,
}

impl SimReport {
    pub fn user(&self, id: &str) -> Option<&UserMetrics> {
        self.users.iter().find(|u| u.user.as_str() == id)
    }

    pub fn group(&self, id: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group.as_str() == id)
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario",
    "policy",
    "user",
    "group",
    "processes",
    "shares",
    "entitlement_static",
    "entitlement_dynamic",
    "util",
    "tps",
    "work_tput_ms_per_s",
    "resp_mean_ms",
    "resp_p95_ms",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// One CSV line per user, columns as in [`CSV_COLUMNS`].
pub fn csv_rows(r: &SimReport) -> Vec<String> {
    r.users
        .iter()
        .map(|u| {
            format!(
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.4},{:.3},{},{}",
                r.scenario,
                r.policy,
                u.user,
                u.group,
                u.processes,
                u.shares,
                u.entitlement_static,
                u.entitlement_dynamic,
                u.utilization,
                u.tps,
                u.work_tput_ms_per_s,
                opt(u.resp_mean_ms),
                opt(u.resp_p95_ms),
            )
        })
        .collect()
}

/// Response-time ratio of one user between two runs of the same workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub user: UserId,
    pub resp_ts_ms: Option<f64>,
    pub resp_fs_ms: Option<f64>,
    /// `resp_fs / resp_ts`; `None` if either side completed nothing.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ts: SimReport,
    pub fs: SimReport,
    pub degradation: Vec<Degradation>,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &mut [u64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_unstable();
    let rank = ((p * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    Some(samples[rank - 1] as f64)
}
