//! Vocabulary shared by every part of the simulator: share trees, workloads,
//! scheduler configuration, scenarios and metric records.
//!
//! All values are plain data. Construction never validates; call
//! [`validate_scenario`] (or [`ShareAllocation::validate`]) to collect every
//! invariant violation as data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Interval at which time-share recent CPU and fair-share process priorities decay.
pub const PRIORITY_DECAY_INTERVAL_MS: u64 = 1000;

/// Upper bound on simulated time, keeps tick arithmetic far away from overflow.
pub const MAX_DURATION_MS: u64 = 1_000_000_000_000;

macro_rules! label_type {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(label: impl Into<String>) -> Self {
                Self(label.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

label_type!(UserId);
label_type!(GroupId);

/// Identifiers must be usable as section names in scenario files.
pub fn is_valid_label(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShares {
    pub id: GroupId,
    pub shares: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserShares {
    pub id: UserId,
    pub group: GroupId,
    pub shares: u64,
    /// Upper bound on the user's CPU fraction, honoured only when capping is enabled.
    pub cap: Option<f64>,
}

/// Two-level share tree. Users partition their group's shares exactly, so the
/// tree flattens to one share count per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareAllocation {
    pub pool_total: u64,
    pub capping_enabled: bool,
    pub groups: Vec<GroupShares>,
    pub users: Vec<UserShares>,
}

impl ShareAllocation {
    pub fn user(&self, id: &UserId) -> Option<&UserShares> {
        self.users.iter().find(|u| &u.id == id)
    }

    pub fn group(&self, id: &GroupId) -> Option<&GroupShares> {
        self.groups.iter().find(|g| &g.id == id)
    }

    pub fn members<'a>(&'a self, group: &'a GroupId) -> impl Iterator<Item = &'a UserShares> + 'a {
        self.users.iter().filter(move |u| &u.group == group)
    }

    /// Every invariant violation of the share tree; empty when valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.pool_total == 0 {
            out.push(Violation::new(
                ViolationCode::PoolNotPositive,
                "pool total must be a positive share count",
            ));
        }
        if self.groups.is_empty() {
            out.push(Violation::new(ViolationCode::NoGroups, "allocation declares no groups"));
        }
        if self.users.is_empty() {
            out.push(Violation::new(ViolationCode::NoUsers, "allocation declares no users"));
        }

        let mut seen_groups = BTreeSet::new();
        for g in &self.groups {
            if !is_valid_label(g.id.as_str()) {
                out.push(Violation::new(
                    ViolationCode::InvalidLabel,
                    format!("group id {:?} must be non-empty [A-Za-z0-9_-]", g.id.as_str()),
                ));
            }
            if !seen_groups.insert(g.id.clone()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateGroup,
                    format!("group {} declared more than once", g.id),
                ));
            }
            if g.shares == 0 {
                out.push(Violation::new(
                    ViolationCode::SharesNotPositive,
                    format!("group {} has zero shares", g.id),
                ));
            }
        }

        let mut seen_users = BTreeSet::new();
        for u in &self.users {
            if !is_valid_label(u.id.as_str()) {
                out.push(Violation::new(
                    ViolationCode::InvalidLabel,
                    format!("user id {:?} must be non-empty [A-Za-z0-9_-]", u.id.as_str()),
                ));
            }
            if !seen_users.insert(u.id.clone()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateUser,
                    format!("user {} declared more than once", u.id),
                ));
            }
            if u.shares == 0 {
                out.push(Violation::new(
                    ViolationCode::SharesNotPositive,
                    format!("user {} has zero shares", u.id),
                ));
            }
            if !seen_groups.contains(&u.group) {
                out.push(Violation::new(
                    ViolationCode::UnknownGroup,
                    format!("user {} belongs to undeclared group {}", u.id, u.group),
                ));
            }
            if let Some(cap) = u.cap {
                if !(cap > 0.0 && cap <= 1.0) {
                    out.push(Violation::new(
                        ViolationCode::CapOutOfRange,
                        format!("cap {cap} of user {} out of (0,1]", u.id),
                    ));
                }
            }
        }

        let group_sum = self
            .groups
            .iter()
            .fold(0u64, |acc, g| acc.saturating_add(g.shares));
        if group_sum != self.pool_total {
            out.push(Violation::new(
                ViolationCode::GroupSharesSum,
                format!("group shares sum {group_sum} ≠ pool {}", self.pool_total),
            ));
        }

        let mut per_group: BTreeMap<&GroupId, u64> = BTreeMap::new();
        for u in &self.users {
            let e = per_group.entry(&u.group).or_default();
            *e = e.saturating_add(u.shares);
        }
        for g in &self.groups {
            let sum = per_group.get(&g.id).copied().unwrap_or(0);
            if sum != g.shares {
                out.push(Violation::new(
                    ViolationCode::UserSharesSum,
                    format!("users of group {} hold {sum} shares ≠ group shares {}", g.id, g.shares),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Fixed,
    Exponential,
}

impl Distribution {
    pub fn as_str(self) -> &'static str {
        match self {
            Distribution::Fixed => "fixed",
            Distribution::Exponential => "exponential",
        }
    }
}

/// Closed interactive workload of one user: `processes` copies of an endless
/// think → CPU demand loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserWorkload {
    pub user: UserId,
    pub processes: u32,
    pub demand_ms: f64,
    pub think_ms: f64,
    pub demand_dist: Distribution,
    pub think_dist: Distribution,
    /// Nice value applied to every process of the user, in -19..=19.
    pub nice: i32,
}

impl UserWorkload {
    pub fn cpu_bound(user: impl Into<UserId>, processes: u32, demand_ms: f64) -> Self {
        Self {
            user: user.into(),
            processes,
            demand_ms,
            think_ms: 0.0,
            demand_dist: Distribution::Fixed,
            think_dist: Distribution::Fixed,
            nice: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WorkloadSpec {
    pub users: Vec<UserWorkload>,
}

impl WorkloadSpec {
    pub fn get(&self, user: &UserId) -> Option<&UserWorkload> {
        self.users.iter().find(|w| &w.user == user)
    }

    pub fn get_mut(&mut self, user: &UserId) -> Option<&mut UserWorkload> {
        self.users.iter_mut().find(|w| &w.user == user)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Ts,
    Fs,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Ts => "ts",
            Policy::Fs => "fs",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Constants of the time-share priority formula
/// `priority = cpu_weight * recent_cpu + nice_weight * nice + expiry_penalty * expiries`
/// where `expiries` counts quantum expiries inside the current CPU burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsParams {
    pub levels: u32,
    pub cpu_weight: f64,
    pub decay_per_s: f64,
    pub nice_weight: f64,
    pub expiry_penalty: f64,
}

impl Default for TsParams {
    fn default() -> Self {
        Self {
            levels: 60,
            cpu_weight: 0.5,
            decay_per_s: 0.5,
            nice_weight: 1.0,
            expiry_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsParams {
    pub usage_window_ms: u64,
    pub pri_window_ms: u64,
    pub decay_usage: f64,
    pub pri_a: f64,
    pub pri_b: f64,
}

impl Default for FsParams {
    fn default() -> Self {
        Self {
            usage_window_ms: 4000,
            pri_window_ms: PRIORITY_DECAY_INTERVAL_MS,
            decay_usage: 0.9,
            pri_a: 0.0005,
            pri_b: 0.99,
        }
    }
}

impl FsParams {
    /// Per-second multiplier applied to a process priority, `a * nice + b`.
    pub fn pri_decay(&self, nice: i32) -> f64 {
        self.pri_a * f64::from(nice) + self.pri_b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub quantum_ms: u64,
    pub tick_ms: u64,
    pub ts: TsParams,
    pub fs: FsParams,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Ts,
            quantum_ms: 10,
            tick_ms: 10,
            ts: TsParams::default(),
            fs: FsParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Label used in reports; defaults to the scenario file stem.
    pub name: String,
    pub allocation: ShareAllocation,
    pub workload: WorkloadSpec,
    pub scheduler: SchedulerConfig,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    /// Length of each reported time-series window.
    pub window_ms: u64,
    pub seed: u64,
}

pub const DEFAULT_WINDOW_MS: u64 = 10_000;

impl Scenario {
    pub fn processes_of(&self, user: &UserId) -> u32 {
        self.workload.get(user).map_or(0, |w| w.processes)
    }

    /// Users with at least one process; the population that can ever be active.
    pub fn populated_users(&self) -> BTreeSet<UserId> {
        self.workload
            .users
            .iter()
            .filter(|w| w.processes > 0)
            .map(|w| w.user.clone())
            .collect()
    }

    pub fn with_policy(&self, policy: Policy) -> Scenario {
        let mut s = self.clone();
        s.scheduler.policy = policy;
        s
    }

    /// Same scenario with every user running `n` processes.
    pub fn with_processes(&self, n: u32) -> Scenario {
        let mut s = self.clone();
        for w in &mut s.workload.users {
            w.processes = n;
        }
        s
    }

    /// Same scenario with think time removed, making every process CPU-bound.
    pub fn cpu_bound(&self) -> Scenario {
        let mut s = self.clone();
        for w in &mut s.workload.users {
            w.think_ms = 0.0;
            w.think_dist = Distribution::Fixed;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    PoolNotPositive,
    NoGroups,
    NoUsers,
    InvalidLabel,
    DuplicateGroup,
    DuplicateUser,
    SharesNotPositive,
    UnknownGroup,
    CapOutOfRange,
    GroupSharesSum,
    UserSharesSum,
    WorkloadUnknownUser,
    WorkloadMissing,
    DuplicateWorkload,
    DemandNotPositive,
    ThinkNegative,
    NiceOutOfRange,
    TickNotPositive,
    QuantumNotMultiple,
    WindowNotMultiple,
    TsLevels,
    TsDecay,
    TsWeight,
    FsDecayUsage,
    FsPriDecayRange,
    DurationNotAfterWarmup,
    DurationTooLong,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        use ViolationCode::*;
        match self {
            PoolNotPositive => "pool_not_positive",
            NoGroups => "no_groups",
            NoUsers => "no_users",
            InvalidLabel => "invalid_label",
            DuplicateGroup => "duplicate_group",
            DuplicateUser => "duplicate_user",
            SharesNotPositive => "shares_not_positive",
            UnknownGroup => "unknown_group",
            CapOutOfRange => "cap_out_of_range",
            GroupSharesSum => "group_shares_sum",
            UserSharesSum => "user_shares_sum",
            WorkloadUnknownUser => "workload_unknown_user",
            WorkloadMissing => "workload_missing",
            DuplicateWorkload => "duplicate_workload",
            DemandNotPositive => "demand_not_positive",
            ThinkNegative => "think_negative",
            NiceOutOfRange => "nice_out_of_range",
            TickNotPositive => "tick_not_positive",
            QuantumNotMultiple => "quantum_not_multiple",
            WindowNotMultiple => "window_not_multiple",
            TsLevels => "ts_levels",
            TsDecay => "ts_decay",
            TsWeight => "ts_weight",
            FsDecayUsage => "fs_decay_usage",
            FsPriDecayRange => "fs_pri_decay_range",
            DurationNotAfterWarmup => "duration_not_after_warmup",
            DurationTooLong => "duration_too_long",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn multiple_of(value: u64, unit: u64) -> bool {
    unit > 0 && value > 0 && value.is_multiple_of(unit)
}

/// Collects every invariant violation of `s`. Never panics.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = s.allocation.validate();

    let declared: BTreeSet<&UserId> = s.allocation.users.iter().map(|u| &u.id).collect();
    let mut seen = BTreeSet::new();
    for w in &s.workload.users {
        if !declared.contains(&w.user) {
            out.push(Violation::new(
                ViolationCode::WorkloadUnknownUser,
                format!("workload for undeclared user {}", w.user),
            ));
        }
        if !seen.insert(&w.user) {
            out.push(Violation::new(
                ViolationCode::DuplicateWorkload,
                format!("user {} has more than one workload", w.user),
            ));
        }
        if !(w.demand_ms > 0.0 && w.demand_ms.is_finite()) {
            out.push(Violation::new(
                ViolationCode::DemandNotPositive,
                format!("demand_ms {} of user {} must be positive", w.demand_ms, w.user),
            ));
        }
        if !(w.think_ms >= 0.0 && w.think_ms.is_finite()) {
            out.push(Violation::new(
                ViolationCode::ThinkNegative,
                format!("think_ms {} of user {} must be non-negative", w.think_ms, w.user),
            ));
        }
        if !(-19..=19).contains(&w.nice) {
            out.push(Violation::new(
                ViolationCode::NiceOutOfRange,
                format!("nice {} of user {} outside -19..=19", w.nice, w.user),
            ));
        }
    }
    for u in declared {
        if !seen.contains(u) {
            out.push(Violation::new(
                ViolationCode::WorkloadMissing,
                format!("user {u} has no workload"),
            ));
        }
    }

    let sc = &s.scheduler;
    if sc.tick_ms == 0 {
        out.push(Violation::new(ViolationCode::TickNotPositive, "tick_ms must be positive"));
    } else {
        if !multiple_of(sc.quantum_ms, sc.tick_ms) {
            out.push(Violation::new(
                ViolationCode::QuantumNotMultiple,
                format!(
                    "quantum_ms {} is not a positive multiple of tick_ms {}",
                    sc.quantum_ms, sc.tick_ms
                ),
            ));
        }
        for (name, v) in [
            ("fs.usage_window_ms", sc.fs.usage_window_ms),
            ("fs.pri_window_ms", sc.fs.pri_window_ms),
            ("sim.window_ms", s.window_ms),
            ("priority decay interval", PRIORITY_DECAY_INTERVAL_MS),
        ] {
            if !multiple_of(v, sc.tick_ms) {
                out.push(Violation::new(
                    ViolationCode::WindowNotMultiple,
                    format!("{name} {v} is not a positive multiple of tick_ms {}", sc.tick_ms),
                ));
            }
        }
        if !multiple_of(s.warmup_ms, sc.tick_ms) && s.warmup_ms != 0 {
            out.push(Violation::new(
                ViolationCode::WindowNotMultiple,
                format!("warmup_ms {} is not a multiple of tick_ms {}", s.warmup_ms, sc.tick_ms),
            ));
        }
        if !s.duration_ms.is_multiple_of(sc.tick_ms) {
            out.push(Violation::new(
                ViolationCode::WindowNotMultiple,
                format!("duration_ms {} is not a multiple of tick_ms {}", s.duration_ms, sc.tick_ms),
            ));
        }
    }

    let ts = &sc.ts;
    if ts.levels < 2 {
        out.push(Violation::new(ViolationCode::TsLevels, "ts.levels must be at least 2"));
    }
    if !(ts.decay_per_s >= 0.0 && ts.decay_per_s < 1.0) {
        out.push(Violation::new(
            ViolationCode::TsDecay,
            format!("ts.decay_per_s {} outside [0,1)", ts.decay_per_s),
        ));
    }
    for (name, v) in [
        ("ts.cpu_weight", ts.cpu_weight),
        ("ts.nice_weight", ts.nice_weight),
        ("ts.expiry_penalty", ts.expiry_penalty),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            out.push(Violation::new(
                ViolationCode::TsWeight,
                format!("{name} {v} must be finite and non-negative"),
            ));
        }
    }

    let fs = &sc.fs;
    if !(fs.decay_usage >= 0.0 && fs.decay_usage < 1.0) {
        out.push(Violation::new(
            ViolationCode::FsDecayUsage,
            format!("fs.decay_usage {} outside [0,1)", fs.decay_usage),
        ));
    }
    for nice in [-19, 19] {
        let d = fs.pri_decay(nice);
        if !(0.0..=1.0).contains(&d) {
            out.push(Violation::new(
                ViolationCode::FsPriDecayRange,
                format!("priority decay a*nice+b = {d} outside [0,1] at nice {nice}"),
            ));
        }
    }

    if s.duration_ms <= s.warmup_ms {
        out.push(Violation::new(
            ViolationCode::DurationNotAfterWarmup,
            format!("duration_ms {} must exceed warmup_ms {}", s.duration_ms, s.warmup_ms),
        ));
    }
    if s.duration_ms > MAX_DURATION_MS {
        out.push(Violation::new(
            ViolationCode::DurationTooLong,
            format!("duration_ms {} exceeds {MAX_DURATION_MS}", s.duration_ms),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Entity {
    User(UserId),
    Group(GroupId),
    System,
}

/// Counters for one entity over one measurement window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub entity: Entity,
    pub start_ms: u64,
    pub end_ms: u64,
    pub busy_ms: u64,
    pub transactions_completed: u64,
    pub resp_sum_ms: u64,
    pub resp_samples: Vec<u64>,
}

impl MetricRecord {
    pub fn new(entity: Entity, start_ms: u64, end_ms: u64) -> Self {
        Self {
            entity,
            start_ms,
            end_ms,
            busy_ms: 0,
            transactions_completed: 0,
            resp_sum_ms: 0,
            resp_samples: Vec::new(),
        }
    }

    pub fn len_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}
