//! Scenario file format.
//!
//! A scenario is a sequence of `[section]` headers, each followed by
//! whitespace-separated `key=value` tokens (on the header line or on the lines
//! after it). `#` starts a comment. Unknown sections and keys are rejected.
//!
//! ```text
//! [pool] total=100 capping=false
//! [group.DBMS] shares=60
//! [user.dbms] group=DBMS shares=60 cap=0.6
//! [workload.dbms] processes=10 demand_ms=500 think_ms=1000 demand_dist=fixed think_dist=exponential
//! [scheduler] policy=fs quantum_ms=10 tick_ms=10
//! [sim] duration_ms=600000 warmup_ms=60000 seed=42
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use crate::domain::{
    Distribution, FsParams, GroupShares, Policy, Scenario, SchedulerConfig, ShareAllocation,
    TsParams, UserShares, UserWorkload, WorkloadSpec, DEFAULT_WINDOW_MS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SectionKind {
    Pool,
    Group,
    User,
    Workload,
    Scheduler,
    Ts,
    Fs,
    Sim,
}

impl SectionKind {
    fn of(name: &str) -> Option<(SectionKind, Option<&str>)> {
        let (head, id) = match name.split_once('.') {
            Some((h, id)) => (h, Some(id)),
            None => (name, None),
        };
        let kind = match head {
            "pool" => SectionKind::Pool,
            "group" => SectionKind::Group,
            "user" => SectionKind::User,
            "workload" => SectionKind::Workload,
            "scheduler" => SectionKind::Scheduler,
            "ts" => SectionKind::Ts,
            "fs" => SectionKind::Fs,
            "sim" => SectionKind::Sim,
            _ => return None,
        };
        let needs_id = matches!(kind, SectionKind::Group | SectionKind::User | SectionKind::Workload);
        match (needs_id, id) {
            (true, Some(id)) if !id.is_empty() => Some((kind, Some(id))),
            (false, None) => Some((kind, None)),
            _ => None,
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            SectionKind::Pool => &["total", "capping"],
            SectionKind::Group => &["shares"],
            SectionKind::User => &["group", "shares", "cap"],
            SectionKind::Workload => &[
                "processes",
                "demand_ms",
                "think_ms",
                "demand_dist",
                "think_dist",
                "nice",
            ],
            SectionKind::Scheduler => &["policy", "quantum_ms", "tick_ms"],
            SectionKind::Ts => &["levels", "cpu_weight", "decay_per_s", "nice_weight", "expiry_penalty"],
            SectionKind::Fs => &["usage_window_ms", "pri_window_ms", "decay_usage", "pri_a", "pri_b"],
            SectionKind::Sim => &["duration_ms", "warmup_ms", "seed", "window_ms", "label"],
        }
    }

    /// Sections that may be created by an override when absent from the file.
    fn optional(self) -> bool {
        matches!(self, SectionKind::Scheduler | SectionKind::Ts | SectionKind::Fs)
    }
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct RawSection {
    name: String,
    kind: SectionKind,
    line: usize,
    entries: Vec<Entry>,
}

impl RawSection {
    fn id(&self) -> &str {
        self.name.split_once('.').map_or("", |(_, id)| id)
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        match self.get(key) {
            Some(e) => parse_value(e, &self.name),
            None => Err(Error::Parse {
                line: self.line,
                message: format!("[{}] is missing required key {key}", self.name),
            }),
        }
    }

    fn optional<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            Some(e) => parse_value(e, &self.name),
            None => Ok(default),
        }
    }
}

fn parse_value<T: FromStr>(e: &Entry, section: &str) -> Result<T> {
    e.value.parse().map_err(|_| Error::Parse {
        line: e.line,
        message: format!("[{section}] {}: cannot parse {:?}", e.key, e.value),
    })
}

impl FromStr for Policy {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "ts" => Ok(Policy::Ts),
            "fs" => Ok(Policy::Fs),
            _ => Err(()),
        }
    }
}

impl FromStr for Distribution {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "fixed" => Ok(Distribution::Fixed),
            "exponential" => Ok(Distribution::Exponential),
            _ => Err(()),
        }
    }
}

/// Key-value view of a scenario file, before typing. Overrides are applied here.
#[derive(Debug, Clone)]
pub struct ScenarioDoc {
    sections: Vec<RawSection>,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<RawSection> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("");
            for token in content.split_whitespace() {
                if let Some(inner) = token.strip_prefix('[') {
                    let name = inner.strip_suffix(']').ok_or_else(|| Error::Parse {
                        line,
                        message: format!("malformed section header {token:?}"),
                    })?;
                    let (kind, _) = SectionKind::of(name).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("unknown section [{name}]"),
                    })?;
                    if sections.iter().any(|s| s.name == name) {
                        return Err(Error::Parse {
                            line,
                            message: format!("duplicate section [{name}]"),
                        });
                    }
                    sections.push(RawSection {
                        name: name.to_owned(),
                        kind,
                        line,
                        entries: Vec::new(),
                    });
                    continue;
                }
                let section = sections.last_mut().ok_or_else(|| Error::Parse {
                    line,
                    message: format!("{token:?} appears before any section header"),
                })?;
                let (key, value) = token.split_once('=').ok_or_else(|| Error::Parse {
                    line,
                    message: format!("expected key=value, found {token:?}"),
                })?;
                if !section.kind.keys().contains(&key) {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key {key} in [{}]", section.name),
                    });
                }
                if section.get(key).is_some() {
                    return Err(Error::Parse {
                        line,
                        message: format!("duplicate key {key} in [{}]", section.name),
                    });
                }
                section.entries.push(Entry {
                    key: key.to_owned(),
                    value: value.to_owned(),
                    line,
                });
            }
        }
        Ok(Self { sections })
    }

    /// Applies `section.key=value`, e.g. `scheduler.policy=fs` or
    /// `workload.usrA.processes=20`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let bad = |message: String| Error::Parse { line: 0, message };
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| bad(format!("override {assignment:?} is not section.key=value")))?;
        let (section_name, key) = path
            .rsplit_once('.')
            .ok_or_else(|| bad(format!("override {path:?} lacks a section")))?;
        let (kind, _) = SectionKind::of(section_name)
            .ok_or_else(|| bad(format!("override names unknown section [{section_name}]")))?;
        if !kind.keys().contains(&key) {
            return Err(bad(format!("override names unknown key {key} in [{section_name}]")));
        }
        if value.is_empty() || value.contains(char::is_whitespace) {
            return Err(bad(format!("override value for {path} must be a single token")));
        }
        let section = match self.sections.iter_mut().position(|s| s.name == section_name) {
            Some(i) => &mut self.sections[i],
            None if kind.optional() => {
                self.sections.push(RawSection {
                    name: section_name.to_owned(),
                    kind,
                    line: 0,
                    entries: Vec::new(),
                });
                self.sections.last_mut().expect("just pushed")
            }
            None => return Err(bad(format!("override names absent section [{section_name}]"))),
        };
        match section.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value.to_owned(),
            None => section.entries.push(Entry {
                key: key.to_owned(),
                value: value.to_owned(),
                line: 0,
            }),
        }
        Ok(())
    }

    fn single(&self, kind: SectionKind) -> Option<&RawSection> {
        self.sections.iter().find(|s| s.kind == kind)
    }

    /// Types the document. `default_name` labels the scenario unless
    /// `[sim] label=` is present.
    pub fn to_scenario(&self, default_name: &str) -> Result<Scenario> {
        let missing = |name: &str| Error::Parse {
            line: 0,
            message: format!("missing required section [{name}]"),
        };
        let pool = self.single(SectionKind::Pool).ok_or_else(|| missing("pool"))?;
        let sim = self.single(SectionKind::Sim).ok_or_else(|| missing("sim"))?;

        let mut groups = Vec::new();
        let mut users = Vec::new();
        let mut workloads = Vec::new();
        for s in &self.sections {
            match s.kind {
                SectionKind::Group => groups.push(GroupShares {
                    id: s.id().into(),
                    shares: s.required("shares")?,
                }),
                SectionKind::User => users.push(UserShares {
                    id: s.id().into(),
                    group: s.required::<String>("group")?.into(),
                    shares: s.required("shares")?,
                    cap: match s.get("cap") {
                        Some(e) => Some(parse_value(e, &s.name)?),
                        None => None,
                    },
                }),
                SectionKind::Workload => workloads.push(UserWorkload {
                    user: s.id().into(),
                    processes: s.required("processes")?,
                    demand_ms: s.required("demand_ms")?,
                    think_ms: s.optional("think_ms", 0.0)?,
                    demand_dist: s.optional("demand_dist", Distribution::Fixed)?,
                    think_dist: s.optional("think_dist", Distribution::Fixed)?,
                    nice: s.optional("nice", 0)?,
                }),
                _ => {}
            }
        }

        let mut scheduler = SchedulerConfig::default();
        if let Some(s) = self.single(SectionKind::Scheduler) {
            scheduler.policy = s.optional("policy", scheduler.policy)?;
            scheduler.quantum_ms = s.optional("quantum_ms", scheduler.quantum_ms)?;
            scheduler.tick_ms = s.optional("tick_ms", scheduler.tick_ms)?;
        }
        if let Some(s) = self.single(SectionKind::Ts) {
            let d = TsParams::default();
            scheduler.ts = TsParams {
                levels: s.optional("levels", d.levels)?,
                cpu_weight: s.optional("cpu_weight", d.cpu_weight)?,
                decay_per_s: s.optional("decay_per_s", d.decay_per_s)?,
                nice_weight: s.optional("nice_weight", d.nice_weight)?,
                expiry_penalty: s.optional("expiry_penalty", d.expiry_penalty)?,
            };
        }
        if let Some(s) = self.single(SectionKind::Fs) {
            let d = FsParams::default();
            scheduler.fs = FsParams {
                usage_window_ms: s.optional("usage_window_ms", d.usage_window_ms)?,
                pri_window_ms: s.optional("pri_window_ms", d.pri_window_ms)?,
                decay_usage: s.optional("decay_usage", d.decay_usage)?,
                pri_a: s.optional("pri_a", d.pri_a)?,
                pri_b: s.optional("pri_b", d.pri_b)?,
            };
        }

        Ok(Scenario {
            name: sim.optional("label", default_name.to_owned())?,
            allocation: ShareAllocation {
                pool_total: pool.required("total")?,
                capping_enabled: pool.optional("capping", false)?,
                groups,
                users,
            },
            workload: WorkloadSpec { users: workloads },
            scheduler,
            duration_ms: sim.required("duration_ms")?,
            warmup_ms: sim.optional("warmup_ms", 0)?,
            window_ms: sim.optional("window_ms", DEFAULT_WINDOW_MS)?,
            seed: sim.optional("seed", 0)?,
        })
    }
}

/// Parses scenario text without applying any override.
pub fn parse_scenario(text: &str, default_name: &str) -> Result<Scenario> {
    ScenarioDoc::parse(text)?.to_scenario(default_name)
}

/// Canonical text form; `parse_scenario(&emit_scenario(s), _) == s`.
pub fn emit_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let a = &s.allocation;
    let _ = writeln!(out, "[pool] total={} capping={}", a.pool_total, a.capping_enabled);
    for g in &a.groups {
        let _ = writeln!(out, "[group.{}] shares={}", g.id, g.shares);
    }
    for u in &a.users {
        let _ = write!(out, "[user.{}] group={} shares={}", u.id, u.group, u.shares);
        if let Some(cap) = u.cap {
            let _ = write!(out, " cap={cap}");
        }
        out.push('\n');
    }
    for w in &s.workload.users {
        let _ = writeln!(
            out,
            "[workload.{}] processes={} demand_ms={} think_ms={} demand_dist={} think_dist={} nice={}",
            w.user,
            w.processes,
            w.demand_ms,
            w.think_ms,
            w.demand_dist.as_str(),
            w.think_dist.as_str(),
            w.nice
        );
    }
    let sc = &s.scheduler;
    let _ = writeln!(
        out,
        "[scheduler] policy={} quantum_ms={} tick_ms={}",
        sc.policy, sc.quantum_ms, sc.tick_ms
    );
    let _ = writeln!(
        out,
        "[ts] levels={} cpu_weight={} decay_per_s={} nice_weight={} expiry_penalty={}",
        sc.ts.levels, sc.ts.cpu_weight, sc.ts.decay_per_s, sc.ts.nice_weight, sc.ts.expiry_penalty
    );
    let _ = writeln!(
        out,
        "[fs] usage_window_ms={} pri_window_ms={} decay_usage={} pri_a={} pri_b={}",
        sc.fs.usage_window_ms, sc.fs.pri_window_ms, sc.fs.decay_usage, sc.fs.pri_a, sc.fs.pri_b
    );
    let _ = writeln!(
        out,
        "[sim] label={} duration_ms={} warmup_ms={} window_ms={} seed={}",
        s.name, s.duration_ms, s.warmup_ms, s.window_ms, s.seed
    );
    out
}
