mod render;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sharesim::entitlements::{active_without, dynamic_entitlements, resolve_users};
use sharesim::sim::{self, csv_header, csv_rows, GroupMetrics, RunOptions, SystemMetrics, UserMetrics};
use sharesim::{planner, Scenario, ScenarioDoc, UserId};

use render::{fixed, opt_csv, opt_ms, pct, Format, Table};

const EXIT_USAGE: u8 = 2;
const EXIT_SCENARIO: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "sharesim", version, about = "Time-share vs fair-share CPU scheduling simulator and planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static, dynamic and effective entitlements for an active set.
    Entitle {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        active: ActiveArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run one simulation.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Give every user this many processes.
        #[arg(long)]
        processes: Option<u32>,
        /// Write the fair-share accounting trace as CSV to this file.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run one simulation per per-user process count.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Inclusive range such as `1..50`, or a single count.
        #[arg(long, default_value = "1..50", value_parser = parse_range)]
        processes: (u32, u32),
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run the workload under both schedulers and report response degradation.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        processes: Option<u32>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Predict utilisation and response times analytically.
    Plan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        active: ActiveArgs,
        #[arg(long)]
        processes: Option<u32>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Compare predictions across active sets; the first is the baseline.
    WhatIf {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `all`, `except:NAME,...` or `NAME,...` (users or groups). Repeatable.
        #[arg(long = "hypothesis", value_name = "SET", required = true)]
        hypotheses: Vec<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Derive a share allocation from measured time-share utilisations.
    Suggest {
        /// Comma-separated `USER=FRACTION` pairs.
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_pair)]
        measured: Vec<(String, f64)>,
        #[arg(long, default_value_t = 100)]
        pool: u64,
        /// Comma-separated `USER=MS` worst response times seen under time-share.
        #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
        resp_max: Vec<(String, f64)>,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, short = 's', value_name = "PATH")]
    scenario: PathBuf,
    /// Override a scenario key, e.g. `--set scheduler.policy=fs`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
}

#[derive(Args)]
struct ActiveArgs {
    /// Users or groups with no runnable work.
    #[arg(long, value_delimiter = ',', conflicts_with = "active")]
    inactive: Vec<String>,
    /// Users or groups with runnable work; everyone else is idle.
    #[arg(long, value_delimiter = ',')]
    active: Vec<String>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, env = "SHARESIM_FORMAT", default_value = "table")]
    format: Format,
    /// Write to a file instead of standard output.
    #[arg(long, short = 'o', value_name = "PATH")]
    output: Option<PathBuf>,
    /// Omit the leading `#` comment lines.
    #[arg(long)]
    no_header: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Ts,
    Fs,
}

/// A problem with how the tool was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A scenario that could not be read, parsed or validated.
#[derive(Debug)]
struct ScenarioError(String);

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ScenarioError {}

fn parse_range(s: &str) -> std::result::Result<(u32, u32), String> {
    let bad = || format!("expected N or A..B, got {s:?}");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(format!("empty range {s:?}"));
    }
    Ok((a, b))
}

fn parse_pair(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    let v: f64 = v.parse().map_err(|_| format!("not a number in {s:?}"))?;
    Ok((k.to_owned(), v))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use sharesim::Error as E;
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<ScenarioError>() {
            return EXIT_SCENARIO;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Parse { .. } | E::Invalid(_) => EXIT_SCENARIO,
                E::UnknownEntity(_)
                | E::InvalidArgument(_)
                | E::EmptyRange
                | E::NoHypotheses
                | E::NoActiveShares
                | E::ZeroMeasurements => EXIT_USAGE,
                E::NonConvergence { .. } => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| anyhow!(ScenarioError(format!("reading {}: {e}", args.scenario.display()))))?;
    let mut doc = ScenarioDoc::parse(&text).with_context(|| args.scenario.display().to_string())?;
    for o in &args.overrides {
        doc.apply_override(o)
            .map_err(|e| anyhow!(UsageError(format!("--set {o}: {e}"))))?;
    }
    if let Some(p) = args.policy {
        let v = match p {
            PolicyArg::Ts => "scheduler.policy=ts",
            PolicyArg::Fs => "scheduler.policy=fs",
        };
        doc.apply_override(v)?;
    }
    let stem = args.scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let scenario = doc.to_scenario(stem)?;
    let violations = sharesim::validate_scenario(&scenario);
    if !violations.is_empty() {
        return Err(sharesim::Error::Invalid(violations).into());
    }
    Ok(scenario)
}

fn with_processes(s: Scenario, n: Option<u32>) -> Scenario {
    match n {
        Some(n) => s.with_processes(n),
        None => s,
    }
}

fn active_set(s: &Scenario, a: &ActiveArgs, default: BTreeSet<UserId>) -> Result<BTreeSet<UserId>> {
    let alloc = &s.allocation;
    if !a.active.is_empty() {
        Ok(resolve_users(alloc, a.active.iter().map(String::as_str))?)
    } else if !a.inactive.is_empty() {
        Ok(active_without(alloc, a.inactive.iter().map(String::as_str))?)
    } else {
        Ok(default)
    }
}

fn all_users(s: &Scenario) -> BTreeSet<UserId> {
    s.allocation.users.iter().map(|u| u.id.clone()).collect()
}

fn parse_hypothesis(s: &Scenario, h: &str) -> Result<BTreeSet<UserId>> {
    let names = |list: &str| list.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_owned).collect::<Vec<_>>();
    let set = if h == "all" {
        all_users(s)
    } else if let Some(rest) = h.strip_prefix("except:") {
        active_without(&s.allocation, names(rest).iter().map(String::as_str))?
    } else {
        resolve_users(&s.allocation, names(h).iter().map(String::as_str))?
    };
    Ok(set)
}

fn header(verb: &str, s: Option<&Scenario>, extra: &[String]) -> String {
    let mut h = format!("# sharesim {verb}\n");
    if let Some(s) = s {
        h.push_str(&format!("# scenario {} policy {} seed {}\n", s.name, s.scheduler.policy, s.seed));
    }
    for e in extra {
        h.push_str(&format!("# {e}\n"));
    }
    h
}

fn emit(out: &OutputArgs, header: String, body: String) -> Result<()> {
    let mut text = String::new();
    if !out.no_header && out.format != Format::Structured {
        text.push_str(&header);
    }
    text.push_str(&body);
    match &out.output {
        Some(path) => write_file(path, &text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).context("writing standard output")?;
            stdout.flush().context("writing standard output")
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Entitle { scenario, active, out } => entitle(&scenario, &active, &out),
        Command::Simulate { scenario, processes, trace, out } => simulate(&scenario, processes, trace.as_deref(), &out),
        Command::Sweep { scenario, processes, out } => sweep(&scenario, processes, &out),
        Command::Compare { scenario, processes, out } => compare(&scenario, processes, &out),
        Command::Plan { scenario, active, processes, out } => plan(&scenario, &active, processes, &out),
        Command::WhatIf { scenario, hypotheses, out } => what_if(&scenario, &hypotheses, &out),
        Command::Suggest { measured, pool, resp_max, out } => suggest(&measured, pool, &resp_max, &out),
    }
}

fn entitle(args: &ScenarioArgs, a: &ActiveArgs, out: &OutputArgs) -> Result<()> {
    let s = load(args)?;
    let active = active_set(&s, a, all_users(&s))?;
    let table = dynamic_entitlements(&s.allocation, &active)?;
    let body = match out.format {
        Format::Structured => json(&table)?,
        f => {
            let mut t = Table::new(&["entity", "kind", "group", "shares", "cap", "active", "static", "dynamic", "effective"]);
            let show = |x: f64| if f == Format::Csv { fixed(x, 6) } else { pct(x) };
            for g in &table.groups {
                t.push(vec![
                    g.group.to_string(),
                    "group".into(),
                    g.group.to_string(),
                    g.shares.to_string(),
                    String::new(),
                    g.active.to_string(),
                    show(g.static_e),
                    show(g.dynamic_e),
                    show(g.effective_e),
                ]);
            }
            for u in &table.users {
                t.push(vec![
                    u.user.to_string(),
                    "user".into(),
                    u.group.to_string(),
                    u.shares.to_string(),
                    u.cap.map(|c| c.to_string()).unwrap_or_default(),
                    u.active.to_string(),
                    show(u.static_e),
                    show(u.dynamic_e),
                    show(u.effective_e),
                ]);
            }
            t.render(f)
        }
    };
    let mut extra = vec![format!("capping {}", table.capping_enabled)];
    if table.capped_idle() > 0.0 {
        extra.push(format!("idle by cap {}", pct(table.capped_idle())));
    }
    emit(out, header("entitle", Some(&s), &extra), body)
}

fn user_table(users: &[UserMetrics]) -> Table {
    let mut t = Table::new(&[
        "user", "group", "procs", "shares", "ent_static", "ent_dynamic", "util", "tps", "work_ms/s", "resp_mean_ms",
        "resp_p95_ms", "max_wait_ms",
    ]);
    for u in users {
        t.push(vec![
            u.user.to_string(),
            u.group.to_string(),
            u.processes.to_string(),
            u.shares.to_string(),
            pct(u.entitlement_static),
            pct(u.entitlement_dynamic),
            pct(u.utilization),
            fixed(u.tps, 3),
            fixed(u.work_tput_ms_per_s, 1),
            opt_ms(u.resp_mean_ms),
            opt_ms(u.resp_p95_ms),
            u.max_ready_wait_ms.to_string(),
        ]);
    }
    t
}

fn group_table(groups: &[GroupMetrics], system: &SystemMetrics) -> Table {
    let mut t = Table::new(&["group", "procs", "shares", "util", "tps", "work_ms/s", "resp_mean_ms", "resp_p95_ms"]);
    for g in groups {
        t.push(vec![
            g.group.to_string(),
            g.processes.to_string(),
            g.shares.to_string(),
            pct(g.utilization),
            fixed(g.tps, 3),
            fixed(g.work_tput_ms_per_s, 1),
            opt_ms(g.resp_mean_ms),
            opt_ms(g.resp_p95_ms),
        ]);
    }
    t.push(vec![
        "(system)".into(),
        String::new(),
        String::new(),
        pct(system.total_utilization),
        fixed(system.tps, 3),
        fixed(system.busy_ms as f64 * 1000.0 / system.measured_ms as f64, 1),
        String::new(),
        String::new(),
    ]);
    t
}

fn csv_with_header(rows: impl IntoIterator<Item = String>) -> String {
    let mut s = csv_header();
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn simulate(args: &ScenarioArgs, processes: Option<u32>, trace: Option<&Path>, out: &OutputArgs) -> Result<()> {
    let s = with_processes(load(args)?, processes);
    let report = sim::run_with(&s, &RunOptions { fs_trace: trace.is_some() })?;
    if let Some(path) = trace {
        let mut t = Table::new(&["window_end_ms", "user", "usage", "cost", "p_active"]);
        for r in &report.fs_trace {
            t.push(vec![
                r.window_end_ms.to_string(),
                r.user.to_string(),
                fixed(r.usage, 6),
                fixed(r.cost, 6),
                r.p_active.to_string(),
            ]);
        }
        write_file(path, &t.to_csv())?;
    }
    let body = match out.format {
        Format::Structured => json(&report)?,
        Format::Csv => csv_with_header(csv_rows(&report)),
        Format::Table => format!(
            "{}\n{}",
            user_table(&report.users).to_text(),
            group_table(&report.groups, &report.system).to_text()
        ),
    };
    let extra = [format!(
        "measured {} ms after {} ms warmup",
        report.system.measured_ms, s.warmup_ms
    )];
    emit(out, header("simulate", Some(&s), &extra), body)
}

/// One point of a sweep in structured output.
#[derive(Debug, Serialize, Deserialize)]
struct SweepPoint {
    processes: u32,
    users: Vec<UserMetrics>,
    groups: Vec<GroupMetrics>,
    system: SystemMetrics,
}

fn sweep(args: &ScenarioArgs, (lo, hi): (u32, u32), out: &OutputArgs) -> Result<()> {
    let s = load(args)?;
    let reports = sim::sweep(&s, lo..=hi)?;
    let body = match out.format {
        Format::Structured => {
            let points: Vec<SweepPoint> = (lo..=hi)
                .zip(reports)
                .map(|(n, r)| SweepPoint { processes: n, users: r.users, groups: r.groups, system: r.system })
                .collect();
            json(&points)?
        }
        Format::Csv => csv_with_header(reports.iter().flat_map(csv_rows)),
        Format::Table => {
            let mut t = Table::new(&["n", "user", "util", "tps", "work_ms/s", "resp_mean_ms", "resp_p95_ms"]);
            for (n, r) in (lo..=hi).zip(&reports) {
                for u in &r.users {
                    t.push(vec![
                        n.to_string(),
                        u.user.to_string(),
                        pct(u.utilization),
                        fixed(u.tps, 3),
                        fixed(u.work_tput_ms_per_s, 1),
                        opt_ms(u.resp_mean_ms),
                        opt_ms(u.resp_p95_ms),
                    ]);
                }
            }
            t.to_text()
        }
    };
    emit(out, header("sweep", Some(&s), &[format!("processes {lo}..{hi}")]), body)
}

fn compare(args: &ScenarioArgs, processes: Option<u32>, out: &OutputArgs) -> Result<()> {
    let s = with_processes(load(args)?, processes);
    let c = sim::compare_policies(&s)?;
    let body = match out.format {
        Format::Structured => json(&c)?,
        f => {
            let mut t = Table::new(&["user", "util_ts", "util_fs", "resp_ts_ms", "resp_fs_ms", "degradation"]);
            for (d, (a, b)) in c.degradation.iter().zip(c.ts.users.iter().zip(&c.fs.users)) {
                let row = if f == Format::Csv {
                    vec![
                        d.user.to_string(),
                        fixed(a.utilization, 6),
                        fixed(b.utilization, 6),
                        opt_csv(d.resp_ts_ms, 3),
                        opt_csv(d.resp_fs_ms, 3),
                        opt_csv(d.ratio, 4),
                    ]
                } else {
                    vec![
                        d.user.to_string(),
                        pct(a.utilization),
                        pct(b.utilization),
                        opt_ms(d.resp_ts_ms),
                        opt_ms(d.resp_fs_ms),
                        d.ratio.map(|r| format!("{r:.2}x")).unwrap_or_else(|| "-".into()),
                    ]
                };
                t.push(row);
            }
            t.render(f)
        }
    };
    emit(out, header("compare", Some(&s), &["degradation = resp_fs / resp_ts".into()]), body)
}

fn plan_table(reports: &[&planner::PlanReport], f: Format) -> Table {
    let mut t = Table::new(&["user", "group", "active", "procs", "entitlement", "capacity", "util", "tps", "resp_mean_ms"]);
    for r in reports {
        for u in &r.users {
            let show = |x: f64| if f == Format::Csv { fixed(x, 6) } else { pct(x) };
            t.push(vec![
                u.user.to_string(),
                u.group.to_string(),
                u.active.to_string(),
                u.processes.to_string(),
                show(u.entitlement),
                show(u.capacity),
                show(u.utilization),
                fixed(u.tps, 3),
                if f == Format::Csv { opt_csv(u.resp_mean_ms, 3) } else { opt_ms(u.resp_mean_ms) },
            ]);
        }
    }
    t
}

fn plan(args: &ScenarioArgs, a: &ActiveArgs, processes: Option<u32>, out: &OutputArgs) -> Result<()> {
    let s = with_processes(load(args)?, processes);
    let active = active_set(&s, a, s.populated_users())?;
    let r = planner::predict(&s, &active)?;
    let body = match out.format {
        Format::Structured => json(&r)?,
        f => plan_table(&[&r], f).render(f),
    };
    let extra = [format!(
        "converged in {} iterations, residual {:.1e}, total utilization {}",
        r.iterations,
        r.residual,
        pct(r.total_utilization)
    )];
    emit(out, header("plan", Some(&s), &extra), body)
}

fn what_if(args: &ScenarioArgs, hypotheses: &[String], out: &OutputArgs) -> Result<()> {
    let s = load(args)?;
    let sets = hypotheses.iter().map(|h| parse_hypothesis(&s, h)).collect::<Result<Vec<_>>>()?;
    let w = planner::what_if(&s, &sets)?;
    let body = match out.format {
        Format::Structured => json(&w)?,
        f => {
            let mut t = Table::new(&[
                "hypothesis", "user", "entitlement", "util", "resp_mean_ms", "d_entitlement", "d_util", "resp_factor",
            ]);
            let csv = f == Format::Csv;
            for d in &w.deltas {
                let u = &w.reports[d.hypothesis].users.iter().find(|u| u.user == d.user).expect("same users");
                t.push(vec![
                    d.hypothesis.to_string(),
                    d.user.to_string(),
                    if csv { fixed(u.entitlement, 6) } else { pct(u.entitlement) },
                    if csv { fixed(u.utilization, 6) } else { pct(u.utilization) },
                    if csv { opt_csv(u.resp_mean_ms, 3) } else { opt_ms(u.resp_mean_ms) },
                    fixed(d.entitlement_delta, 6),
                    fixed(d.utilization_delta, 6),
                    if csv { opt_csv(d.resp_factor, 4) } else { d.resp_factor.map(|r| format!("{r:.2}x")).unwrap_or_else(|| "-".into()) },
                ]);
            }
            t.render(f)
        }
    };
    let extra: Vec<String> = hypotheses.iter().enumerate().map(|(i, h)| format!("hypothesis {i}: {h}")).collect();
    emit(out, header("what-if", Some(&s), &extra), body)
}

fn suggest(measured: &[(String, f64)], pool: u64, resp_max: &[(String, f64)], out: &OutputArgs) -> Result<()> {
    let m: Vec<(UserId, f64)> = measured.iter().map(|(u, v)| (UserId::new(u.as_str()), *v)).collect();
    let r: Vec<(UserId, f64)> = resp_max.iter().map(|(u, v)| (UserId::new(u.as_str()), *v)).collect();
    let sug = planner::suggest_shares(&m, pool, (!r.is_empty()).then_some(r.as_slice()))?;
    for w in &sug.warnings {
        eprintln!("warning: {w}");
    }
    let body = match out.format {
        Format::Structured => json(&sug)?,
        f => {
            let mut t = Table::new(&["user", "measured", "shares", "entitlement", "flagged"]);
            for ((u, v), a) in m.iter().zip(&sug.allocation.users) {
                let e = a.shares as f64 / pool as f64;
                t.push(vec![
                    u.to_string(),
                    if f == Format::Csv { fixed(*v, 6) } else { fixed(*v, 4) },
                    a.shares.to_string(),
                    if f == Format::Csv { fixed(e, 6) } else { pct(e) },
                    sug.flagged.contains(u).to_string(),
                ]);
            }
            t.render(f)
        }
    };
    emit(out, header("suggest", None, &[format!("pool {pool}")]), body)
}
