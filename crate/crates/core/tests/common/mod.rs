#![allow(dead_code)]

use sharesim::{parse_scenario, Scenario};

pub const SHIPPED: [&str; 4] = ["loophole", "fairshare9010", "consolidation", "capdemo"];

pub fn shipped(name: &str) -> Scenario {
    let path = format!("{}/../../scenario/{name}.scn", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_scenario(&text, name).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Scenario text with a single group per user and the given workload lines.
pub fn inline(users: &[(&str, u64, u32, &str)], policy: &str, duration_ms: u64, warmup_ms: u64) -> Scenario {
    let pool: u64 = users.iter().map(|u| u.1).sum();
    let mut text = format!("[pool] total={pool}\n");
    for (name, shares, procs, wl) in users {
        text.push_str(&format!(
            "[group.g{name}] shares={shares}\n[user.{name}] group=g{name} shares={shares}\n[workload.{name}] processes={procs} {wl}\n"
        ));
    }
    text.push_str(&format!(
        "[scheduler] policy={policy}\n[sim] duration_ms={duration_ms} warmup_ms={warmup_ms} seed=11\n"
    ));
    parse_scenario(&text, "inline").unwrap()
}

pub const CPU_BOUND: &str = "demand_ms=100 think_ms=0 demand_dist=fixed think_dist=fixed";
