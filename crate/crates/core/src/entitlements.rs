//! Share-to-entitlement algebra.
//!
//! A user's static entitlement is its share count over the pool. The dynamic
//! entitlement renormalizes over the shares of *active* users only, so idle
//! shares are lent out. With capping enabled the effective entitlement is
//! clamped to the user's cap; the clamped-off surplus is not handed to anyone
//! else and shows up as idle capacity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{GroupId, ShareAllocation, UserId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEntitlement {
    pub user: UserId,
    pub group: GroupId,
    pub shares: u64,
    pub cap: Option<f64>,
    pub active: bool,
    pub static_e: f64,
    pub dynamic_e: f64,
    pub effective_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntitlement {
    pub group: GroupId,
    pub shares: u64,
    pub active: bool,
    pub static_e: f64,
    pub dynamic_e: f64,
    pub effective_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitlementTable {
    pub capping_enabled: bool,
    pub users: Vec<UserEntitlement>,
    pub groups: Vec<GroupEntitlement>,
}

impl EntitlementTable {
    pub fn user(&self, id: &UserId) -> Option<&UserEntitlement> {
        self.users.iter().find(|u| &u.user == id)
    }

    pub fn group(&self, id: &GroupId) -> Option<&GroupEntitlement> {
        self.groups.iter().find(|g| &g.group == id)
    }

    pub fn active_users(&self) -> BTreeSet<UserId> {
        self.users
            .iter()
            .filter(|u| u.active)
            .map(|u| u.user.clone())
            .collect()
    }

    /// Fraction of the CPU no active user may claim because of caps.
    pub fn capped_idle(&self) -> f64 {
        let claimed: f64 = self.users.iter().map(|u| u.effective_e).sum();
        (1.0 - claimed).max(0.0)
    }
}

fn check(alloc: &ShareAllocation) -> Result<()> {
    let violations = alloc.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(violations))
    }
}

/// Entitlements when every user is active: `user_shares / pool_total`.
pub fn static_entitlements(alloc: &ShareAllocation) -> Result<EntitlementTable> {
    let all: BTreeSet<UserId> = alloc.users.iter().map(|u| u.id.clone()).collect();
    effective_entitlements(alloc, &all)
}

/// Entitlements renormalized over the shares of `active` users.
///
/// The returned table also carries the cap-clamped effective column, which
/// equals the dynamic one unless capping is enabled.
pub fn dynamic_entitlements(
    alloc: &ShareAllocation,
    active: &BTreeSet<UserId>,
) -> Result<EntitlementTable> {
    check(alloc)?;
    for id in active {
        if alloc.user(id).is_none() {
            return Err(Error::UnknownEntity(id.to_string()));
        }
    }
    let active_shares: u64 = alloc
        .users
        .iter()
        .filter(|u| active.contains(&u.id))
        .map(|u| u.shares)
        .sum();
    if active_shares == 0 {
        return Err(Error::NoActiveShares);
    }

    let pool = alloc.pool_total as f64;
    let denom = active_shares as f64;
    let users: Vec<UserEntitlement> = alloc
        .users
        .iter()
        .map(|u| {
            let is_active = active.contains(&u.id);
            let dynamic_e = if is_active { u.shares as f64 / denom } else { 0.0 };
            let effective_e = match (alloc.capping_enabled, u.cap) {
                (true, Some(cap)) => dynamic_e.min(cap),
                _ => dynamic_e,
            };
            UserEntitlement {
                user: u.id.clone(),
                group: u.group.clone(),
                shares: u.shares,
                cap: u.cap,
                active: is_active,
                static_e: u.shares as f64 / pool,
                dynamic_e,
                effective_e,
            }
        })
        .collect();

    let groups = alloc
        .groups
        .iter()
        .map(|g| {
            let members = users.iter().filter(|u| u.group == g.id);
            let (mut dynamic_e, mut effective_e, mut any) = (0.0, 0.0, false);
            for m in members {
                dynamic_e += m.dynamic_e;
                effective_e += m.effective_e;
                any |= m.active;
            }
            GroupEntitlement {
                group: g.id.clone(),
                shares: g.shares,
                active: any,
                static_e: g.shares as f64 / pool,
                dynamic_e,
                effective_e,
            }
        })
        .collect();

    Ok(EntitlementTable {
        capping_enabled: alloc.capping_enabled,
        users,
        groups,
    })
}

/// Dynamic entitlements with the per-user cap clamp applied when capping is
/// enabled. Surplus removed by a cap is left idle.
pub fn effective_entitlements(
    alloc: &ShareAllocation,
    active: &BTreeSet<UserId>,
) -> Result<EntitlementTable> {
    dynamic_entitlements(alloc, active)
}

/// Resolves user or group names to the set of users they denote.
pub fn resolve_users<'a>(
    alloc: &ShareAllocation,
    names: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeSet<UserId>> {
    let mut out = BTreeSet::new();
    for name in names {
        if let Some(u) = alloc.users.iter().find(|u| u.id.as_str() == name) {
            out.insert(u.id.clone());
        } else if alloc.groups.iter().any(|g| g.id.as_str() == name) {
            out.extend(
                alloc
                    .users
                    .iter()
                    .filter(|u| u.group.as_str() == name)
                    .map(|u| u.id.clone()),
            );
        } else {
            return Err(Error::UnknownEntity(name.to_owned()));
        }
    }
    Ok(out)
}

/// All users except those named (users or groups).
pub fn active_without<'a>(
    alloc: &ShareAllocation,
    inactive: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeSet<UserId>> {
    let gone = resolve_users(alloc, inactive)?;
    Ok(alloc
        .users
        .iter()
        .map(|u| u.id.clone())
        .filter(|u| !gone.contains(u))
        .collect())
}
