//! Orthogonal resource planning for multi-user AFDM (AFDMA).
//!
//! Downlink: the base station puts `N_BS` pilots at `(L_max+1)b - 1`, surrounded by
//! guards of `L_max`, followed by the user data blocks `D_1, D_2, ...` separated by
//! guard blocks of `L_2, L_3, ...`. Uplink: the frame is cut into per-user blocks
//! `B_u`; each holds `[L_u guards][pilot][L_u guards][data]`.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{AfdmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downlink,
    Uplink,
}

/// One user: band size `L_u` and requested slots.
///
/// For the downlink `demand` is the data block size `|D_u|`; for the uplink it is
/// the whole resource block size `|B_u|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfdmaUser {
    pub band: usize,
    pub demand: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    Guard,
    Pilot { owner: usize },
    Data { user: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AfdmaPlan {
    pub direction: Direction,
    pub n: usize,
    pub users: Vec<AfdmaUser>,
    /// `L_max` of the plan (downlink); the largest `L_u` for the uplink.
    pub band_max: usize,
    pub n_bs: usize,
    /// Pilot slots: one per BS antenna (downlink) or one per user (uplink).
    pub pilots: Vec<usize>,
    /// Data blocks `D_u`.
    pub data_blocks: Vec<Range<usize>>,
    /// Resource blocks `B_u` (uplink only).
    pub resource_blocks: Vec<Range<usize>>,
    /// Pilot and guard overhead: the downlink formula, or `sum_u 2 L_u` for the uplink.
    pub overhead: usize,
    /// Unused trailing slots turned into guards when demands under-fill the frame.
    pub padding: usize,
}

/// Downlink overhead `(N_BS+1) L_max + N_BS + sum_{u>=2} L_u`.
pub fn downlink_overhead(users: &[AfdmaUser], band_max: usize, n_bs: usize) -> usize {
    (n_bs + 1) * band_max + n_bs + users.iter().skip(1).map(|u| u.band).sum::<usize>()
}

pub fn plan_afdma_downlink(n: usize, users: &[AfdmaUser], band_max: usize, n_bs: usize) -> Result<AfdmaPlan> {
    if users.is_empty() || n_bs == 0 {
        return Err(AfdmError::Plan("need at least one user and one BS antenna".into()));
    }
    if users.windows(2).any(|w| w[0].band > w[1].band) {
        return Err(AfdmError::Plan("users must be sorted by band size".into()));
    }
    if users.last().map_or(0, |u| u.band) > band_max {
        return Err(AfdmError::Plan(format!("largest user band exceeds L_max = {band_max}")));
    }
    let overhead = downlink_overhead(users, band_max, n_bs);
    let demand: usize = users.iter().map(|u| u.demand).sum();
    if overhead + demand > n {
        return Err(AfdmError::Plan(format!("demands {demand} exceed capacity {}", n.saturating_sub(overhead))));
    }
    let pilots = (1..=n_bs).map(|b| (band_max + 1) * b - 1).collect();
    let mut cursor = (band_max + 1) * n_bs + band_max;
    let mut data_blocks = Vec::with_capacity(users.len());
    for (u, user) in users.iter().enumerate() {
        if u > 0 {
            cursor += user.band;
        }
        data_blocks.push(cursor..cursor + user.demand);
        cursor += user.demand;
    }
    Ok(AfdmaPlan {
        direction: Direction::Downlink,
        n,
        users: users.to_vec(),
        band_max,
        n_bs,
        pilots,
        data_blocks,
        resource_blocks: Vec::new(),
        overhead,
        padding: n - overhead - demand,
    })
}

pub fn plan_afdma_uplink(n: usize, users: &[AfdmaUser]) -> Result<AfdmaPlan> {
    if users.is_empty() {
        return Err(AfdmError::Plan("need at least one user".into()));
    }
    let total: usize = users.iter().map(|u| u.demand).sum();
    if total != n {
        return Err(AfdmError::Plan(format!("resource blocks cover {total} slots, frame has {n}")));
    }
    let mut start = 0;
    let (mut pilots, mut data_blocks, mut resource_blocks) = (vec![], vec![], vec![]);
    for (u, user) in users.iter().enumerate() {
        if user.demand < 2 * user.band + 1 {
            return Err(AfdmError::Plan(format!(
                "block of user {u} has {} slots, needs at least {}",
                user.demand,
                2 * user.band + 1
            )));
        }
        let pilot = start + user.band;
        pilots.push(pilot);
        data_blocks.push(pilot + user.band + 1..start + user.demand);
        resource_blocks.push(start..start + user.demand);
        start += user.demand;
    }
    Ok(AfdmaPlan {
        direction: Direction::Uplink,
        n,
        users: users.to_vec(),
        band_max: users.iter().map(|u| u.band).max().unwrap_or(0),
        n_bs: 1,
        pilots,
        data_blocks,
        resource_blocks,
        overhead: users.iter().map(|u| 2 * u.band).sum(),
        padding: 0,
    })
}

impl AfdmaPlan {
    /// Slot roles implied by the plan; slots not claimed by a pilot or data block are guards.
    pub fn slot_roles(&self) -> Vec<SlotRole> {
        let mut roles = vec![SlotRole::Guard; self.n];
        for (owner, &p) in self.pilots.iter().enumerate() {
            roles[p % self.n] = SlotRole::Pilot { owner };
        }
        for (user, block) in self.data_blocks.iter().enumerate() {
            for m in block.clone() {
                roles[m % self.n] = SlotRole::Data { user };
            }
        }
        roles
    }

    /// Plain-text table, one `slot<TAB>role<TAB>owner` line per slot.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# direction={:?} n={} overhead={} padding={}\n# slot\trole\towner\n",
            self.direction, self.n, self.overhead, self.padding
        );
        for (m, role) in self.slot_roles().iter().enumerate() {
            let _ = match role {
                SlotRole::Guard => writeln!(out, "{m}\tguard\t-"),
                SlotRole::Pilot { owner } => writeln!(out, "{m}\tpilot\t{owner}"),
                SlotRole::Data { user } => writeln!(out, "{m}\tdata\t{user}"),
            };
        }
        out
    }
}

/// Re-derives slot occupancy from the declared ranges and checks the guard rules.
///
/// Returns every violation found; an empty list means the plan is valid.
pub fn validate_plan(plan: &AfdmaPlan) -> Vec<String> {
    let n = plan.n;
    let mut errors = Vec::new();
    let mut claims = vec![0usize; n];
    let mut claimed = |m: usize, what: &str, errors: &mut Vec<String>| {
        if m >= n {
            errors.push(format!("{what} slot {m} outside frame"));
            return;
        }
        claims[m] += 1;
        if claims[m] > 1 {
            errors.push(format!("collision at slot {m} ({what})"));
        }
    };
    for &p in &plan.pilots {
        claimed(p, "pilot", &mut errors);
    }
    for block in &plan.data_blocks {
        for m in block.clone() {
            claimed(m, "data", &mut errors);
        }
    }
    let free = |m: usize| claims[m % n] == 0;
    let cyc = |m: usize, delta: isize| ((m as isize + delta).rem_euclid(n as isize)) as usize;
    let data_total: usize = plan.data_blocks.iter().map(|b| b.len()).sum();

    match plan.direction {
        Direction::Downlink => {
            let guard = plan.users.iter().map(|u| u.band).max().unwrap_or(0);
            for (b, &p) in plan.pilots.iter().enumerate() {
                if p != (plan.band_max + 1) * (b + 1) - 1 {
                    errors.push(format!("pilot {b} at {p}, expected {}", (plan.band_max + 1) * (b + 1) - 1));
                }
                for d in 1..=guard as isize {
                    if !free(cyc(p, d)) || !free(cyc(p, -d)) {
                        errors.push(format!("pilot {b} lacks {guard} guards on both sides"));
                        break;
                    }
                }
            }
            for (u, block) in plan.data_blocks.iter().enumerate() {
                if block.is_empty() {
                    continue;
                }
                let g = plan.users[u].band as isize;
                let (first, last) = (block.start, block.end - 1);
                if (1..=g).any(|d| !free(cyc(first, -d)) || !free(cyc(last, d))) {
                    errors.push(format!("data block of user {u} lacks {g} guards on both sides"));
                }
            }
            let expected = downlink_overhead(&plan.users, plan.band_max, plan.n_bs);
            if plan.overhead != expected {
                errors.push(format!("overhead {} differs from formula {expected}", plan.overhead));
            }
            if data_total + plan.overhead + plan.padding != n {
                errors.push(format!("data {data_total} + overhead {} + padding {} != N", plan.overhead, plan.padding));
            }
        }
        Direction::Uplink => {
            let mut cover = vec![0usize; n];
            for b in &plan.resource_blocks {
                for m in b.clone().filter(|&m| m < n) {
                    cover[m] += 1;
                }
            }
            if cover.iter().any(|&c| c != 1) {
                errors.push("resource blocks do not partition the frame".into());
            }
            let mut guards_total = 0;
            for (u, block) in plan.resource_blocks.iter().enumerate() {
                let g = plan.users[u].band;
                let p = plan.pilots[u];
                let d = &plan.data_blocks[u];
                if !block.contains(&p) || (d.start < block.start || d.end > block.end) {
                    errors.push(format!("user {u} pilot or data outside its resource block"));
                    continue;
                }
                if p < block.start + g || p + g >= block.end {
                    errors.push(format!("pilot of user {u} lacks {g} in-block guards"));
                }
                for d in 1..=g {
                    if !free(p + d) || p < d || !free(p - d) {
                        errors.push(format!("pilot of user {u} has a non-guard neighbour"));
                        break;
                    }
                }
                let guards = block.clone().filter(|&m| free(m)).count();
                if guards != 2 * g {
                    errors.push(format!("user {u} uses {guards} guards, expected {}", 2 * g));
                }
                guards_total += guards;
            }
            if plan.overhead != guards_total {
                errors.push(format!("overhead {} differs from guard count {guards_total}", plan.overhead));
            }
        }
    }
    errors
}
