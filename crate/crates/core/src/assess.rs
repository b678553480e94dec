//! Per-group visibility counts from an ID buffer.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::render::IdBuffer;
use crate::voldata::InstanceTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub group: usize,
    pub total: usize,
    pub hidden: usize,
    pub visible_on_screen: usize,
    pub occluded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupVisibilityReport {
    pub epoch: u64,
    pub camera_hash: u64,
    /// Groups `1..=N` in order.
    pub groups: Vec<GroupCounts>,
}

/// Counts the distinct instances per group in `ids`. Members neither hidden
/// nor on screen are occluded. Fails when the buffer was rendered for a
/// different epoch than `epoch`.
pub fn assess_visibility(
    ids: &IdBuffer,
    table: &InstanceTable,
    assignment: &GroupAssignment,
    epoch: u64,
) -> Result<GroupVisibilityReport> {
    if ids.epoch != epoch {
        return Err(Error::StaleEpoch {
            got: ids.epoch,
            expected: epoch,
        });
    }
    let n = assignment.group_count();
    let mut groups: Vec<GroupCounts> = (1..=n)
        .map(|group| GroupCounts {
            group,
            total: 0,
            hidden: 0,
            visible_on_screen: 0,
            occluded: 0,
        })
        .collect();
    for (slot, &g) in assignment.groups().iter().enumerate() {
        if g == 0 {
            continue;
        }
        let c = &mut groups[g as usize - 1];
        c.total += 1;
        if !table.visible()[slot] {
            c.hidden += 1;
        }
    }
    let seen: HashSet<u32> = ids.ids.iter().copied().filter(|&i| i != 0).collect();
    for id in seen {
        let Some(slot) = table.slot(id) else {
            continue;
        };
        let g = assignment.group_of_slot(slot);
        if g > 0 && table.visible()[slot] {
            groups[g as usize - 1].visible_on_screen += 1;
        }
    }
    for c in &mut groups {
        c.occluded = c.total.saturating_sub(c.visible_on_screen + c.hidden);
    }
    Ok(GroupVisibilityReport {
        epoch,
        camera_hash: ids.camera_hash,
        groups,
    })
}
