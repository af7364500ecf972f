//! Deterministic simulator of a mobile device's physical memory split into
//! virtual memory nodes.
//!
//! Each node owns a contiguous frame range with its own buddy allocator,
//! page-cache LRU, background-app LRU and kill policies. Memory pressure in
//! one node is resolved inside that node only: direct reclaim of clean page
//! cache, then the low memory killer, then the OOM killer, then panic.
//! A single node spanning all frames models the conventional flat system.

pub mod cli;
pub mod mem;
pub mod metrics;
pub mod process;
pub mod reclaim;
pub mod vnode;
pub mod workload;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a virtual memory node within a layout.
pub type NodeId = usize;

/// Virtual time in microseconds.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(pub u32);

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
