//! Virtual memory nodes: boot layouts, node generation, the pfn→node table
//! and CPU mask bookkeeping.

mod cpu;
mod layout;

pub use cpu::{CpuMask, CpuState};
pub use layout::{
    format_size, parse_boot_layout, parse_size, MemoryLayout, NodeSpec, ThresholdSpec, TrustClass,
    DEFAULT_CPU_COUNT,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::mem::{BuddyFreeLists, Pfn, MAX_BLOCK_FRAMES, PAGE_SIZE};
use crate::{NodeId, Pid, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VnodeError {
    #[error("layout parse error: {0}")]
    Parse(String),
    #[error("node sizes sum to {nodes} bytes but total is {total}")]
    Overcommit { nodes: u64, total: u64 },
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("trust class {0} is not routed to any node")]
    UnroutableTrustClass(TrustClass),
    #[error("trust class {0} is routed to more than one node")]
    AmbiguousTrustClass(TrustClass),
    #[error("node `{name}` has {frames} frames, not a positive multiple of {MAX_BLOCK_FRAMES}")]
    Alignment { name: String, frames: u64 },
    #[error("pfn {0} is outside physical memory")]
    OutOfRange(Pfn),
    #[error("unknown cpu {0}")]
    UnknownCpu(usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Recency list of resident page-cache frames; the coldest frame comes first.
#[derive(Debug, Clone, Default)]
pub struct PageLru {
    by_seq: BTreeMap<u64, Pfn>,
    seq_of: HashMap<Pfn, u64>,
    next_seq: u64,
}

impl PageLru {
    /// Moves `pfn` to the hot end, inserting it if absent.
    pub fn touch(&mut self, pfn: Pfn) {
        if let Some(old) = self.seq_of.insert(pfn, self.next_seq) {
            self.by_seq.remove(&old);
        }
        self.by_seq.insert(self.next_seq, pfn);
        self.next_seq += 1;
    }

    pub fn remove(&mut self, pfn: Pfn) -> bool {
        match self.seq_of.remove(&pfn) {
            Some(seq) => {
                self.by_seq.remove(&seq);
                true
            }
            None => false,
        }
    }

    pub fn pop_coldest(&mut self) -> Option<Pfn> {
        let (_, pfn) = self.by_seq.pop_first()?;
        self.seq_of.remove(&pfn);
        Some(pfn)
    }

    pub fn contains(&self, pfn: Pfn) -> bool {
        self.seq_of.contains_key(&pfn)
    }

    pub fn len(&self) -> usize {
        self.by_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_seq.is_empty()
    }

    /// Coldest to hottest.
    pub fn iter(&self) -> impl Iterator<Item = Pfn> + '_ {
        self.by_seq.values().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppLruEntry {
    pub pid: Pid,
    pub last_foreground_tick: Tick,
}

#[derive(Debug, Clone)]
pub struct VNode {
    pub id: NodeId,
    pub base_pfn: Pfn,
    pub frame_count: u64,
    pub spec: NodeSpec,
    pub lmk_threshold: u64,
    pub buddy: BuddyFreeLists,
    pub page_lru: PageLru,
    pub anon_registry: BTreeSet<Pfn>,
    /// Background processes, oldest first.
    pub app_lru: Vec<AppLruEntry>,
    pub online_cpus: CpuMask,
    pub reserved_frames: u64,
    pub lmk_episodes: u64,
    pub oomk_events: u64,
}

impl VNode {
    pub fn contains(&self, pfn: Pfn) -> bool {
        pfn >= self.base_pfn && pfn < self.base_pfn + self.frame_count
    }

    pub fn free_frames(&self) -> u64 {
        self.buddy.free_frames()
    }

    pub fn free_bytes(&self) -> u64 {
        self.buddy.free_frames() * PAGE_SIZE
    }

    pub fn allocated_frames(&self) -> u64 {
        (self.anon_registry.len() + self.page_lru.len()) as u64
    }

    /// Bound to no online CPU although a mask was requested.
    pub fn unserviced(&self) -> bool {
        self.online_cpus.is_empty()
    }

    pub fn remove_from_app_lru(&mut self, pid: Pid) -> bool {
        let before = self.app_lru.len();
        self.app_lru.retain(|e| e.pid != pid);
        self.app_lru.len() != before
    }
}

/// Sorted pfn range table, one entry per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTable {
    ranges: Vec<(Pfn, Pfn)>,
}

impl NodeTable {
    pub fn lookup(&self, pfn: Pfn) -> Result<NodeId, VnodeError> {
        let idx = self.ranges.partition_point(|&(_, end)| end <= pfn);
        match self.ranges.get(idx) {
            Some(&(start, end)) if pfn >= start && pfn < end => Ok(idx),
            _ => Err(VnodeError::OutOfRange(pfn)),
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn range(&self, node: NodeId) -> (Pfn, Pfn) {
        self.ranges[node]
    }

    pub fn total_frames(&self) -> u64 {
        self.ranges.last().map_or(0, |&(_, end)| end)
    }
}

/// All nodes of a booted layout plus CPU state.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub layout: MemoryLayout,
    nodes: Vec<VNode>,
    table: NodeTable,
    cpus: CpuState,
}

impl NodeSet {
    /// Carves the frame space into nodes in declaration order from pfn 0.
    pub fn generate(layout: &MemoryLayout) -> Result<NodeSet, VnodeError> {
        let cpus = CpuState::new(layout.cpu_count);
        let mut nodes = Vec::with_capacity(layout.nodes.len());
        let mut ranges = Vec::with_capacity(layout.nodes.len());
        let mut base = 0;
        for (id, spec) in layout.nodes.iter().enumerate() {
            let frames = spec.size / PAGE_SIZE;
            if frames == 0 || !frames.is_multiple_of(MAX_BLOCK_FRAMES) {
                return Err(VnodeError::Alignment {
                    name: spec.name.clone(),
                    frames,
                });
            }
            cpus.validate(spec.cpu_mask)?;
            let reserved = spec.reserved / PAGE_SIZE;
            nodes.push(VNode {
                id,
                base_pfn: base,
                frame_count: frames,
                spec: spec.clone(),
                lmk_threshold: layout.node_threshold(id),
                buddy: BuddyFreeLists::with_reserved(base, frames, reserved),
                page_lru: PageLru::default(),
                anon_registry: BTreeSet::new(),
                app_lru: Vec::new(),
                online_cpus: cpus.effective(spec.cpu_mask),
                reserved_frames: reserved,
                lmk_episodes: 0,
                oomk_events: 0,
            });
            ranges.push((base, base + frames));
            base += frames;
        }
        debug_assert_eq!(base, layout.total_frames());
        Ok(NodeSet {
            layout: layout.clone(),
            nodes,
            table: NodeTable { ranges },
            cpus,
        })
    }

    /// Node owning `pfn`.
    pub fn setup_memblock(&self, pfn: Pfn) -> Result<NodeId, VnodeError> {
        self.table.lookup(pfn)
    }

    pub fn set_cpumask(&mut self, node: NodeId, mask: CpuMask) -> Result<(), VnodeError> {
        self.cpus.validate(mask)?;
        let effective = self.cpus.effective(mask);
        let vnode = self
            .nodes
            .get_mut(node)
            .ok_or(VnodeError::UnknownNode(node))?;
        vnode.spec.cpu_mask = mask;
        vnode.online_cpus = effective;
        Ok(())
    }

    pub fn cpu_hotplug(&mut self, cpu: usize, online: bool) -> Result<(), VnodeError> {
        self.cpus.set_online(cpu, online)?;
        for node in &mut self.nodes {
            node.online_cpus = self.cpus.effective(node.spec.cpu_mask);
        }
        Ok(())
    }

    pub fn cpus(&self) -> &CpuState {
        &self.cpus
    }

    pub fn table(&self) -> &NodeTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &VNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut VNode {
        &mut self.nodes[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &VNode> {
        self.nodes.iter()
    }

    pub fn total_frames(&self) -> u64 {
        self.table.total_frames()
    }
}
