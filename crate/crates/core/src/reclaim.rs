//! The memory system of one simulation instance: the page allocation
//! pipeline and the per-node pressure chain.
//!
//! A request is resolved to its process's node, placed inside that node and
//! served from the node's buddy allocator. When the node cannot serve it
//! while staying at or above its LMK threshold, the slow path runs direct
//! reclaim, then the low memory killer, then the OOM killer, and finally
//! panics. Every stage is confined to the requesting node.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mem::{FileId, FrameState, PageFrame, PageKey, Pfn, PAGE_SIZE};
use crate::process::{
    lmk_importance, oom_badness, KillReason, LmkWeights, LossCause, OomParams, ProcError,
    ProcState, Process,
};
use crate::vnode::{CpuMask, MemoryLayout, NodeSet, VnodeError};
use crate::{NodeId, Pid, Tick};

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Cost of bringing one absent frame in, in microseconds.
    pub page_load_cost_us: u64,
    /// Cost charged per buddy split or merge in the degradation breakdown.
    pub block_op_cost_us: u64,
    pub lmk: LmkWeights,
    pub oom: OomParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            page_load_cost_us: 250,
            block_op_cost_us: 1,
            lmk: LmkWeights::default(),
            oom: OomParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("allocation requests need at least one frame")]
    EmptyRequest,
    #[error(transparent)]
    Process(#[from] ProcError),
    #[error("process {0} was killed while its allocation was pending")]
    RequesterKilled(Pid),
    #[error("page {1:?} of process {0} is already resident")]
    AlreadyResident(Pid, PageKey),
    #[error("out of memory in node {node}: system panic")]
    OutOfMemoryPanic { node: NodeId },
    #[error("the system has already panicked")]
    Panicked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    DirectReclaim,
    Lmk,
    Oomk,
    Panic,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DirectReclaim => "DirectReclaim",
            Stage::Lmk => "Lmk",
            Stage::Oomk => "Oomk",
            Stage::Panic => "Panic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PressureEvent {
    pub tick: Tick,
    pub node: NodeId,
    pub stage: Stage,
    pub freed: u64,
    pub victims: Vec<Pid>,
    /// Slow-path episode this stage belongs to.
    pub episode: u64,
}

impl PressureEvent {
    /// `tick=<t> node=<id> stage=<s> freed=<n> victims=[pids]`
    pub fn log_line(&self) -> String {
        let victims: Vec<String> = self.victims.iter().map(Pid::to_string).collect();
        format!(
            "tick={} node={} stage={} freed={} victims=[{}]",
            self.tick,
            self.node,
            self.stage.as_str(),
            self.freed,
            victims.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillRecord {
    pub tick: Tick,
    pub pid: Pid,
    pub name: String,
    pub node: NodeId,
    pub reason: KillReason,
    pub freed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeSample {
    pub tick: Tick,
    pub free_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub free_bytes: u64,
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub label: String,
    pub tick: Tick,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanicRecord {
    pub tick: Tick,
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageKind {
    Anonymous,
    PageCache(FileId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationRequest {
    pub pid: Pid,
    pub kind: PageKind,
    /// Page offset of the first frame; frames cover `offset..offset + frame_count`.
    pub offset: u64,
    pub frame_count: u64,
}

impl AllocationRequest {
    pub fn new(
        pid: Pid,
        kind: PageKind,
        offset: u64,
        frame_count: u64,
    ) -> Result<Self, AllocError> {
        if frame_count == 0 {
            return Err(AllocError::EmptyRequest);
        }
        Ok(AllocationRequest {
            pid,
            kind,
            offset,
            frame_count,
        })
    }

    fn key(&self, i: u64) -> PageKey {
        match self.kind {
            PageKind::Anonymous => PageKey::Anon(self.offset + i),
            PageKind::PageCache(file) => PageKey::File(file, self.offset + i),
        }
    }

    fn from_key(pid: Pid, key: PageKey) -> Self {
        match key {
            PageKey::Anon(offset) => AllocationRequest {
                pid,
                kind: PageKind::Anonymous,
                offset,
                frame_count: 1,
            },
            PageKey::File(file, offset) => AllocationRequest {
                pid,
                kind: PageKind::PageCache(file),
                offset,
                frame_count: 1,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no killable process in node {0}")]
pub struct NoCandidate(pub NodeId);

#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub(crate) config: SimConfig,
    pub(crate) nodes: NodeSet,
    frames: Vec<PageFrame>,
    pub(crate) procs: BTreeMap<Pid, Process>,
    pub(crate) next_pid: u32,
    clock: Tick,
    episode: u64,
    pressure_log: Vec<PressureEvent>,
    kill_log: Vec<KillRecord>,
    free_series: Vec<Vec<FreeSample>>,
    snapshots: Vec<Snapshot>,
    panic: Option<PanicRecord>,
    conservation_violations: u64,
}

impl MemorySystem {
    pub fn new(layout: &MemoryLayout, config: SimConfig) -> Result<Self, VnodeError> {
        let nodes = NodeSet::generate(layout)?;
        let mut frames = Vec::with_capacity(nodes.total_frames() as usize);
        for node in nodes.iter() {
            for pfn in node.base_pfn..node.base_pfn + node.frame_count {
                let mut frame = PageFrame::new(pfn, node.id);
                if !node.buddy.is_free(pfn) {
                    frame.state = FrameState::Reserved;
                }
                frames.push(frame);
            }
        }
        let node_count = nodes.len();
        Ok(MemorySystem {
            config,
            nodes,
            frames,
            procs: BTreeMap::new(),
            next_pid: 1,
            clock: 0,
            episode: 0,
            pressure_log: Vec::new(),
            kill_log: Vec::new(),
            free_series: vec![Vec::new(); node_count],
            snapshots: Vec::new(),
            panic: None,
            conservation_violations: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn frames(&self) -> &[PageFrame] {
        &self.frames
    }

    pub fn clock(&self) -> Tick {
        self.clock
    }

    pub fn advance_clock(&mut self, to: Tick) {
        self.clock = self.clock.max(to);
    }

    pub fn pressure_log(&self) -> &[PressureEvent] {
        &self.pressure_log
    }

    pub fn kill_log(&self) -> &[KillRecord] {
        &self.kill_log
    }

    pub fn free_series(&self, node: NodeId) -> &[FreeSample] {
        &self.free_series[node]
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn panic(&self) -> Option<PanicRecord> {
        self.panic
    }

    pub fn conservation_violations(&self) -> u64 {
        self.conservation_violations
    }

    /// Frames a node must hold free to sit at or above its threshold.
    pub fn threshold_frames(&self, node: NodeId) -> u64 {
        self.nodes.node(node).lmk_threshold.div_ceil(PAGE_SIZE)
    }

    pub fn vnode_set_cpumask(&mut self, node: NodeId, mask: CpuMask) -> Result<(), VnodeError> {
        self.nodes.set_cpumask(node, mask)
    }

    pub fn cpu_hotplug_event(&mut self, cpu: usize, online: bool) -> Result<(), VnodeError> {
        self.nodes.cpu_hotplug(cpu, online)
    }

    /// Records per-node free bytes and buddy histograms under `label`.
    pub fn snapshot(&mut self, label: &str) -> &Snapshot {
        let tick = self.clock;
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for node in self.nodes.iter() {
            nodes.push(NodeSnapshot {
                node: node.id,
                free_bytes: node.free_bytes(),
                histogram: node.buddy.histogram().to_vec(),
            });
            self.free_series[node.id].push(FreeSample {
                tick,
                free_bytes: node.free_bytes(),
            });
        }
        self.snapshots.push(Snapshot {
            label: label.to_string(),
            tick,
            nodes,
        });
        self.snapshots.last().expect("just pushed")
    }

    /// Allocates order-0 frames for `req` inside the requester's node.
    pub fn allocate_page_vma(&mut self, req: &AllocationRequest) -> Result<Vec<Pfn>, AllocError> {
        if self.panic.is_some() {
            return Err(AllocError::Panicked);
        }
        let process = self.live_process_mut(req.pid)?;
        if let Some(key) = (0..req.frame_count)
            .map(|i| req.key(i))
            .find(|k| process.resident.contains_key(k))
        {
            return Err(AllocError::AlreadyResident(req.pid, key));
        }
        let node = self.allocate_page_current(req.pid);
        self.allocate_page_interleave(node, req)
    }

    /// The node a process allocates from is fixed by its trust routing.
    fn allocate_page_current(&self, pid: Pid) -> NodeId {
        self.procs[&pid].node_id
    }

    /// Each process is bound to one node, so placement never spreads across nodes.
    fn allocate_page_interleave(
        &mut self,
        node: NodeId,
        req: &AllocationRequest,
    ) -> Result<Vec<Pfn>, AllocError> {
        if !self.satisfied(node, req.frame_count) {
            self.slow_path(node, req.frame_count)?;
        }
        if !self.procs[&req.pid].is_alive() {
            return Err(AllocError::RequesterKilled(req.pid));
        }
        (0..req.frame_count)
            .map(|i| {
                // The slow path left at least `frame_count` free frames.
                let pfn = self
                    .nodes
                    .node_mut(node)
                    .buddy
                    .alloc_block(0)
                    .expect("free frames available");
                self.tag_frame(pfn, req.pid, req.key(i));
                Ok(pfn)
            })
            .collect()
    }

    fn satisfied(&self, node: NodeId, needed: u64) -> bool {
        let vnode = self.nodes.node(node);
        vnode.free_frames() >= needed
            && vnode.free_bytes() - needed * PAGE_SIZE >= vnode.lmk_threshold
    }

    /// Runs the pressure chain for `node` until `needed` frames fit above the threshold.
    pub fn slow_path(&mut self, node: NodeId, needed: u64) -> Result<u64, AllocError> {
        self.episode += 1;
        let free = self.nodes.node(node).free_frames();
        let target = (needed + self.threshold_frames(node))
            .saturating_sub(free)
            .max(1);
        let mut recovered = self.direct_reclaim(node, target);
        self.log_event(node, Stage::DirectReclaim, recovered, Vec::new());
        if self.satisfied(node, needed) {
            return Ok(recovered);
        }

        let before = self.nodes.node(node).free_frames();
        self.lmk_until(node, needed);
        recovered += self.nodes.node(node).free_frames() - before;
        if self.satisfied(node, needed) {
            return Ok(recovered);
        }

        loop {
            let before = self.nodes.node(node).free_frames();
            match self.oom_killer(node) {
                Ok(_) => {
                    recovered += self.nodes.node(node).free_frames() - before;
                    if self.satisfied(node, needed) {
                        return Ok(recovered);
                    }
                }
                Err(NoCandidate(_)) => {
                    self.log_event(node, Stage::Panic, 0, Vec::new());
                    self.panic = Some(PanicRecord {
                        tick: self.clock,
                        node,
                    });
                    return Err(AllocError::OutOfMemoryPanic { node });
                }
            }
        }
    }

    /// Drops up to `target` of the node's coldest page-cache frames. Anonymous
    /// frames are never reclaimed.
    pub fn direct_reclaim(&mut self, node: NodeId, target: u64) -> u64 {
        let mut freed = 0;
        while freed < target {
            let Some(pfn) = self.nodes.node_mut(node).page_lru.pop_coldest() else {
                break;
            };
            let frame = &self.frames[pfn as usize];
            let (owner, key) = (
                frame.owner_pid.expect("cached frame has an owner"),
                frame.key.expect("cached frame has a key"),
            );
            let p = self.procs.get_mut(&owner).expect("owner exists");
            p.resident.remove(&key);
            p.file_count -= 1;
            p.lost.insert(key, LossCause::Reclaim);
            self.release_frame(pfn);
            freed += 1;
        }
        freed
    }

    /// Kills background processes of `node` in app-LRU order until it is back
    /// at its threshold. Returns the victims.
    pub fn low_memory_killer(&mut self, node: NodeId) -> Vec<Pid> {
        self.episode += 1;
        self.lmk_until(node, 0)
    }

    fn lmk_until(&mut self, node: NodeId, needed: u64) -> Vec<Pid> {
        if self.satisfied(node, needed) {
            return Vec::new();
        }
        let mut order: Vec<(Tick, f64, Pid)> = self
            .nodes
            .node(node)
            .app_lru
            .iter()
            .map(|e| {
                (
                    e.last_foreground_tick,
                    lmk_importance(&self.procs[&e.pid], self.clock, &self.config.lmk),
                    e.pid,
                )
            })
            .collect();
        order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut victims = Vec::new();
        let mut freed = 0;
        for (_, _, pid) in order {
            if self.satisfied(node, needed) {
                break;
            }
            freed += self
                .kill(pid, KillReason::Lmk)
                .expect("app LRU holds live processes");
            victims.push(pid);
        }
        if !victims.is_empty() {
            self.nodes.node_mut(node).lmk_episodes += 1;
            self.log_event(node, Stage::Lmk, freed, victims.clone());
        }
        victims
    }

    /// Kills the live process of `node` with the highest badness. Foreground
    /// processes are considered only when no background process is alive.
    pub fn oom_killer(&mut self, node: NodeId) -> Result<Pid, NoCandidate> {
        let alive = || {
            self.procs
                .values()
                .filter(|p| p.node_id == node && p.is_alive())
        };
        let any_background = alive().any(|p| p.state == ProcState::Background);
        let victim = alive()
            .filter(|p| !any_background || p.state == ProcState::Background)
            .max_by(|a, b| {
                oom_badness(a, &self.config.oom)
                    .total_cmp(&oom_badness(b, &self.config.oom))
                    .then(a.resident_frames().cmp(&b.resident_frames()))
                    .then(b.pid.cmp(&a.pid))
            })
            .map(|p| p.pid)
            .ok_or(NoCandidate(node))?;
        let freed = self
            .kill(victim, KillReason::Oomk)
            .expect("victim is alive");
        self.nodes.node_mut(node).oomk_events += 1;
        self.log_event(node, Stage::Oomk, freed, vec![victim]);
        Ok(victim)
    }

    /// Touches one page of `pid`. Resident pages cost nothing and are
    /// refreshed in the LRU; absent pages are allocated and charged the page
    /// load cost.
    pub fn touch_page(&mut self, pid: Pid, key: PageKey) -> Result<u64, AllocError> {
        if self.panic.is_some() {
            return Err(AllocError::Panicked);
        }
        let clock = self.clock;
        let process = self.live_process_mut(pid)?;
        if let Some(&pfn) = process.resident.get(&key) {
            process.frames_touched += 1;
            let node = process.node_id;
            let frame = &mut self.frames[pfn as usize];
            frame.last_access_tick = clock;
            if frame.state == FrameState::PageCache {
                self.nodes.node_mut(node).page_lru.touch(pfn);
            }
            return Ok(0);
        }

        let node = process.node_id;
        let buddy = &self.nodes.node(node).buddy;
        let ops_before = buddy.splits() + buddy.merges();
        self.allocate_page_vma(&AllocationRequest::from_key(pid, key))?;
        let buddy = &self.nodes.node(node).buddy;
        let block_ops = buddy.splits() + buddy.merges() - ops_before;

        let cost = self.config.page_load_cost_us;
        let op_cost = self.config.block_op_cost_us;
        let process = self.procs.get_mut(&pid).expect("requester survived");
        match process.lost.remove(&key) {
            Some(LossCause::Reclaim) => process
                .degradation
                .charge(LossCause::Reclaim, cost + block_ops * op_cost),
            Some(cause) => process.degradation.charge(cause, cost),
            None => {}
        }
        process.frames_touched += 1;
        process.faults += 1;
        process.latency_us += cost;
        process.cpu_time += cost;
        self.clock += cost;
        Ok(cost)
    }

    fn tag_frame(&mut self, pfn: Pfn, pid: Pid, key: PageKey) {
        let frame = &mut self.frames[pfn as usize];
        let node = frame.node_id;
        frame.owner_pid = Some(pid);
        frame.key = Some(key);
        frame.last_access_tick = self.clock;
        let process = self.procs.get_mut(&pid).expect("requester exists");
        process.resident.insert(key, pfn);
        let vnode = self.nodes.node_mut(node);
        if key.is_anon() {
            frame.state = FrameState::Anonymous;
            process.anon_count += 1;
            vnode.anon_registry.insert(pfn);
        } else {
            frame.state = FrameState::PageCache;
            process.file_count += 1;
            vnode.page_lru.touch(pfn);
        }
    }

    /// Returns a resident frame to its node's buddy allocator. The owner's
    /// page map is the caller's responsibility.
    pub(crate) fn release_frame(&mut self, pfn: Pfn) {
        let frame = &mut self.frames[pfn as usize];
        let vnode = self.nodes.node_mut(frame.node_id);
        match frame.state {
            FrameState::Anonymous => {
                vnode.anon_registry.remove(&pfn);
            }
            FrameState::PageCache => {
                vnode.page_lru.remove(pfn);
            }
            FrameState::Free | FrameState::Reserved => panic!("releasing non-resident frame {pfn}"),
        }
        vnode
            .buddy
            .free_block(pfn, 0)
            .expect("resident frame is allocated");
        frame.release();
    }

    fn log_event(&mut self, node: NodeId, stage: Stage, freed: u64, victims: Vec<Pid>) {
        let vnode = self.nodes.node(node);
        if vnode.free_frames() + vnode.allocated_frames() + vnode.reserved_frames
            != vnode.frame_count
        {
            self.conservation_violations += 1;
        }
        self.free_series[node].push(FreeSample {
            tick: self.clock,
            free_bytes: vnode.free_bytes(),
        });
        self.pressure_log.push(PressureEvent {
            tick: self.clock,
            node,
            stage,
            freed,
            victims,
            episode: self.episode,
        });
    }

    pub(crate) fn log_kill(&mut self, pid: Pid, node: NodeId, reason: KillReason, freed: u64) {
        let name = self.procs[&pid].name.clone();
        self.kill_log.push(KillRecord {
            tick: self.clock,
            pid,
            name,
            node,
            reason,
            freed,
        });
    }

    /// Resident frames whose node differs from their owner's node.
    pub fn isolation_violations(&self) -> u64 {
        self.procs
            .values()
            .flat_map(|p| p.resident.values().map(move |&pfn| (p.node_id, pfn)))
            .filter(|&(node, pfn)| self.nodes.setup_memblock(pfn) != Ok(node))
            .count() as u64
    }

    /// Full cross-check of frames, registries, LRUs and processes.
    pub fn audit(&self) -> Result<(), String> {
        for node in self.nodes.iter() {
            node.buddy
                .check_invariants()
                .map_err(|e| format!("node {}: {e}", node.id))?;
            if node.free_frames() + node.allocated_frames() + node.reserved_frames
                != node.frame_count
            {
                return Err(format!("node {} violates conservation", node.id));
            }
            if let Some(pfn) = node
                .page_lru
                .iter()
                .chain(node.anon_registry.iter().copied())
                .find(|&p| !node.contains(p))
            {
                return Err(format!("node {} tracks foreign pfn {pfn}", node.id));
            }
            let mut background: Vec<Pid> = self
                .procs
                .values()
                .filter(|p| p.node_id == node.id && p.state == ProcState::Background)
                .map(|p| p.pid)
                .collect();
            let mut lru: Vec<Pid> = node.app_lru.iter().map(|e| e.pid).collect();
            if !node
                .app_lru
                .windows(2)
                .all(|w| w[0].last_foreground_tick <= w[1].last_foreground_tick)
            {
                return Err(format!("node {} app LRU out of order", node.id));
            }
            background.sort();
            lru.sort();
            if background != lru {
                return Err(format!(
                    "node {} app LRU {lru:?} != background set {background:?}",
                    node.id
                ));
            }
        }
        for frame in &self.frames {
            let owned = frame.owner_pid.is_some();
            let resident = matches!(frame.state, FrameState::Anonymous | FrameState::PageCache);
            if owned != resident {
                return Err(format!("frame {} owner/state mismatch", frame.pfn));
            }
            if (frame.state == FrameState::Free)
                != self.nodes.node(frame.node_id).buddy.is_free(frame.pfn)
            {
                return Err(format!(
                    "frame {} free state disagrees with buddy",
                    frame.pfn
                ));
            }
            if let (Some(pid), Some(key)) = (frame.owner_pid, frame.key) {
                if self.procs.get(&pid).and_then(|p| p.resident.get(&key)) != Some(&frame.pfn) {
                    return Err(format!("frame {} not in owner {pid}'s page map", frame.pfn));
                }
            }
        }
        for p in self.procs.values() {
            if !p.is_alive() && !p.resident.is_empty() {
                return Err(format!("dead process {} still holds pages", p.pid));
            }
            let anon = p.resident.keys().filter(|k| k.is_anon()).count() as u64;
            if anon != p.anon_count || p.resident.len() as u64 != p.resident_frames() {
                return Err(format!("process {} page counts drifted", p.pid));
            }
            if p.resident_frames() > p.resident_bound() {
                return Err(format!("process {} exceeds its declared footprint", p.pid));
            }
            for &pfn in p.resident.values() {
                let frame = &self.frames[pfn as usize];
                if frame.owner_pid != Some(p.pid) || self.nodes.setup_memblock(pfn) != Ok(p.node_id)
                {
                    return Err(format!("process {} holds foreign frame {pfn}", p.pid));
                }
            }
        }
        Ok(())
    }
}

/// Stage order of one slow-path episode is DirectReclaim → Lmk → Oomk → Panic.
pub fn escalation_violations(log: &[PressureEvent]) -> u64 {
    let mut violations = 0;
    for pair in log.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.episode == b.episode && (a.node != b.node || b.stage.cmp(&a.stage) == Ordering::Less) {
            violations += 1;
        }
        if a.episode == b.episode && a.stage == b.stage && a.stage != Stage::Oomk {
            violations += 1;
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{AppProfile, HEAP_BASE};
    use crate::vnode::{parse_boot_layout, TrustClass};

    fn system(layout: &str) -> MemorySystem {
        MemorySystem::new(&parse_boot_layout(layout).unwrap(), SimConfig::default()).unwrap()
    }

    fn spawn(sys: &mut MemorySystem, name: &str, trust: TrustClass, ws: u64) -> Pid {
        sys.spawn(&AppProfile::new(name, trust, ws), trust, sys.clock())
            .unwrap()
    }

    fn fill_anon(sys: &mut MemorySystem, pid: Pid, frames: u64) {
        let req = AllocationRequest::new(pid, PageKind::Anonymous, HEAP_BASE, frames).unwrap();
        sys.allocate_page_vma(&req).unwrap();
    }

    fn touch_anon(sys: &mut MemorySystem, pid: Pid, frames: u64) -> Result<(), AllocError> {
        for i in 0..frames {
            sys.touch_page(pid, PageKey::Anon(HEAP_BASE + i))?;
        }
        Ok(())
    }

    fn fill_cache(sys: &mut MemorySystem, pid: Pid, frames: u64) {
        let file = sys.process(pid).unwrap().data_file();
        for i in 0..frames {
            sys.touch_page(pid, PageKey::File(file, i)).unwrap();
        }
    }

    const PAPER: &str =
        "total=2G threshold=72M vnode=trusted:512M:Trusted,untrusted:1536M:Untrusted";

    #[test]
    fn allocation_stays_in_the_routed_node() {
        let mut sys = system(PAPER);
        let phone = spawn(&mut sys, "phone", TrustClass::Trusted, 16);
        let req = AllocationRequest::new(phone, PageKind::Anonymous, 0, 10).unwrap();
        let pfns = sys.allocate_page_vma(&req).unwrap();
        assert_eq!(pfns.len(), 10);
        assert!(pfns.iter().all(|&p| p < 131072));

        let game = spawn(&mut sys, "game", TrustClass::Untrusted, 16);
        let req = AllocationRequest::new(game, PageKind::PageCache(9), 0, 10).unwrap();
        assert!(sys
            .allocate_page_vma(&req)
            .unwrap()
            .iter()
            .all(|&p| p >= 131072));
        assert_eq!(
            AllocationRequest::new(game, PageKind::Anonymous, 0, 0),
            Err(AllocError::EmptyRequest)
        );
        assert_eq!(
            sys.allocate_page_vma(&req),
            Err(AllocError::AlreadyResident(game, PageKey::File(9, 0)))
        );
        sys.audit().unwrap();
    }

    // 8 MB node: 2048 frames, threshold 1 MB = 256 frames.
    const SMALL: &str = "total=8M threshold=1M vnode=all:8M:Trusted+Untrusted";

    #[test]
    fn direct_reclaim_only_drops_cache_in_lru_order() {
        let mut sys = system(SMALL);
        let pid = spawn(&mut sys, "app", TrustClass::Untrusted, 0);
        sys.process(pid).unwrap();
        sys.procs.get_mut(&pid).unwrap().declared_extra = 100;
        fill_cache(&mut sys, pid, 50);
        fill_anon(&mut sys, pid, 50);
        let coldest: Vec<Pfn> = sys.nodes().node(0).page_lru.iter().take(10).collect();
        let mut probe = sys.clone();
        assert_eq!(probe.direct_reclaim(0, 10), 10);
        assert!(coldest
            .iter()
            .all(|&p| probe.frames()[p as usize].state == FrameState::Free));
        assert_eq!(sys.direct_reclaim(0, 60), 50);
        assert_eq!(sys.process(pid).unwrap().anon_count, 50);
        assert_eq!(sys.process(pid).unwrap().file_count, 0);
        sys.audit().unwrap();
    }

    #[test]
    fn reclaimed_page_costs_a_reload() {
        let mut sys = system(SMALL);
        let pid = spawn(&mut sys, "app", TrustClass::Untrusted, 0);
        sys.procs.get_mut(&pid).unwrap().declared_extra = 10;
        let key = PageKey::File(sys.process(pid).unwrap().data_file(), 0);
        assert_eq!(sys.touch_page(pid, key), Ok(250));
        assert_eq!(sys.touch_page(pid, key), Ok(0));
        assert_eq!(sys.direct_reclaim(0, 1), 1);
        assert_eq!(sys.touch_page(pid, key), Ok(250));
        let p = sys.process(pid).unwrap();
        assert_eq!(p.latency_us, 500);
        assert!(p.degradation.fragmentation_us >= 250);
        assert_eq!(p.degradation.lmk_us + p.degradation.oomk_us, 0);
    }

    #[test]
    fn hot_touch_moves_page_to_hot_end() {
        let mut sys = system(SMALL);
        let pid = spawn(&mut sys, "app", TrustClass::Untrusted, 0);
        sys.procs.get_mut(&pid).unwrap().declared_extra = 10;
        fill_cache(&mut sys, pid, 3);
        let file = sys.process(pid).unwrap().data_file();
        let first = sys.process(pid).unwrap().resident[&PageKey::File(file, 0)];
        sys.touch_page(pid, PageKey::File(file, 0)).unwrap();
        assert_eq!(sys.nodes().node(0).page_lru.iter().last(), Some(first));
    }

    #[test]
    fn cache_covers_deficit_without_kills() {
        let mut sys = system(SMALL);
        let reader = spawn(&mut sys, "reader", TrustClass::Untrusted, 0);
        sys.procs.get_mut(&reader).unwrap().declared_extra = 4096;
        fill_cache(&mut sys, reader, 3000);
        assert!(sys.kill_log().is_empty());
        assert!(sys
            .pressure_log()
            .iter()
            .all(|e| e.stage == Stage::DirectReclaim));
        assert!(!sys.pressure_log().is_empty());
        assert_eq!(sys.nodes().node(0).lmk_episodes, 0);
        sys.audit().unwrap();
    }

    #[test]
    fn background_hog_is_killed_by_lmk() {
        let mut sys = system(SMALL);
        let hog = spawn(&mut sys, "hog", TrustClass::Untrusted, 0);
        sys.procs.get_mut(&hog).unwrap().declared_extra = 2048;
        fill_anon(&mut sys, hog, 1700);
        sys.set_background(hog, 1).unwrap();
        let app = spawn(&mut sys, "app", TrustClass::Trusted, 0);
        sys.procs.get_mut(&app).unwrap().declared_extra = 2048;
        touch_anon(&mut sys, app, 200).unwrap();
        let lmk: Vec<&PressureEvent> = sys
            .pressure_log()
            .iter()
            .filter(|e| e.stage == Stage::Lmk)
            .collect();
        assert_eq!(lmk.len(), 1);
        assert_eq!(lmk[0].victims, vec![hog]);
        assert_eq!(sys.nodes().node(0).lmk_episodes, 1);
        assert_eq!(sys.nodes().node(0).oomk_events, 0);
        assert!(sys.nodes().node(0).free_bytes() >= sys.nodes().node(0).lmk_threshold);
        assert_eq!(escalation_violations(sys.pressure_log()), 0);
        sys.audit().unwrap();
    }

    #[test]
    fn oversized_foreground_demand_panics() {
        let mut sys = system(SMALL);
        let pid = spawn(&mut sys, "greedy", TrustClass::Untrusted, 0);
        sys.procs.get_mut(&pid).unwrap().declared_extra = 4096;
        let req = AllocationRequest::new(pid, PageKind::Anonymous, HEAP_BASE, 4096).unwrap();
        assert_eq!(
            sys.allocate_page_vma(&req),
            Err(AllocError::OutOfMemoryPanic { node: 0 })
        );
        let stages: Vec<Stage> = sys.pressure_log().iter().map(|e| e.stage).collect();
        assert_eq!(
            stages,
            vec![Stage::DirectReclaim, Stage::Oomk, Stage::Panic]
        );
        assert!(sys.panic().is_some());
        assert_eq!(
            sys.touch_page(pid, PageKey::Anon(0)),
            Err(AllocError::Panicked)
        );
        assert_eq!(escalation_violations(sys.pressure_log()), 0);
    }

    #[test]
    fn oom_prefers_non_root_at_equal_residents() {
        let mut sys = system(SMALL);
        let mut root_profile = AppProfile::new("root", TrustClass::Untrusted, 0);
        root_profile.root_privileged = true;
        let root = sys.spawn(&root_profile, TrustClass::Untrusted, 0).unwrap();
        let plain = spawn(&mut sys, "plain", TrustClass::Untrusted, 0);
        for pid in [root, plain] {
            sys.procs.get_mut(&pid).unwrap().declared_extra = 500;
            fill_anon(&mut sys, pid, 500);
        }
        assert_eq!(sys.oom_killer(0), Ok(plain));
        assert_eq!(sys.nodes().node(0).oomk_events, 1);
        assert_eq!(sys.oom_killer(0), Ok(root));
        assert_eq!(sys.oom_killer(0), Err(NoCandidate(0)));
    }

    #[test]
    fn lmk_is_noop_above_threshold() {
        let mut sys = system(SMALL);
        let pid = spawn(&mut sys, "idle", TrustClass::Untrusted, 0);
        sys.set_background(pid, 5).unwrap();
        assert!(sys.low_memory_killer(0).is_empty());
        assert!(sys.pressure_log().is_empty());
    }

    #[test]
    fn pressure_never_leaks_across_nodes() {
        let mut sys = system("total=16M threshold=1M vnode=t:8M:Trusted,u:8M:Untrusted");
        let phone = spawn(&mut sys, "phone", TrustClass::Trusted, 0);
        sys.procs.get_mut(&phone).unwrap().declared_extra = 100;
        fill_cache(&mut sys, phone, 100);
        sys.set_background(phone, 1).unwrap();
        let trusted_before = sys.nodes().node(0).buddy.histogram();

        let hog = spawn(&mut sys, "hog", TrustClass::Untrusted, 0);
        sys.procs.get_mut(&hog).unwrap().declared_extra = 4096;
        assert_eq!(
            touch_anon(&mut sys, hog, 2100),
            Err(AllocError::RequesterKilled(hog))
        );
        assert!(sys.pressure_log().iter().all(|e| e.node == 1));
        assert_eq!(sys.nodes().node(0).buddy.histogram(), trusted_before);
        assert_eq!(sys.process(phone).unwrap().file_count, 100);
        assert_eq!(sys.nodes().node(1).oomk_events, 1);
        sys.audit().unwrap();
    }

    #[test]
    fn log_line_format() {
        let event = PressureEvent {
            tick: 7,
            node: 1,
            stage: Stage::Lmk,
            freed: 12,
            victims: vec![Pid(3), Pid(4)],
            episode: 1,
        };
        assert_eq!(
            event.log_line(),
            "tick=7 node=1 stage=Lmk freed=12 victims=[3,4]"
        );
    }
}
