//! Simulated applications: trust routing, foreground/background life cycle,
//! resident page accounting and the two victim scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mem::{FileId, PageKey, Pfn};
use crate::reclaim::MemorySystem;
use crate::vnode::{AppLruEntry, TrustClass, VnodeError};
use crate::{NodeId, Pid, Tick};

/// Lowest scheduling priority value; lower values are more important.
pub const MAX_PRIO: i32 = 139;
pub const DEFAULT_PRIO: i32 = 120;
const THREAD_CAP: u32 = 32;

/// Anonymous keys at and above this offset belong to heap regions.
pub const HEAP_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProcError {
    #[error(transparent)]
    Layout(#[from] VnodeError),
    #[error("process {0} is dead")]
    DeadProcess(Pid),
    #[error("no process with pid {0}")]
    UnknownPid(Pid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcState {
    Foreground,
    Background,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KillReason {
    Lmk,
    Oomk,
    UserExit,
}

/// Why a page stopped being resident, remembered until it is touched again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossCause {
    Reclaim,
    Lmk,
    Oomk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TouchOrder {
    Sequential,
    UniformRandom(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub name: String,
    pub trust_class: TrustClass,
    pub working_set_frames: u64,
    pub anon_fraction: f64,
    pub touch_order: TouchOrder,
    pub hw_access: bool,
    pub root_privileged: bool,
    pub thread_count: u32,
    pub sched_priority: i32,
    /// Launch work done with the whole working set resident.
    pub warm_launch_us: u64,
    /// Fixed launch overhead outside the memory system (for example a database read).
    pub external_launch_us: u64,
}

impl AppProfile {
    pub fn new(name: &str, trust_class: TrustClass, working_set_frames: u64) -> Self {
        AppProfile {
            name: name.to_string(),
            trust_class,
            working_set_frames,
            anon_fraction: 0.5,
            touch_order: TouchOrder::Sequential,
            hw_access: false,
            root_privileged: false,
            thread_count: 8,
            sched_priority: DEFAULT_PRIO,
            warm_launch_us: 0,
            external_launch_us: 0,
        }
    }

    pub fn anon_frames(&self) -> u64 {
        (self.working_set_frames as f64 * self.anon_fraction).round() as u64
    }
}

/// Reload latency charged to each loss cause, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationTally {
    pub lmk_us: u64,
    pub oomk_us: u64,
    pub fragmentation_us: u64,
}

impl DegradationTally {
    pub fn charge(&mut self, cause: LossCause, us: u64) {
        match cause {
            LossCause::Lmk => self.lmk_us += us,
            LossCause::Oomk => self.oomk_us += us,
            LossCause::Reclaim => self.fragmentation_us += us,
        }
    }

    pub fn total(&self) -> u64 {
        self.lmk_us + self.oomk_us + self.fragmentation_us
    }
}

#[derive(Debug, Clone)]
pub struct Process {
    pub pid: Pid,
    pub name: String,
    pub profile: AppProfile,
    pub trust_class: TrustClass,
    pub node_id: NodeId,
    pub state: ProcState,
    pub thread_count: u32,
    /// Virtual microseconds spent servicing this process's page touches.
    pub cpu_time: u64,
    pub sched_priority: i32,
    pub hw_access: bool,
    pub root_privileged: bool,
    pub launch_count: u32,
    pub last_foreground_tick: Tick,
    pub declared_working_set: u64,
    /// Extra frames declared by heap fills and file reads.
    pub declared_extra: u64,
    pub resident: BTreeMap<PageKey, Pfn>,
    pub anon_count: u64,
    pub file_count: u64,
    pub lost: BTreeMap<PageKey, LossCause>,
    pub heap_cursor: u64,
    /// Largest data file this incarnation has read, in frames.
    pub data_file_frames: u64,
    pub degradation: DegradationTally,
    pub frames_touched: u64,
    pub faults: u64,
    pub latency_us: u64,
    pub exit_reason: Option<KillReason>,
    pub incarnation: u32,
}

impl Process {
    pub fn is_alive(&self) -> bool {
        self.state != ProcState::Dead
    }

    pub fn resident_frames(&self) -> u64 {
        self.anon_count + self.file_count
    }

    pub fn anon_pages(&self) -> impl Iterator<Item = Pfn> + '_ {
        self.resident
            .iter()
            .filter(|(k, _)| k.is_anon())
            .map(|(_, &p)| p)
    }

    pub fn file_pages(&self) -> impl Iterator<Item = Pfn> + '_ {
        self.resident
            .iter()
            .filter(|(k, _)| !k.is_anon())
            .map(|(_, &p)| p)
    }

    pub fn resident_bound(&self) -> u64 {
        self.declared_working_set + self.declared_extra
    }

    /// File holding the app's code and resources.
    pub fn launch_file(&self) -> FileId {
        (self.pid.0 as u64) << 8
    }

    /// File read by sequential-read workloads.
    pub fn data_file(&self) -> FileId {
        ((self.pid.0 as u64) << 8) | 1
    }

    /// Launch working set keys in profile order.
    pub fn working_set_keys(&self, seed: u64) -> Vec<PageKey> {
        let anon = self.profile.anon_frames();
        let file = self.launch_file();
        let mut keys: Vec<PageKey> = (0..self.profile.working_set_frames)
            .map(|i| {
                if i < anon {
                    PageKey::Anon(i)
                } else {
                    PageKey::File(file, i - anon)
                }
            })
            .collect();
        if let TouchOrder::UniformRandom(profile_seed) = self.profile.touch_order {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mix = seed ^ profile_seed.rotate_left(17) ^ ((self.pid.0 as u64) << 32);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix);
            keys.shuffle(&mut rng);
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmkWeights {
    pub threads: f64,
    pub cpu: f64,
    pub priority: f64,
    pub hw: f64,
    pub recency: f64,
}

impl Default for LmkWeights {
    fn default() -> Self {
        LmkWeights {
            threads: 1.0,
            cpu: 1.0,
            priority: 2.0,
            hw: 4.0,
            recency: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OomParams {
    /// Launch count from which an app counts as frequently used.
    pub frequent_threshold: u32,
    /// Priorities at or below this value are protected.
    pub high_prio_cutoff: i32,
}

impl Default for OomParams {
    fn default() -> Self {
        OomParams {
            frequent_threshold: 5,
            high_prio_cutoff: 100,
        }
    }
}

/// Importance consulted by the low memory killer; lower is killed first.
pub fn lmk_importance(p: &Process, now: Tick, w: &LmkWeights) -> f64 {
    let threads = p.thread_count.min(THREAD_CAP) as f64 / THREAD_CAP as f64;
    let (cpu, recency) = if now == 0 {
        (0.0, 0.0)
    } else {
        (
            (p.cpu_time as f64 / now as f64).min(1.0),
            (p.last_foreground_tick as f64 / now as f64).min(1.0),
        )
    };
    let prio = (MAX_PRIO - p.sched_priority.clamp(0, MAX_PRIO)) as f64 / MAX_PRIO as f64;
    let hw = if p.hw_access { 1.0 } else { 0.0 };
    w.threads * threads + w.cpu * cpu + w.priority * prio + w.hw * hw + w.recency * recency
}

/// OOM badness; higher is killed first.
pub fn oom_badness(p: &Process, params: &OomParams) -> f64 {
    let protection = u32::from(p.root_privileged)
        + u32::from(p.hw_access)
        + u32::from(p.launch_count >= params.frequent_threshold)
        + u32::from(p.sched_priority <= params.high_prio_cutoff)
        + u32::from(p.state == ProcState::Foreground);
    p.resident_frames() as f64 / f64::from(1u32 << protection)
}

impl MemorySystem {
    /// Creates a foreground process bound for life to the node serving `trust`.
    pub fn spawn(
        &mut self,
        profile: &AppProfile,
        trust: TrustClass,
        tick: Tick,
    ) -> Result<Pid, ProcError> {
        let node_id = self.nodes.layout.route(trust)?;
        let pid = Pid(self.next_pid);
        self.next_pid += 1;
        let process = Process {
            pid,
            name: profile.name.clone(),
            profile: profile.clone(),
            trust_class: trust,
            node_id,
            state: ProcState::Foreground,
            thread_count: profile.thread_count,
            cpu_time: 0,
            sched_priority: profile.sched_priority,
            hw_access: profile.hw_access,
            root_privileged: profile.root_privileged,
            launch_count: 0,
            last_foreground_tick: tick,
            declared_working_set: profile.working_set_frames,
            declared_extra: 0,
            resident: BTreeMap::new(),
            anon_count: 0,
            file_count: 0,
            lost: BTreeMap::new(),
            heap_cursor: 0,
            data_file_frames: 0,
            degradation: DegradationTally::default(),
            frames_touched: 0,
            faults: 0,
            latency_us: 0,
            exit_reason: None,
            incarnation: 0,
        };
        self.procs.insert(pid, process);
        Ok(pid)
    }

    /// Brings a dead process back as a fresh foreground instance with nothing resident.
    pub fn respawn(&mut self, pid: Pid, tick: Tick) -> Result<(), ProcError> {
        let p = self.procs.get_mut(&pid).ok_or(ProcError::UnknownPid(pid))?;
        if p.is_alive() {
            return Ok(());
        }
        p.state = ProcState::Foreground;
        p.last_foreground_tick = tick;
        p.heap_cursor = 0;
        p.data_file_frames = 0;
        p.declared_extra = 0;
        p.exit_reason = None;
        p.incarnation += 1;
        Ok(())
    }

    pub fn set_background(&mut self, pid: Pid, tick: Tick) -> Result<(), ProcError> {
        let p = self.live_process_mut(pid)?;
        let node = p.node_id;
        if p.state == ProcState::Background {
            return Ok(());
        }
        p.state = ProcState::Background;
        p.last_foreground_tick = tick;
        self.nodes.node_mut(node).app_lru.push(AppLruEntry {
            pid,
            last_foreground_tick: tick,
        });
        Ok(())
    }

    pub fn set_foreground(&mut self, pid: Pid, tick: Tick) -> Result<(), ProcError> {
        let p = self.live_process_mut(pid)?;
        let node = p.node_id;
        p.state = ProcState::Foreground;
        p.last_foreground_tick = tick;
        self.nodes.node_mut(node).remove_from_app_lru(pid);
        Ok(())
    }

    /// Unloads every resident page of `pid` and marks it dead. Returns frames freed.
    pub fn kill(&mut self, pid: Pid, reason: KillReason) -> Result<u64, ProcError> {
        let p = self.live_process_mut(pid)?;
        let node = p.node_id;
        let cause = match reason {
            KillReason::Lmk => Some(LossCause::Lmk),
            KillReason::Oomk => Some(LossCause::Oomk),
            KillReason::UserExit => None,
        };
        let pages = std::mem::take(&mut p.resident);
        if let Some(cause) = cause {
            p.lost.extend(pages.keys().map(|&k| (k, cause)));
        }
        p.anon_count = 0;
        p.file_count = 0;
        p.state = ProcState::Dead;
        p.exit_reason = Some(reason);
        let freed = pages.len() as u64;
        for &pfn in pages.values() {
            self.release_frame(pfn);
        }
        self.nodes.node_mut(node).remove_from_app_lru(pid);
        self.log_kill(pid, node, reason, freed);
        Ok(freed)
    }

    pub fn process(&self, pid: Pid) -> Option<&Process> {
        self.procs.get(&pid)
    }

    pub fn processes(&self) -> impl Iterator<Item = &Process> {
        self.procs.values()
    }

    pub(crate) fn live_process_mut(&mut self, pid: Pid) -> Result<&mut Process, ProcError> {
        match self.procs.get_mut(&pid) {
            None => Err(ProcError::UnknownPid(pid)),
            Some(p) if !p.is_alive() => Err(ProcError::DeadProcess(pid)),
            Some(p) => Ok(p),
        }
    }
}
