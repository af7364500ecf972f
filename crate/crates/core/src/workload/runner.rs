use serde::{Deserialize, Serialize};

use super::scenario::{Action, Scenario, ScenarioError};
use crate::mem::{bytes_to_frames, PageKey};
use crate::metrics::MetricsReport;
use crate::process::{KillReason, ProcError, HEAP_BASE};
use crate::reclaim::{AllocError, MemorySystem};
use crate::{NodeId, Pid, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchRecord {
    pub tick: Tick,
    pub pid: Pid,
    pub name: String,
    pub node: NodeId,
    /// Page-load time spent faulting the working set back in.
    pub load_us: u64,
    pub warm_us: u64,
    pub external_us: u64,
    pub reloaded_frames: u64,
    /// The process had died and was started again for this launch.
    pub cold: bool,
    /// The launching process was killed before its working set was resident.
    pub interrupted: bool,
}

impl LaunchRecord {
    /// Launch time as compared between runs: warm work plus reloads.
    pub fn launch_us(&self) -> u64 {
        self.warm_us + self.load_us
    }

    /// Launch time including the external constant.
    pub fn total_us(&self) -> u64 {
        self.launch_us() + self.external_us
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuEvent {
    pub tick: Tick,
    pub cpu: usize,
    pub online: bool,
    pub online_count: usize,
    pub unserviced: Vec<NodeId>,
}

/// Everything a replay leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub system: MemorySystem,
    pub launches: Vec<LaunchRecord>,
    pub cpu_events: Vec<CpuEvent>,
    /// Events naming a dead process, plus events never reached after a panic.
    pub skipped_events: u64,
    /// Events cut short because their process was killed mid-way.
    pub interrupted_events: u64,
}

/// Replays `scenario` and summarizes it.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsReport, ScenarioError> {
    let outcome = simulate(scenario)?;
    Ok(MetricsReport::collect(scenario, &outcome))
}

/// Brings `pid` to the foreground and touches its launch working set.
pub fn builtin_launch_time(
    system: &mut MemorySystem,
    pid: Pid,
    seed: u64,
) -> Result<LaunchRecord, AllocError> {
    let tick = system.clock();
    system.set_foreground(pid, tick)?;
    let process = system.live_process_mut(pid)?;
    process.launch_count += 1;
    let keys = process.working_set_keys(seed);
    let mut record = LaunchRecord {
        tick,
        pid,
        name: process.name.clone(),
        node: process.node_id,
        load_us: 0,
        warm_us: process.profile.warm_launch_us,
        external_us: process.profile.external_launch_us,
        reloaded_frames: 0,
        cold: false,
        interrupted: false,
    };
    for key in keys {
        match system.touch_page(pid, key) {
            Ok(0) => {}
            Ok(cost) => {
                record.load_us += cost;
                record.reloaded_frames += 1;
            }
            Err(AllocError::RequesterKilled(_)) => {
                record.interrupted = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(record)
}

enum Step {
    Done,
    Skipped,
    Interrupted,
    Panicked,
}

/// Replays `scenario` on a fresh memory system.
pub fn simulate(scenario: &Scenario) -> Result<RunOutcome, ScenarioError> {
    let mut replay = Replay::new(scenario)?;
    while replay.step()? {}
    Ok(replay.finish())
}

/// Event-at-a-time replay of a scenario.
pub struct Replay<'a> {
    scenario: &'a Scenario,
    next: usize,
    outcome: RunOutcome,
}

impl<'a> Replay<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, ScenarioError> {
        let mut system = MemorySystem::new(&scenario.layout, scenario.config)?;
        system.snapshot("initial");
        let outcome = RunOutcome {
            system,
            launches: Vec::new(),
            cpu_events: Vec::new(),
            skipped_events: 0,
            interrupted_events: 0,
        };
        Ok(Replay {
            scenario,
            next: 0,
            outcome,
        })
    }

    pub fn system(&self) -> &MemorySystem {
        &self.outcome.system
    }

    /// Applies the next event. Returns false once the scenario is exhausted
    /// or the system has panicked.
    pub fn step(&mut self) -> Result<bool, ScenarioError> {
        let events = &self.scenario.events;
        let Some(event) = events.get(self.next) else {
            return Ok(false);
        };
        self.next += 1;
        let step = self.apply(&event.action, event.tick)?;
        let outcome = &mut self.outcome;
        match step {
            Step::Done => {}
            Step::Skipped => outcome.skipped_events += 1,
            Step::Interrupted => outcome.interrupted_events += 1,
            Step::Panicked => {
                outcome.skipped_events += (events.len() - self.next) as u64;
                self.next = events.len();
                return Ok(false);
            }
        }
        Ok(self.next < events.len())
    }

    /// Takes the closing snapshot.
    pub fn finish(mut self) -> RunOutcome {
        self.outcome.system.snapshot("final");
        self.outcome
    }

    fn apply(&mut self, action: &Action, tick: Tick) -> Result<Step, ScenarioError> {
        let scenario = self.scenario;
        let RunOutcome {
            system,
            launches,
            cpu_events,
            ..
        } = &mut self.outcome;
        system.advance_clock(tick);
        Ok(match action {
            Action::Spawn { profile, trust } => {
                let profile = &scenario.profiles[profile];
                let trust = trust.unwrap_or(profile.trust_class);
                let now = system.clock();
                system.spawn(profile, trust, now).map_err(layout_error)?;
                Step::Done
            }
            Action::Launch(pid) => {
                let was_dead = system.process(*pid).is_some_and(|p| !p.is_alive());
                if was_dead {
                    let now = system.clock();
                    system.respawn(*pid, now).map_err(layout_error)?;
                }
                match builtin_launch_time(system, *pid, scenario.seed) {
                    Ok(mut record) => {
                        record.cold = was_dead;
                        let step = if record.interrupted {
                            Step::Interrupted
                        } else {
                            Step::Done
                        };
                        launches.push(record);
                        step
                    }
                    Err(e) => alloc_step(e),
                }
            }
            Action::Background(pid) => {
                let now = system.clock();
                match system.set_background(*pid, now) {
                    Ok(()) => Step::Done,
                    Err(_) => Step::Skipped,
                }
            }
            Action::Exit(pid) => match system.kill(*pid, KillReason::UserExit) {
                Ok(_) => Step::Done,
                Err(_) => Step::Skipped,
            },
            Action::SeqFileRead { pid, bytes, repeat } => {
                let frames = bytes_to_frames(*bytes);
                match system.live_process_mut(*pid) {
                    Err(_) => Step::Skipped,
                    Ok(p) => {
                        p.data_file_frames = p.data_file_frames.max(frames);
                        p.declared_extra = p.heap_cursor + p.data_file_frames;
                        let file = p.data_file();
                        let keys = (0..*repeat)
                            .flat_map(|_| (0..frames).map(move |i| PageKey::File(file, i)));
                        touch_all(system, *pid, keys)
                    }
                }
            }
            Action::AnonFill { pid, bytes, repeat } => {
                let frames = bytes_to_frames(*bytes);
                match system.live_process_mut(*pid) {
                    Err(_) => Step::Skipped,
                    Ok(p) => {
                        let start = HEAP_BASE + p.heap_cursor;
                        p.heap_cursor += frames;
                        p.declared_extra = p.heap_cursor + p.data_file_frames;
                        let keys =
                            (0..*repeat).flat_map(|_| (start..start + frames).map(PageKey::Anon));
                        touch_all(system, *pid, keys)
                    }
                }
            }
            Action::HotplugCpu { cpu, online } => {
                system.cpu_hotplug_event(*cpu, *online)?;
                let nodes = system.nodes();
                cpu_events.push(CpuEvent {
                    tick: system.clock(),
                    cpu: *cpu,
                    online: *online,
                    online_count: nodes.cpus().online_count(),
                    unserviced: nodes
                        .iter()
                        .filter(|n| n.unserviced())
                        .map(|n| n.id)
                        .collect(),
                });
                Step::Done
            }
            Action::Snapshot(label) => {
                system.snapshot(label);
                Step::Done
            }
        })
    }
}

fn touch_all(system: &mut MemorySystem, pid: Pid, keys: impl Iterator<Item = PageKey>) -> Step {
    for key in keys {
        if let Err(e) = system.touch_page(pid, key) {
            return alloc_step(e);
        }
    }
    Step::Done
}

fn alloc_step(e: AllocError) -> Step {
    match e {
        AllocError::OutOfMemoryPanic { .. } | AllocError::Panicked => Step::Panicked,
        AllocError::RequesterKilled(_) => Step::Interrupted,
        _ => Step::Skipped,
    }
}

fn layout_error(e: ProcError) -> ScenarioError {
    match e {
        ProcError::Layout(v) => ScenarioError::Layout(v),
        other => ScenarioError::Syntax {
            line: 0,
            message: other.to_string(),
        },
    }
}
