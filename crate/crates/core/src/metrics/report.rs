use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::mem::buddyinfo_line;
use crate::process::{DegradationTally, LossCause};
use crate::reclaim::{
    escalation_violations, FreeSample, KillRecord, PanicRecord, PressureEvent, SimConfig, Snapshot,
    Stage,
};
use crate::workload::{CpuEvent, LaunchRecord, RunOutcome, Scenario};
use crate::{NodeId, Pid, Tick};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: NodeId,
    pub name: String,
    pub trust: String,
    pub base_pfn: u64,
    pub frame_count: u64,
    pub threshold_bytes: u64,
    pub cpu_mask: String,
    pub effective_cpus: String,
    pub unserviced: bool,
    pub lmk_episodes: u64,
    pub oomk_events: u64,
    pub lmk_victims: u64,
    pub oomk_victims: u64,
    pub final_free_bytes: u64,
    /// This node's part of all order-0 free blocks at the final snapshot.
    pub order0_share: f64,
    pub free_series: Vec<FreeSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub pid: Pid,
    pub name: String,
    pub trust: String,
    pub node: NodeId,
    pub builtin: bool,
    pub alive: bool,
    pub incarnations: u32,
    pub launches: u64,
    pub last_launch_us: Option<u64>,
    pub mean_launch_us: Option<f64>,
    pub frames_touched: u64,
    pub faults: u64,
    pub latency_us: u64,
    pub resident_frames: u64,
    pub degradation: DegradationTally,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub frames_touched: u64,
    pub busy_us: u64,
    /// Frames touched per second of page-load time; 0 when nothing had to load.
    pub frames_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub conservation_violations: u64,
    pub isolation_violations: u64,
    pub escalation_violations: u64,
    pub audit_error: Option<String>,
}

impl AuditCounts {
    pub fn clean(&self) -> bool {
        self.conservation_violations == 0
            && self.isolation_violations == 0
            && self.escalation_violations == 0
            && self.audit_error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub layout: String,
    pub seed: u64,
    pub config: SimConfig,
    pub final_tick: Tick,
    pub panicked: bool,
    pub panic: Option<PanicRecord>,
    pub nodes: Vec<NodeReport>,
    pub apps: Vec<AppReport>,
    pub launches: Vec<LaunchRecord>,
    pub pressure_events: Vec<PressureEvent>,
    pub kills: Vec<KillRecord>,
    pub snapshots: Vec<Snapshot>,
    pub cpu_events: Vec<CpuEvent>,
    pub untrusted_throughput: Throughput,
    pub audit: AuditCounts,
    pub skipped_events: u64,
    pub interrupted_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationBreakdown {
    pub pid: Pid,
    pub name: String,
    pub builtin: bool,
    pub total_us: u64,
    pub lmk: f64,
    pub oomk: f64,
    pub fragmentation: f64,
}

impl MetricsReport {
    pub fn collect(scenario: &Scenario, outcome: &RunOutcome) -> MetricsReport {
        let sys = &outcome.system;
        let nodes = sys.nodes();
        let final_snapshot = sys.snapshots().last().expect("runs end with a snapshot");
        let order0_total: u64 = final_snapshot.nodes.iter().map(|n| n.histogram[0]).sum();
        let victims = |node: NodeId, stage: Stage| -> u64 {
            sys.pressure_log()
                .iter()
                .filter(|e| e.node == node && e.stage == stage)
                .map(|e| e.victims.len() as u64)
                .sum()
        };
        let node_reports = nodes
            .iter()
            .map(|n| {
                let order0 = final_snapshot.nodes[n.id].histogram[0];
                NodeReport {
                    id: n.id,
                    name: n.spec.name.clone(),
                    trust: n.spec.trust_label(),
                    base_pfn: n.base_pfn,
                    frame_count: n.frame_count,
                    threshold_bytes: n.lmk_threshold,
                    cpu_mask: n.spec.cpu_mask.to_string(),
                    effective_cpus: n.online_cpus.to_string(),
                    unserviced: n.unserviced(),
                    lmk_episodes: n.lmk_episodes,
                    oomk_events: n.oomk_events,
                    lmk_victims: victims(n.id, Stage::Lmk),
                    oomk_victims: victims(n.id, Stage::Oomk),
                    final_free_bytes: n.free_bytes(),
                    order0_share: if order0_total == 0 {
                        0.0
                    } else {
                        order0 as f64 / order0_total as f64
                    },
                    free_series: sys.free_series(n.id).to_vec(),
                }
            })
            .collect();

        let mut per_pid: BTreeMap<Pid, Vec<u64>> = BTreeMap::new();
        for launch in outcome.launches.iter().filter(|l| !l.interrupted) {
            per_pid
                .entry(launch.pid)
                .or_default()
                .push(launch.launch_us());
        }
        let apps = sys
            .processes()
            .map(|p| {
                let times = per_pid.get(&p.pid).map(Vec::as_slice).unwrap_or_default();
                AppReport {
                    pid: p.pid,
                    name: p.name.clone(),
                    trust: p.trust_class.to_string(),
                    node: p.node_id,
                    builtin: p.trust_class.is_builtin(),
                    alive: p.is_alive(),
                    incarnations: p.incarnation + 1,
                    launches: times.len() as u64,
                    last_launch_us: times.last().copied(),
                    mean_launch_us: (!times.is_empty())
                        .then(|| times.iter().sum::<u64>() as f64 / times.len() as f64),
                    frames_touched: p.frames_touched,
                    faults: p.faults,
                    latency_us: p.latency_us,
                    resident_frames: p.resident_frames(),
                    degradation: p.degradation,
                }
            })
            .collect();

        let untrusted = sys.processes().filter(|p| !p.trust_class.is_builtin());
        let (frames_touched, busy_us) =
            untrusted.fold((0, 0), |(f, b), p| (f + p.frames_touched, b + p.latency_us));
        let untrusted_throughput = Throughput {
            frames_touched,
            busy_us,
            frames_per_second: if busy_us == 0 {
                0.0
            } else {
                frames_touched as f64 * 1e6 / busy_us as f64
            },
        };

        MetricsReport {
            schema_version: SCHEMA_VERSION,
            layout: scenario.layout_text.clone(),
            seed: scenario.seed,
            config: *sys.config(),
            final_tick: sys.clock(),
            panicked: sys.panic().is_some(),
            panic: sys.panic(),
            nodes: node_reports,
            apps,
            launches: outcome.launches.clone(),
            pressure_events: sys.pressure_log().to_vec(),
            kills: sys.kill_log().to_vec(),
            snapshots: sys.snapshots().to_vec(),
            cpu_events: outcome.cpu_events.clone(),
            untrusted_throughput,
            audit: AuditCounts {
                conservation_violations: sys.conservation_violations(),
                isolation_violations: sys.isolation_violations(),
                escalation_violations: escalation_violations(sys.pressure_log()),
                audit_error: sys.audit().err(),
            },
            skipped_events: outcome.skipped_events,
            interrupted_events: outcome.interrupted_events,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<MetricsReport, MetricsError> {
        let report: MetricsReport = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(MetricsError::Schema(report.schema_version));
        }
        Ok(report)
    }

    pub fn snapshot(&self, label: &str) -> Option<&Snapshot> {
        self.snapshots.iter().rev().find(|s| s.label == label)
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("runs end with a snapshot")
    }

    pub fn app(&self, name: &str) -> Option<&AppReport> {
        self.apps.iter().find(|a| a.name == name)
    }

    /// Launches of every process named `name`, in order.
    pub fn launches_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a LaunchRecord> + 'a {
        self.launches
            .iter()
            .filter(move |l| l.name == name && !l.interrupted)
    }

    pub fn total_free_bytes(&self) -> u64 {
        self.final_snapshot()
            .nodes
            .iter()
            .map(|n| n.free_bytes)
            .sum()
    }

    /// Free blocks of `order` summed over all nodes at the final snapshot.
    pub fn total_blocks(&self, order: usize) -> u64 {
        self.final_snapshot()
            .nodes
            .iter()
            .map(|n| n.histogram[order])
            .sum()
    }

    pub fn lmk_episodes(&self) -> u64 {
        self.nodes.iter().map(|n| n.lmk_episodes).sum()
    }

    pub fn oomk_events(&self) -> u64 {
        self.nodes.iter().map(|n| n.oomk_events).sum()
    }

    /// `/proc/buddyinfo`-style lines for the named snapshot, or the last one.
    pub fn buddyinfo(&self, label: Option<&str>) -> Result<String, MetricsError> {
        let snapshot = match label {
            Some(label) => self
                .snapshot(label)
                .ok_or_else(|| MetricsError::UnknownSnapshot(label.to_string()))?,
            None => self.final_snapshot(),
        };
        let mut out = String::new();
        for node in &snapshot.nodes {
            let trust = self.nodes.get(node.node).map_or("?", |n| n.trust.as_str());
            out.push_str(&buddyinfo_line(node.node, trust, &node.histogram));
            out.push('\n');
        }
        Ok(out)
    }

    /// Lines of the pressure log.
    pub fn pressure_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.pressure_events.iter().map(PressureEvent::log_line)
    }
}

/// Splits each built-in app's degradation time by the cause that evicted
/// the reloaded pages.
pub fn breakdown(report: &MetricsReport) -> Vec<DegradationBreakdown> {
    report
        .apps
        .iter()
        .filter(|a| a.builtin)
        .map(|a| {
            let total = a.degradation.total();
            let share = |cause: LossCause| {
                let us = match cause {
                    LossCause::Lmk => a.degradation.lmk_us,
                    LossCause::Oomk => a.degradation.oomk_us,
                    LossCause::Reclaim => a.degradation.fragmentation_us,
                };
                if total == 0 {
                    0.0
                } else {
                    us as f64 / total as f64
                }
            };
            DegradationBreakdown {
                pid: a.pid,
                name: a.name.clone(),
                builtin: a.builtin,
                total_us: total,
                lmk: share(LossCause::Lmk),
                oomk: share(LossCause::Oomk),
                fragmentation: share(LossCause::Reclaim),
            }
        })
        .collect()
}
