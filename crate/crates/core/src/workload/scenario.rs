//! Line-oriented scenario files.
//!
//! ```text
//! <layout>                               first non-comment line
//! seed <n>                               second non-comment line
//! profile <name> <trust> ws=<frames|size> [anon=<f>] [order=seq|random:<seed>]
//!         [hw] [root] [threads=<n>] [prio=<n>] [warm=<us>] [external=<us>]
//! cost [page_load_us=<n>] [block_op_us=<n>]
//! <tick> SPAWN <profile> [<trust>]
//! <tick> LAUNCH <pid>
//! <tick> BACKGROUND <pid>
//! <tick> EXIT <pid>
//! <tick> SEQREAD <pid> <size> <repeat>
//! <tick> ANONFILL <pid> <size> <repeat>
//! <tick> HOTPLUG <cpu> on|off
//! <tick> SNAPSHOT <label>
//! ```
//!
//! `#` starts a comment. Ticks are virtual microseconds and must not
//! decrease. Pids are assigned from 1 in SPAWN order.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::mem::PAGE_SIZE;
use crate::process::{AppProfile, TouchOrder};
use crate::reclaim::SimConfig;
use crate::vnode::{
    format_size, parse_boot_layout, parse_size, MemoryLayout, TrustClass, VnodeError,
};
use crate::{Pid, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("bad layout: {0}")]
    Layout(#[from] VnodeError),
    #[error("event at line {line} references pid {pid} before it is spawned")]
    DanglingPid { line: usize, pid: Pid },
    #[error("profile `{profile}` uses trust class {trust}, which the layout does not route")]
    Unroutable { profile: String, trust: TrustClass },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Spawn {
        profile: String,
        trust: Option<TrustClass>,
    },
    Launch(Pid),
    Background(Pid),
    Exit(Pid),
    SeqFileRead {
        pid: Pid,
        bytes: u64,
        repeat: u32,
    },
    AnonFill {
        pid: Pid,
        bytes: u64,
        repeat: u32,
    },
    HotplugCpu {
        cpu: usize,
        online: bool,
    },
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEvent {
    pub tick: Tick,
    pub action: Action,
    /// Source line, 0 for programmatically built events.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub layout_text: String,
    pub layout: MemoryLayout,
    pub seed: u64,
    pub profiles: BTreeMap<String, AppProfile>,
    pub events: Vec<ScenarioEvent>,
    pub config: SimConfig,
    /// Whether a `cost` line overrode the defaults.
    pub cost_override: bool,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (_, layout_text) = lines.next().ok_or(ScenarioError::Syntax {
            line: 1,
            message: "missing layout line".into(),
        })?;
        let layout = parse_boot_layout(layout_text)?;

        let (seed_line, seed_text) = lines.next().ok_or(ScenarioError::Syntax {
            line: 2,
            message: "missing seed line".into(),
        })?;
        let seed = match seed_text.split_whitespace().collect::<Vec<_>>()[..] {
            ["seed", n] => n
                .parse()
                .map_err(|_| syntax(seed_line, format!("bad seed `{n}`")))?,
            _ => return Err(syntax(seed_line, "second line must be `seed <n>`")),
        };

        let mut scenario = Scenario {
            layout_text: layout_text.to_string(),
            layout,
            seed,
            profiles: BTreeMap::new(),
            events: Vec::new(),
            config: SimConfig::default(),
            cost_override: false,
        };
        for (line, text) in lines {
            let tokens: Vec<&str> = text.split_whitespace().collect();
            match tokens[0] {
                "profile" => {
                    let profile = parse_profile(line, &tokens[1..])?;
                    if scenario
                        .profiles
                        .insert(profile.name.clone(), profile)
                        .is_some()
                    {
                        return Err(syntax(line, "profile defined twice"));
                    }
                }
                "cost" => {
                    parse_cost(line, &tokens[1..], &mut scenario.config)?;
                    scenario.cost_override = true;
                }
                _ => {
                    let event = parse_event(line, &tokens)?;
                    scenario.events.push(event);
                }
            }
        }
        scenario.validate()?;
        Ok(scenario)
    }

    /// Replaces the layout, as `--layout` does on the command line.
    pub fn with_layout(mut self, layout_text: &str) -> Result<Scenario, ScenarioError> {
        self.layout = parse_boot_layout(layout_text)?;
        self.layout_text = layout_text.trim().to_string();
        self.validate()?;
        Ok(self)
    }

    /// Static checks: tick order, spawned pids, known profiles, routable trust classes.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for profile in self.profiles.values() {
            self.check_route(&profile.name, profile.trust_class)?;
        }
        let mut spawned = 0u32;
        let mut last_tick = 0;
        for event in &self.events {
            let line = event.line;
            if event.tick < last_tick {
                return Err(syntax(line, "ticks must not decrease"));
            }
            last_tick = event.tick;
            let referenced = match &event.action {
                Action::Spawn { profile, trust } => {
                    let p = self
                        .profiles
                        .get(profile)
                        .ok_or_else(|| syntax(line, format!("unknown profile `{profile}`")))?;
                    if let Some(t) = trust {
                        self.check_route(&p.name, *t)?;
                    }
                    spawned += 1;
                    None
                }
                Action::Launch(pid)
                | Action::Background(pid)
                | Action::Exit(pid)
                | Action::SeqFileRead { pid, .. }
                | Action::AnonFill { pid, .. } => Some(*pid),
                Action::HotplugCpu { cpu, .. } => {
                    if *cpu >= self.layout.cpu_count {
                        return Err(ScenarioError::Layout(VnodeError::UnknownCpu(*cpu)));
                    }
                    None
                }
                Action::Snapshot(_) => None,
            };
            if let Some(pid) = referenced {
                if pid.0 == 0 || pid.0 > spawned {
                    return Err(ScenarioError::DanglingPid { line, pid });
                }
            }
        }
        Ok(())
    }

    fn check_route(&self, profile: &str, trust: TrustClass) -> Result<(), ScenarioError> {
        self.layout
            .route(trust)
            .map(|_| ())
            .map_err(|_| ScenarioError::Unroutable {
                profile: profile.to_string(),
                trust,
            })
    }
}

fn syntax(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_profile(line: usize, tokens: &[&str]) -> Result<AppProfile, ScenarioError> {
    let [name, trust, options @ ..] = tokens else {
        return Err(syntax(line, "profile needs a name and a trust class"));
    };
    let trust: TrustClass = trust.parse()?;
    let mut profile = AppProfile::new(name, trust, 0);
    let mut ws_given = false;
    for option in options {
        let bad = || syntax(line, format!("bad profile option `{option}`"));
        match option.split_once('=') {
            None if *option == "hw" => profile.hw_access = true,
            None if *option == "root" => profile.root_privileged = true,
            Some(("ws", v)) => {
                profile.working_set_frames = match v.parse::<u64>() {
                    Ok(frames) => frames,
                    Err(_) => parse_size(v)? / PAGE_SIZE,
                };
                ws_given = true;
            }
            Some(("anon", v)) => {
                profile.anon_fraction = v
                    .parse()
                    .ok()
                    .filter(|f: &f64| (0.0..=1.0).contains(f))
                    .ok_or_else(bad)?
            }
            Some(("order", "seq")) => profile.touch_order = TouchOrder::Sequential,
            Some(("order", v)) => {
                let seed = v
                    .strip_prefix("random:")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(bad)?;
                profile.touch_order = TouchOrder::UniformRandom(seed);
            }
            Some(("threads", v)) => profile.thread_count = v.parse().map_err(|_| bad())?,
            Some(("prio", v)) => profile.sched_priority = v.parse().map_err(|_| bad())?,
            Some(("warm", v)) => profile.warm_launch_us = v.parse().map_err(|_| bad())?,
            Some(("external", v)) => profile.external_launch_us = v.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        }
    }
    if !ws_given || profile.working_set_frames == 0 {
        return Err(syntax(line, "profile needs ws=<frames> of at least 1"));
    }
    Ok(profile)
}

fn parse_cost(line: usize, tokens: &[&str], config: &mut SimConfig) -> Result<(), ScenarioError> {
    for token in tokens {
        let bad = || syntax(line, format!("bad cost override `{token}`"));
        let (key, value) = token.split_once('=').ok_or_else(bad)?;
        let value: u64 = value.parse().map_err(|_| bad())?;
        match key {
            "page_load_us" => config.page_load_cost_us = value,
            "block_op_us" => config.block_op_cost_us = value,
            _ => return Err(bad()),
        }
    }
    Ok(())
}

fn parse_event(line: usize, tokens: &[&str]) -> Result<ScenarioEvent, ScenarioError> {
    let tick: Tick = tokens[0]
        .parse()
        .map_err(|_| syntax(line, format!("expected a tick, got `{}`", tokens[0])))?;
    let pid = |t: &str| {
        t.parse::<u32>()
            .map(Pid)
            .map_err(|_| syntax(line, format!("bad pid `{t}`")))
    };
    let count = |t: &str| {
        t.parse::<u32>()
            .map_err(|_| syntax(line, format!("bad repeat `{t}`")))
    };
    let action = match tokens[1..] {
        ["SPAWN", profile] => Action::Spawn {
            profile: profile.to_string(),
            trust: None,
        },
        ["SPAWN", profile, trust] => Action::Spawn {
            profile: profile.to_string(),
            trust: Some(trust.parse()?),
        },
        ["LAUNCH", p] => Action::Launch(pid(p)?),
        ["BACKGROUND", p] => Action::Background(pid(p)?),
        ["EXIT", p] => Action::Exit(pid(p)?),
        ["SEQREAD", p, size, repeat] => Action::SeqFileRead {
            pid: pid(p)?,
            bytes: parse_size(size)?,
            repeat: count(repeat)?,
        },
        ["ANONFILL", p, size, repeat] => Action::AnonFill {
            pid: pid(p)?,
            bytes: parse_size(size)?,
            repeat: count(repeat)?,
        },
        ["HOTPLUG", cpu, state] => Action::HotplugCpu {
            cpu: cpu
                .parse()
                .map_err(|_| syntax(line, format!("bad cpu `{cpu}`")))?,
            online: match state {
                "on" => true,
                "off" => false,
                _ => {
                    return Err(syntax(
                        line,
                        format!("hotplug state must be on|off, got `{state}`"),
                    ))
                }
            },
        },
        ["SNAPSHOT", label] => Action::Snapshot(label.to_string()),
        _ => {
            return Err(syntax(
                line,
                format!("unknown or malformed action `{}`", tokens[1..].join(" ")),
            ))
        }
    };
    Ok(ScenarioEvent { tick, action, line })
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Spawn {
                profile,
                trust: None,
            } => write!(f, "SPAWN {profile}"),
            Action::Spawn {
                profile,
                trust: Some(t),
            } => write!(f, "SPAWN {profile} {t}"),
            Action::Launch(p) => write!(f, "LAUNCH {p}"),
            Action::Background(p) => write!(f, "BACKGROUND {p}"),
            Action::Exit(p) => write!(f, "EXIT {p}"),
            Action::SeqFileRead { pid, bytes, repeat } => {
                write!(f, "SEQREAD {pid} {} {repeat}", format_size(*bytes))
            }
            Action::AnonFill { pid, bytes, repeat } => {
                write!(f, "ANONFILL {pid} {} {repeat}", format_size(*bytes))
            }
            Action::HotplugCpu { cpu, online } => {
                write!(f, "HOTPLUG {cpu} {}", if *online { "on" } else { "off" })
            }
            Action::Snapshot(label) => write!(f, "SNAPSHOT {label}"),
        }
    }
}

impl fmt::Display for AppProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "profile {} {} ws={} anon={}",
            self.name, self.trust_class, self.working_set_frames, self.anon_fraction
        )?;
        if let TouchOrder::UniformRandom(seed) = self.touch_order {
            write!(f, " order=random:{seed}")?;
        }
        if self.hw_access {
            f.write_str(" hw")?;
        }
        if self.root_privileged {
            f.write_str(" root")?;
        }
        write!(
            f,
            " threads={} prio={}",
            self.thread_count, self.sched_priority
        )?;
        if self.warm_launch_us > 0 {
            write!(f, " warm={}", self.warm_launch_us)?;
        }
        if self.external_launch_us > 0 {
            write!(f, " external={}", self.external_launch_us)?;
        }
        Ok(())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.layout_text)?;
        writeln!(f, "seed {}", self.seed)?;
        for profile in self.profiles.values() {
            writeln!(f, "{profile}")?;
        }
        if self.cost_override {
            writeln!(
                f,
                "cost page_load_us={} block_op_us={}",
                self.config.page_load_cost_us, self.config.block_op_cost_us
            )?;
        }
        for event in &self.events {
            writeln!(f, "{} {}", event.tick, event.action)?;
        }
        Ok(())
    }
}
