use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsReport};
use crate::mem::ORDER_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountDelta {
    pub before: u64,
    pub after: u64,
    pub delta: i64,
}

impl CountDelta {
    fn new(before: u64, after: u64) -> Self {
        CountDelta {
            before,
            after,
            delta: after as i64 - before as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloatDelta {
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppComparison {
    pub name: String,
    pub builtin: bool,
    pub before_last_us: Option<u64>,
    pub after_last_us: Option<u64>,
    pub last_delta_us: Option<i64>,
    /// `(before - after) / before` for the last launch; `None` when undefined.
    pub last_improvement: Option<f64>,
    pub before_mean_us: Option<f64>,
    pub after_mean_us: Option<f64>,
    pub mean_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub before_layout: String,
    pub after_layout: String,
    pub before_panicked: bool,
    pub after_panicked: bool,
    pub free_bytes: CountDelta,
    pub lmk_episodes: CountDelta,
    pub oomk_events: CountDelta,
    pub kills: CountDelta,
    /// Per-order change in free block counts at the final snapshot.
    pub histogram_delta: Vec<i64>,
    pub apps: Vec<AppComparison>,
    pub untrusted_throughput: FloatDelta,
}

fn improvement(before: Option<f64>, after: Option<f64>) -> Option<f64> {
    match (before, after) {
        (Some(b), Some(a)) if b > 0.0 => Some((b - a) / b),
        _ => None,
    }
}

struct LaunchStats {
    builtin: bool,
    last: Option<u64>,
    mean: Option<f64>,
}

fn launch_stats(report: &MetricsReport) -> BTreeMap<&str, LaunchStats> {
    let mut stats = BTreeMap::new();
    for app in &report.apps {
        let times: Vec<u64> = report
            .launches_of(&app.name)
            .map(|l| l.launch_us())
            .collect();
        stats
            .entry(app.name.as_str())
            .or_insert_with(|| LaunchStats {
                builtin: app.builtin,
                last: times.last().copied(),
                mean: (!times.is_empty())
                    .then(|| times.iter().sum::<u64>() as f64 / times.len() as f64),
            });
    }
    stats
}

/// Compares two runs of the same app population. Every delta is `after - before`.
pub fn compare(
    before: &MetricsReport,
    after: &MetricsReport,
) -> Result<ComparisonReport, MetricsError> {
    let names = |r: &MetricsReport| {
        r.apps
            .iter()
            .map(|a| a.name.clone())
            .collect::<BTreeSet<_>>()
    };
    let (b_names, a_names) = (names(before), names(after));
    if b_names != a_names {
        let only: Vec<_> = b_names.symmetric_difference(&a_names).cloned().collect();
        return Err(MetricsError::IncompatibleRuns(format!(
            "apps present in only one run: {}",
            only.join(", ")
        )));
    }

    let (b_stats, a_stats) = (launch_stats(before), launch_stats(after));
    let apps = b_stats
        .iter()
        .map(|(name, b)| {
            let a = &a_stats[name];
            AppComparison {
                name: name.to_string(),
                builtin: b.builtin,
                before_last_us: b.last,
                after_last_us: a.last,
                last_delta_us: b.last.zip(a.last).map(|(b, a)| a as i64 - b as i64),
                last_improvement: improvement(b.last.map(|v| v as f64), a.last.map(|v| v as f64)),
                before_mean_us: b.mean,
                after_mean_us: a.mean,
                mean_improvement: improvement(b.mean, a.mean),
            }
        })
        .collect();

    let histogram_delta = (0..ORDER_COUNT)
        .map(|order| after.total_blocks(order) as i64 - before.total_blocks(order) as i64)
        .collect();
    let (bt, at) = (
        before.untrusted_throughput.frames_per_second,
        after.untrusted_throughput.frames_per_second,
    );
    Ok(ComparisonReport {
        before_layout: before.layout.clone(),
        after_layout: after.layout.clone(),
        before_panicked: before.panicked,
        after_panicked: after.panicked,
        free_bytes: CountDelta::new(before.total_free_bytes(), after.total_free_bytes()),
        lmk_episodes: CountDelta::new(before.lmk_episodes(), after.lmk_episodes()),
        oomk_events: CountDelta::new(before.oomk_events(), after.oomk_events()),
        kills: CountDelta::new(before.kills.len() as u64, after.kills.len() as u64),
        histogram_delta,
        apps,
        untrusted_throughput: FloatDelta {
            before: bt,
            after: at,
            delta: at - bt,
        },
    })
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", v * 100.0))
}

fn millis(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v as f64 / 1000.0))
}

pub fn render_comparison(c: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "before: {}", c.before_layout);
    let _ = writeln!(out, "after:  {}", c.after_layout);
    for (label, d) in [
        ("free bytes", c.free_bytes),
        ("lmk episodes", c.lmk_episodes),
        ("oomk events", c.oomk_events),
        ("kills", c.kills),
    ] {
        let _ = writeln!(
            out,
            "{label:<14}{:>12} -> {:<12} ({:+})",
            d.before, d.after, d.delta
        );
    }
    let hist: Vec<String> = c.histogram_delta.iter().map(|d| format!("{d:+}")).collect();
    let _ = writeln!(out, "free blocks by order: {}", hist.join(" "));
    let t = c.untrusted_throughput;
    let _ = writeln!(
        out,
        "untrusted throughput: {:.1} -> {:.1} frames/s",
        t.before, t.after
    );
    let _ = writeln!(
        out,
        "{:<12}{:>12}{:>12}{:>10}",
        "app", "before ms", "after ms", "gain"
    );
    for app in &c.apps {
        let _ = writeln!(
            out,
            "{:<12}{:>12}{:>12}{:>10}",
            app.name,
            millis(app.before_last_us),
            millis(app.after_last_us),
            percent(app.last_improvement)
        );
    }
    if c.before_panicked || c.after_panicked {
        let _ = writeln!(
            out,
            "panicked: before={} after={}",
            c.before_panicked, c.after_panicked
        );
    }
    out
}
