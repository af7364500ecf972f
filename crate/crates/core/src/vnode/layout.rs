//! Boot-parameter memory layouts.
//!
//! Grammar (whitespace separated tokens, any order):
//!
//! ```text
//! total=<size>                    required
//! threshold=<size>|<pct>%         optional global LMK threshold
//! ncpus=<n>                       optional actual CPU count, default 2
//! vnode=<node>[,<node>...]        required
//!
//! <node>  = <name>:<size>:<trust>[+<trust>...][:cpus=<list>][:threshold=<size>|<pct>%][:reserved=<size>]
//! <size>  = <integer><K|M|G>
//! <list>  = <cpu>|<lo>-<hi> joined by ';'
//! ```
//!
//! Without `threshold`, every node defaults to 72 MB scaled by `total / 2 GB`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CpuMask, VnodeError};
use crate::mem::PAGE_SIZE;

const KIB: u64 = 1024;
const MIB: u64 = 1024 * KIB;
const GIB: u64 = 1024 * MIB;

/// Reference threshold: 72 MB of free memory on a 2 GB device.
pub const REFERENCE_THRESHOLD: u64 = 72 * MIB;
pub const REFERENCE_TOTAL: u64 = 2 * GIB;

pub const DEFAULT_CPU_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrustClass {
    Trusted,
    Untrusted,
    ResponsiveAware,
    TelecomBuiltin,
}

impl TrustClass {
    pub const ALL: [TrustClass; 4] = [
        TrustClass::Trusted,
        TrustClass::Untrusted,
        TrustClass::ResponsiveAware,
        TrustClass::TelecomBuiltin,
    ];

    /// Everything except untrusted downloads counts as built-in.
    pub fn is_builtin(self) -> bool {
        self != TrustClass::Untrusted
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrustClass::Trusted => "Trusted",
            TrustClass::Untrusted => "Untrusted",
            TrustClass::ResponsiveAware => "ResponsiveAware",
            TrustClass::TelecomBuiltin => "TelecomBuiltin",
        }
    }
}

impl fmt::Display for TrustClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrustClass {
    type Err = VnodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrustClass::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| VnodeError::Parse(format!("unknown trust class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdSpec {
    Bytes(u64),
    /// Percent of the memory the threshold applies to.
    Percent(f64),
}

impl ThresholdSpec {
    fn resolve(self, of: u64) -> u64 {
        match self {
            ThresholdSpec::Bytes(b) => b,
            ThresholdSpec::Percent(p) => (of as f64 * p / 100.0).floor() as u64,
        }
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSpec::Bytes(b) => f.write_str(&format_size(*b)),
            ThresholdSpec::Percent(p) => write!(f, "{p}%"),
        }
    }
}

impl FromStr for ThresholdSpec {
    type Err = VnodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_suffix('%') {
            Some(pct) => {
                let p: f64 = pct
                    .parse()
                    .map_err(|_| VnodeError::Parse(format!("bad percentage `{s}`")))?;
                if !(p.is_finite() && (0.0..=100.0).contains(&p)) {
                    return Err(VnodeError::Parse(format!("percentage out of range `{s}`")));
                }
                Ok(ThresholdSpec::Percent(p))
            }
            None => parse_size(s).map(ThresholdSpec::Bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub size: u64,
    /// Trust classes routed to this node, first one is the node's label.
    pub trust: Vec<TrustClass>,
    pub cpu_mask: CpuMask,
    pub threshold: Option<ThresholdSpec>,
    pub reserved: u64,
}

impl NodeSpec {
    pub fn trust_label(&self) -> String {
        self.trust
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Display for NodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}",
            self.name,
            format_size(self.size),
            self.trust_label()
        )?;
        if !self.cpu_mask.is_empty() {
            write!(f, ":cpus={}", self.cpu_mask)?;
        }
        if let Some(t) = self.threshold {
            write!(f, ":threshold={t}")?;
        }
        if self.reserved > 0 {
            write!(f, ":reserved={}", format_size(self.reserved))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLayout {
    pub nodes: Vec<NodeSpec>,
    pub total_memory: u64,
    pub threshold: Option<ThresholdSpec>,
    pub cpu_count: usize,
    pub trust_routing: BTreeMap<TrustClass, String>,
}

impl MemoryLayout {
    /// Node index serving a trust class.
    pub fn route(&self, trust: TrustClass) -> Result<usize, VnodeError> {
        let name = self
            .trust_routing
            .get(&trust)
            .ok_or(VnodeError::UnroutableTrustClass(trust))?;
        Ok(self
            .nodes
            .iter()
            .position(|n| &n.name == name)
            .expect("routing names a node"))
    }

    /// LMK threshold in bytes for node `index`.
    pub fn node_threshold(&self, index: usize) -> u64 {
        let node = &self.nodes[index];
        match (node.threshold, self.threshold) {
            (Some(t), _) => t.resolve(node.size),
            (None, Some(t)) => t.resolve(self.total_memory),
            (None, None) => {
                (REFERENCE_THRESHOLD as u128 * self.total_memory as u128 / REFERENCE_TOTAL as u128)
                    as u64
            }
        }
    }

    pub fn total_frames(&self) -> u64 {
        self.total_memory / PAGE_SIZE
    }
}

impl fmt::Display for MemoryLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total={}", format_size(self.total_memory))?;
        if let Some(t) = self.threshold {
            write!(f, " threshold={t}")?;
        }
        write!(f, " ncpus={} vnode=", self.cpu_count)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{node}")?;
        }
        Ok(())
    }
}

impl FromStr for MemoryLayout {
    type Err = VnodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_boot_layout(s)
    }
}

pub fn parse_size(s: &str) -> Result<u64, VnodeError> {
    let bad = || VnodeError::Parse(format!("bad size `{s}`"));
    let unit = match s.chars().last().ok_or_else(bad)? {
        'K' => KIB,
        'M' => MIB,
        'G' => GIB,
        _ => return Err(bad()),
    };
    let digits = &s[..s.len() - 1];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    digits
        .parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(unit))
        .ok_or_else(bad)
}

/// Largest exact unit, e.g. `1536M`, `2G`, `12K`.
pub fn format_size(bytes: u64) -> String {
    if bytes > 0 && bytes.is_multiple_of(GIB) {
        format!("{}G", bytes / GIB)
    } else if bytes > 0 && bytes.is_multiple_of(MIB) {
        format!("{}M", bytes / MIB)
    } else {
        format!("{}K", bytes / KIB)
    }
}

pub fn parse_boot_layout(text: &str) -> Result<MemoryLayout, VnodeError> {
    let mut total = None;
    let mut threshold = None;
    let mut cpu_count = None;
    let mut nodes: Option<Vec<NodeSpec>> = None;

    for token in text.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| VnodeError::Parse(format!("expected key=value, got `{token}`")))?;
        let duplicate = || VnodeError::Parse(format!("`{key}` given twice"));
        match key {
            "total" => {
                if total.replace(parse_size(value)?).is_some() {
                    return Err(duplicate());
                }
            }
            "threshold" => {
                if threshold.replace(value.parse::<ThresholdSpec>()?).is_some() {
                    return Err(duplicate());
                }
            }
            "ncpus" => {
                let n: usize = value
                    .parse()
                    .ok()
                    .filter(|n| (1..=CpuMask::CAPACITY).contains(n))
                    .ok_or_else(|| VnodeError::Parse(format!("bad cpu count `{value}`")))?;
                if cpu_count.replace(n).is_some() {
                    return Err(duplicate());
                }
            }
            "vnode" => {
                let list = value
                    .split(',')
                    .map(parse_node)
                    .collect::<Result<Vec<_>, _>>()?;
                if nodes.replace(list).is_some() {
                    return Err(duplicate());
                }
            }
            _ => return Err(VnodeError::Parse(format!("unknown key `{key}`"))),
        }
    }

    let total_memory = total.ok_or_else(|| VnodeError::Parse("missing `total=`".into()))?;
    let nodes = nodes.ok_or_else(|| VnodeError::Parse("missing `vnode=`".into()))?;
    let cpu_count = cpu_count.unwrap_or(DEFAULT_CPU_COUNT);

    let mut trust_routing = BTreeMap::new();
    let mut sum = 0u64;
    for (i, node) in nodes.iter().enumerate() {
        if nodes[..i].iter().any(|n| n.name == node.name) {
            return Err(VnodeError::DuplicateName(node.name.clone()));
        }
        if let Some(cpu) = node.cpu_mask.iter().find(|&c| c >= cpu_count) {
            return Err(VnodeError::UnknownCpu(cpu));
        }
        if node.reserved > node.size {
            return Err(VnodeError::Parse(format!(
                "node `{}` reserves more than its size",
                node.name
            )));
        }
        for &trust in &node.trust {
            if trust_routing.insert(trust, node.name.clone()).is_some() {
                return Err(VnodeError::AmbiguousTrustClass(trust));
            }
        }
        sum += node.size;
    }
    if sum != total_memory {
        return Err(VnodeError::Overcommit {
            nodes: sum,
            total: total_memory,
        });
    }

    Ok(MemoryLayout {
        nodes,
        total_memory,
        threshold,
        cpu_count,
        trust_routing,
    })
}

fn parse_node(text: &str) -> Result<NodeSpec, VnodeError> {
    let mut parts = text.split(':');
    let bad = || VnodeError::Parse(format!("bad vnode entry `{text}`"));
    let name = parts.next().filter(|n| valid_name(n)).ok_or_else(bad)?;
    let size = parse_size(parts.next().ok_or_else(bad)?)?;
    if size == 0 || size % PAGE_SIZE != 0 {
        return Err(VnodeError::Parse(format!(
            "node `{name}` size must be a positive multiple of 4K"
        )));
    }
    let trust = parts
        .next()
        .ok_or_else(bad)?
        .split('+')
        .map(str::parse)
        .collect::<Result<Vec<TrustClass>, _>>()?;
    let mut spec = NodeSpec {
        name: name.to_string(),
        size,
        trust,
        cpu_mask: CpuMask::EMPTY,
        threshold: None,
        reserved: 0,
    };
    for option in parts {
        match option.split_once('=') {
            Some(("cpus", list)) => spec.cpu_mask = list.parse()?,
            Some(("threshold", t)) => spec.threshold = Some(t.parse()?),
            Some(("reserved", r)) => {
                spec.reserved = parse_size(r)?;
                if !spec.reserved.is_multiple_of(PAGE_SIZE) {
                    return Err(VnodeError::Parse(format!(
                        "reserved size of `{name}` must be a multiple of 4K"
                    )));
                }
            }
            _ => return Err(VnodeError::Parse(format!("unknown node option `{option}`"))),
        }
    }
    Ok(spec)
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER: &str =
        "total=2G threshold=72M vnode=trusted:512M:Trusted,untrusted:1536M:Untrusted";

    #[test]
    fn two_node_layout() {
        let layout = parse_boot_layout(PAPER).unwrap();
        assert_eq!(layout.nodes.len(), 2);
        assert_eq!(layout.nodes[0].size / PAGE_SIZE, 131072);
        assert_eq!(layout.nodes[1].size / PAGE_SIZE, 393216);
        assert_eq!(layout.route(TrustClass::Trusted).unwrap(), 0);
        assert_eq!(layout.route(TrustClass::Untrusted).unwrap(), 1);
        assert_eq!(layout.node_threshold(1), 72 * MIB);
    }

    #[test]
    fn flat_layout() {
        let layout = parse_boot_layout("total=2G vnode=all:2G:Trusted").unwrap();
        assert_eq!(layout.nodes.len(), 1);
        assert_eq!(layout.total_frames(), 524288);
        assert_eq!(layout.node_threshold(0), 72 * MIB);
        assert!(matches!(
            layout.route(TrustClass::Untrusted),
            Err(VnodeError::UnroutableTrustClass(TrustClass::Untrusted))
        ));
    }

    #[test]
    fn merged_trust_classes_share_a_node() {
        let layout = parse_boot_layout("total=256M vnode=all:256M:Trusted+Untrusted").unwrap();
        assert_eq!(layout.route(TrustClass::Untrusted).unwrap(), 0);
        assert_eq!(layout.nodes[0].trust_label(), "Trusted+Untrusted");
        // 72 MB scaled to 256 MB of memory.
        assert_eq!(layout.node_threshold(0), 9 * MIB);
    }

    #[test]
    fn overcommit() {
        let err = parse_boot_layout("total=1G vnode=a:512M:Trusted,b:768M:Untrusted").unwrap_err();
        assert!(matches!(err, VnodeError::Overcommit { .. }));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_boot_layout("total=1G vnode=a:512M:Trusted,a:512M:Untrusted"),
            Err(VnodeError::DuplicateName(_))
        ));
        assert!(matches!(
            parse_boot_layout("total=1G vnode=a:512M:Trusted,b:512M:Trusted"),
            Err(VnodeError::AmbiguousTrustClass(TrustClass::Trusted))
        ));
        assert!(matches!(
            parse_boot_layout("total=1G"),
            Err(VnodeError::Parse(_))
        ));
        assert!(matches!(
            parse_boot_layout("total=1X vnode=a:1G:Trusted"),
            Err(VnodeError::Parse(_))
        ));
        assert!(matches!(
            parse_boot_layout("total=1G vnode=a:1G:Nobody"),
            Err(VnodeError::Parse(_))
        ));
        assert!(matches!(
            parse_boot_layout("total=1G vnode=a:1G"),
            Err(VnodeError::Parse(_))
        ));
        assert!(matches!(
            parse_boot_layout("size=1G vnode=a:1G:Trusted"),
            Err(VnodeError::Parse(_))
        ));
        assert!(matches!(
            parse_boot_layout("total=1G vnode=a:1G:Trusted:cpus=5"),
            Err(VnodeError::UnknownCpu(5))
        ));
    }

    #[test]
    fn percent_and_per_node_thresholds() {
        let layout = parse_boot_layout(
            "total=256M threshold=3.5% vnode=t:64M:Trusted:threshold=4M,u:128M:Untrusted,x:64M:TelecomBuiltin:threshold=10%",
        )
        .unwrap();
        assert_eq!(layout.node_threshold(0), 4 * MIB);
        assert_eq!(
            layout.node_threshold(1),
            (256.0 * MIB as f64 * 0.035) as u64
        );
        assert_eq!(
            layout.node_threshold(2),
            (64.0 * MIB as f64 * 0.10).floor() as u64
        );
    }

    #[test]
    fn cpu_lists() {
        let layout =
            parse_boot_layout("total=8M ncpus=4 vnode=a:4M:Trusted:cpus=0;2-3,b:4M:Untrusted")
                .unwrap();
        assert_eq!(
            layout.nodes[0].cpu_mask.iter().collect::<Vec<_>>(),
            vec![0, 2, 3]
        );
        assert!(layout.nodes[1].cpu_mask.is_empty());
        assert_eq!(layout.cpu_count, 4);
    }

    #[test]
    fn format_round_trip() {
        let text = "total=256M threshold=3.5% ncpus=4 vnode=t:64M:Trusted:cpus=0-1:threshold=4M:reserved=8K,u:192M:Untrusted+TelecomBuiltin";
        let layout = parse_boot_layout(text).unwrap();
        assert_eq!(layout.to_string(), text);
        assert_eq!(parse_boot_layout(&layout.to_string()).unwrap(), layout);
    }
}
