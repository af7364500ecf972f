//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnode_sim::mem::{BuddyFreeLists, Pfn, MAX_ORDER, ORDER_COUNT};
use vnode_sim::reclaim::MemorySystem;
use vnode_sim::workload::Scenario;

/// Free-bitmap model of the allocator. Free blocks are recomputed from
/// scratch as the maximal aligned all-free blocks.
pub struct BitmapOracle {
    free: Vec<bool>,
    allocated: BTreeMap<Pfn, usize>,
}

impl BitmapOracle {
    pub fn new(frames: u64) -> Self {
        assert_eq!(frames % (1 << MAX_ORDER), 0);
        BitmapOracle {
            free: vec![true; frames as usize],
            allocated: BTreeMap::new(),
        }
    }

    fn collect(&self, start: usize, order: usize, out: &mut Vec<(Pfn, usize)>) {
        let len = 1 << order;
        if self.free[start..start + len].iter().all(|&f| f) {
            out.push((start as Pfn, order));
        } else if order > 0 {
            self.collect(start, order - 1, out);
            self.collect(start + len / 2, order - 1, out);
        }
    }

    pub fn maximal_blocks(&self) -> Vec<(Pfn, usize)> {
        let mut out = Vec::new();
        for top in (0..self.free.len()).step_by(1 << MAX_ORDER) {
            self.collect(top, MAX_ORDER, &mut out);
        }
        out
    }

    /// Smallest order that fits, lowest address within it; the allocation
    /// takes the low end of the chosen block.
    pub fn alloc(&mut self, order: usize) -> Option<Pfn> {
        let (pfn, _) = self
            .maximal_blocks()
            .into_iter()
            .filter(|&(_, o)| o >= order)
            .min_by_key(|&(p, o)| (o, p))?;
        for f in &mut self.free[pfn as usize..pfn as usize + (1 << order)] {
            *f = false;
        }
        self.allocated.insert(pfn, order);
        Some(pfn)
    }

    pub fn free(&mut self, pfn: Pfn, order: usize) -> bool {
        if self.allocated.get(&pfn) != Some(&order) {
            return false;
        }
        self.allocated.remove(&pfn);
        for f in &mut self.free[pfn as usize..pfn as usize + (1 << order)] {
            *f = true;
        }
        true
    }

    pub fn allocated(&self) -> Vec<(Pfn, usize)> {
        self.allocated.iter().map(|(&p, &o)| (p, o)).collect()
    }

    pub fn histogram(&self) -> [u64; ORDER_COUNT] {
        let mut h = [0; ORDER_COUNT];
        for (_, order) in self.maximal_blocks() {
            h[order] += 1;
        }
        h
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Alloc(usize),
    Free(usize),
}

/// Runs `ops` against both allocators and returns the first divergence.
pub fn divergence(frames: u64, ops: &[Op]) -> Option<String> {
    let mut buddy = BuddyFreeLists::new(0, frames);
    let mut oracle = BitmapOracle::new(frames);
    for (step, op) in ops.iter().enumerate() {
        match *op {
            Op::Alloc(order) => {
                let got = buddy.alloc_block(order).ok();
                let want = oracle.alloc(order);
                if got != want {
                    return Some(format!(
                        "step {step}: alloc order {order} gave {got:?}, oracle {want:?}"
                    ));
                }
            }
            Op::Free(pick) => {
                let live = oracle.allocated();
                if live.is_empty() {
                    continue;
                }
                let (pfn, order) = live[pick % live.len()];
                if buddy.free_block(pfn, order).is_err() || !oracle.free(pfn, order) {
                    return Some(format!("step {step}: free of {pfn}/{order} rejected"));
                }
            }
        }
        if buddy.free_frames()
            != oracle
                .histogram()
                .iter()
                .enumerate()
                .map(|(o, n)| n << o)
                .sum::<u64>()
        {
            return Some(format!("step {step}: free frame totals differ"));
        }
    }
    let (got, want) = (buddy.histogram(), oracle.histogram());
    (got != want).then(|| format!("final histograms differ: {got:?} vs {want:?}"))
}

pub fn random_ops(seed: u64, count: usize) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            if rng.gen_bool(0.55) {
                // Small orders dominate, as they do for page faults.
                let order = if rng.gen_bool(0.7) {
                    rng.gen_range(0..=2)
                } else {
                    rng.gen_range(0..=MAX_ORDER)
                };
                Op::Alloc(order)
            } else {
                Op::Free(rng.gen())
            }
        })
        .collect()
}

const TRUSTS: [&str; 4] = ["Trusted", "Untrusted", "ResponsiveAware", "TelecomBuiltin"];

/// A random but valid scenario over a small two- or three-node layout.
pub fn fuzz_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let node_count = rng.gen_range(2..=3);
    let mut layout = format!("ncpus=4 threshold={}K vnode=", rng.gen_range(1..=4) * 256);
    let mut total = 0;
    let mut classes = TRUSTS.to_vec();
    let mut routed = Vec::new();
    for i in 0..node_count {
        let mb = 4 * rng.gen_range(1..=3);
        total += mb;
        let take = if i + 1 == node_count {
            classes.len()
        } else {
            rng.gen_range(1..=classes.len() - (node_count - 1 - i))
        };
        let mine: Vec<&str> = classes.drain(..take).collect();
        routed.extend(mine.iter().copied());
        let sep = if i == 0 { "" } else { "," };
        let _ = write!(layout, "{sep}n{i}:{mb}M:{}", mine.join("+"));
        if rng.gen_bool(0.3) {
            let _ = write!(layout, ":cpus={}", rng.gen_range(0..4));
        }
    }
    let mut text = format!("total={total}M {layout}\nseed {seed}\n");
    let profile_count = rng.gen_range(3..=6);
    for p in 0..profile_count {
        let trust = routed[rng.gen_range(0..routed.len())];
        let _ = write!(
            text,
            "profile p{p} {trust} ws={} anon={:.2}",
            rng.gen_range(1..=800),
            rng.gen_range(0..=100) as f64 / 100.0
        );
        if rng.gen_bool(0.5) {
            let _ = write!(text, " order=random:{}", rng.gen_range(0..1000));
        }
        for flag in ["hw", "root"] {
            if rng.gen_bool(0.2) {
                let _ = write!(text, " {flag}");
            }
        }
        let _ = writeln!(
            text,
            " threads={} prio={}",
            rng.gen_range(1..=40),
            rng.gen_range(90..=139)
        );
    }

    let mut tick = 0u64;
    let mut spawned = 0u32;
    for _ in 0..rng.gen_range(40..=120) {
        tick += rng.gen_range(0..50_000);
        let roll = rng.gen_range(0..100);
        let line = if spawned == 0 || roll < 12 {
            spawned += 1;
            format!("SPAWN p{}", rng.gen_range(0..profile_count))
        } else {
            let pid = rng.gen_range(1..=spawned);
            match roll {
                12..=36 => format!("LAUNCH {pid}"),
                37..=56 => format!("BACKGROUND {pid}"),
                57..=61 => format!("EXIT {pid}"),
                62..=74 => format!(
                    "SEQREAD {pid} {}K {}",
                    rng.gen_range(1..=32) * 128,
                    rng.gen_range(1..=2)
                ),
                75..=89 => format!(
                    "ANONFILL {pid} {}K {}",
                    rng.gen_range(1..=24) * 128,
                    rng.gen_range(1..=2)
                ),
                90..=94 => format!(
                    "HOTPLUG {} {}",
                    rng.gen_range(0..4),
                    if rng.gen_bool(0.5) { "on" } else { "off" }
                ),
                _ => format!("SNAPSHOT s{tick}"),
            }
        };
        let _ = writeln!(text, "{tick} {line}");
    }
    Scenario::parse(&text)
        .unwrap_or_else(|e| panic!("fuzz seed {seed} produced an invalid scenario: {e}\n{text}"))
}

/// Pressure events whose victims live outside the event's node.
pub fn cross_node_events(system: &MemorySystem) -> usize {
    system
        .pressure_log()
        .iter()
        .filter(|e| {
            e.victims
                .iter()
                .any(|pid| system.process(*pid).map(|p| p.node_id) != Some(e.node))
        })
        .count()
}
