//! Binary buddy allocator over one node's frame range.
//!
//! Free blocks are kept in one ordered set per order so that the lowest
//! address at a given order is always the first element. Allocation takes
//! the smallest order that has a free block, then the lowest address in that
//! order, and splits downwards keeping the upper half free at every step.
//! Frees coalesce eagerly, so no buddy pair is ever free at the same order.

use std::collections::BTreeSet;

use thiserror::Error;

use super::Pfn;

/// Largest block order. Blocks range from 1 to 1024 frames.
pub const MAX_ORDER: usize = 10;

/// Number of orders tracked (`0..=MAX_ORDER`).
pub const ORDER_COUNT: usize = MAX_ORDER + 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuddyError {
    #[error("order {0} exceeds the maximum order {MAX_ORDER}")]
    InvalidOrder(usize),
    #[error("no free block of order {order} or larger")]
    NoBlockAvailable { order: usize },
    #[error("block at pfn {pfn} (order {order}) is already partly or wholly free")]
    DoubleFree { pfn: Pfn, order: usize },
    #[error("block at pfn {pfn} is not aligned to order {order}")]
    MisalignedFree { pfn: Pfn, order: usize },
    #[error("block at pfn {pfn} (order {order}) is outside this node")]
    OutOfNode { pfn: Pfn, order: usize },
}

/// Per-order free lists plus a free bitmap for one contiguous frame range.
#[derive(Debug, Clone)]
pub struct BuddyFreeLists {
    base: Pfn,
    frames: u64,
    lists: [BTreeSet<Pfn>; ORDER_COUNT],
    free: Vec<bool>,
    free_frames: u64,
    splits: u64,
    merges: u64,
}

impl BuddyFreeLists {
    /// All `frames` frames starting at `base` are free.
    pub fn new(base: Pfn, frames: u64) -> Self {
        Self::with_reserved(base, frames, 0)
    }

    /// The first `reserved` frames are held back and never enter the lists.
    pub fn with_reserved(base: Pfn, frames: u64, reserved: u64) -> Self {
        let reserved = reserved.min(frames);
        let mut buddy = BuddyFreeLists {
            base,
            frames,
            lists: Default::default(),
            free: vec![false; frames as usize],
            free_frames: 0,
            splits: 0,
            merges: 0,
        };
        let mut offset = reserved;
        while offset < frames {
            let mut order = MAX_ORDER;
            while order > 0 && (!offset.is_multiple_of(1 << order) || offset + (1 << order) > frames) {
                order -= 1;
            }
            buddy.lists[order].insert(base + offset);
            buddy.mark(base + offset, order, true);
            buddy.free_frames += 1 << order;
            offset += 1 << order;
        }
        buddy
    }

    pub fn base(&self) -> Pfn {
        self.base
    }

    pub fn frame_count(&self) -> u64 {
        self.frames
    }

    pub fn free_frames(&self) -> u64 {
        self.free_frames
    }

    /// Cumulative number of block splits performed by allocations.
    pub fn splits(&self) -> u64 {
        self.splits
    }

    /// Cumulative number of buddy merges performed by frees.
    pub fn merges(&self) -> u64 {
        self.merges
    }

    pub fn is_free(&self, pfn: Pfn) -> bool {
        pfn >= self.base && pfn < self.base + self.frames && self.free[(pfn - self.base) as usize]
    }

    /// Start pfns of the free blocks currently held at `order`, ascending.
    pub fn blocks(&self, order: usize) -> impl Iterator<Item = Pfn> + '_ {
        self.lists[order].iter().copied()
    }

    /// Whether some free block of at least `order` exists.
    pub fn can_allocate(&self, order: usize) -> bool {
        order <= MAX_ORDER && self.lists[order..].iter().any(|l| !l.is_empty())
    }

    pub fn alloc_block(&mut self, order: usize) -> Result<Pfn, BuddyError> {
        if order > MAX_ORDER {
            return Err(BuddyError::InvalidOrder(order));
        }
        let (mut current, pfn) = (order..=MAX_ORDER)
            .find_map(|o| self.lists[o].first().map(|&pfn| (o, pfn)))
            .ok_or(BuddyError::NoBlockAvailable { order })?;
        self.lists[current].remove(&pfn);
        while current > order {
            current -= 1;
            self.lists[current].insert(pfn + (1 << current));
            self.splits += 1;
        }
        self.mark(pfn, order, false);
        self.free_frames -= 1 << order;
        Ok(pfn)
    }

    pub fn free_block(&mut self, pfn: Pfn, order: usize) -> Result<(), BuddyError> {
        if order > MAX_ORDER {
            return Err(BuddyError::InvalidOrder(order));
        }
        let size = 1u64 << order;
        if pfn < self.base || pfn + size > self.base + self.frames {
            return Err(BuddyError::OutOfNode { pfn, order });
        }
        if !(pfn - self.base).is_multiple_of(size) {
            return Err(BuddyError::MisalignedFree { pfn, order });
        }
        let start = (pfn - self.base) as usize;
        if self.free[start..start + size as usize].iter().any(|&f| f) {
            return Err(BuddyError::DoubleFree { pfn, order });
        }
        self.mark(pfn, order, true);
        self.free_frames += size;

        let mut block = pfn;
        let mut current = order;
        while current < MAX_ORDER {
            let buddy = self.base + ((block - self.base) ^ (1 << current));
            if buddy + (1 << current) > self.base + self.frames
                || !self.lists[current].remove(&buddy)
            {
                break;
            }
            block = block.min(buddy);
            current += 1;
            self.merges += 1;
        }
        self.lists[current].insert(block);
        Ok(())
    }

    /// Free-block count per order.
    pub fn histogram(&self) -> [u64; ORDER_COUNT] {
        let mut counts = [0u64; ORDER_COUNT];
        for (order, list) in self.lists.iter().enumerate() {
            counts[order] = list.len() as u64;
        }
        counts
    }

    /// Full structural check of the free lists against the bitmap.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut covered = vec![false; self.frames as usize];
        let mut total = 0u64;
        for (order, list) in self.lists.iter().enumerate() {
            let size = 1u64 << order;
            for &pfn in list {
                if pfn < self.base || pfn + size > self.base + self.frames {
                    return Err(format!("block {pfn}/{order} crosses the node boundary"));
                }
                let offset = pfn - self.base;
                if !offset.is_multiple_of(size) {
                    return Err(format!("block {pfn}/{order} is misaligned"));
                }
                for i in offset..offset + size {
                    if covered[i as usize] {
                        return Err(format!("frame {} covered twice", self.base + i));
                    }
                    covered[i as usize] = true;
                }
                if order < MAX_ORDER {
                    let buddy = self.base + (offset ^ size);
                    if list.contains(&buddy) {
                        return Err(format!(
                            "buddies {pfn} and {buddy} both free at order {order}"
                        ));
                    }
                }
                total += size;
            }
        }
        if covered != self.free {
            return Err("free bitmap disagrees with free lists".into());
        }
        if total != self.free_frames {
            return Err(format!(
                "free count {} but lists hold {total}",
                self.free_frames
            ));
        }
        Ok(())
    }

    fn mark(&mut self, pfn: Pfn, order: usize, free: bool) {
        let start = (pfn - self.base) as usize;
        self.free[start..start + (1 << order)].fill(free);
    }
}

/// One `/proc/buddyinfo`-style line: `Node <id>, <label>: c0 c1 ... c10`.
pub fn buddyinfo_line(node_id: usize, label: &str, histogram: &[u64]) -> String {
    let counts: Vec<String> = histogram.iter().map(u64::to_string).collect();
    format!("Node {node_id}, {label}: {}", counts.join(" "))
}
