//! Physical frames and the per-node buddy allocator.

mod buddy;

pub use buddy::{buddyinfo_line, BuddyError, BuddyFreeLists, MAX_ORDER, ORDER_COUNT};

use serde::{Deserialize, Serialize};

use crate::{NodeId, Pid, Tick};

/// Frame index, in units of 4 KB frames.
pub type Pfn = u64;

pub const PAGE_SIZE: u64 = 4096;

/// Frames in one max-order block (4 MB).
pub const MAX_BLOCK_FRAMES: u64 = 1 << MAX_ORDER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameState {
    Free,
    Anonymous,
    PageCache,
    Reserved,
}

pub type FileId = u64;

/// What a resident frame holds on behalf of its owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PageKey {
    /// Heap or stack page at a page offset in the owner's anonymous space.
    Anon(u64),
    /// Page `offset` of file `file`.
    File(FileId, u64),
}

impl PageKey {
    pub fn is_anon(&self) -> bool {
        matches!(self, PageKey::Anon(_))
    }
}

#[derive(Debug, Clone)]
pub struct PageFrame {
    pub pfn: Pfn,
    pub node_id: NodeId,
    pub state: FrameState,
    pub owner_pid: Option<Pid>,
    pub key: Option<PageKey>,
    pub last_access_tick: Tick,
}

impl PageFrame {
    pub fn new(pfn: Pfn, node_id: NodeId) -> Self {
        PageFrame {
            pfn,
            node_id,
            state: FrameState::Free,
            owner_pid: None,
            key: None,
            last_access_tick: 0,
        }
    }

    pub fn file_ref(&self) -> Option<(FileId, u64)> {
        match self.key {
            Some(PageKey::File(file, offset)) if self.state == FrameState::PageCache => {
                Some((file, offset))
            }
            _ => None,
        }
    }

    pub fn release(&mut self) {
        self.state = FrameState::Free;
        self.owner_pid = None;
        self.key = None;
    }
}

pub fn bytes_to_frames(bytes: u64) -> u64 {
    bytes / PAGE_SIZE
}

pub fn frames_to_bytes(frames: u64) -> u64 {
    frames * PAGE_SIZE
}
