use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::VnodeError;

/// Bitset over CPU ids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CpuMask(pub u64);

impl CpuMask {
    pub const CAPACITY: usize = 64;
    pub const EMPTY: CpuMask = CpuMask(0);

    pub fn all(count: usize) -> CpuMask {
        if count >= Self::CAPACITY {
            CpuMask(u64::MAX)
        } else {
            CpuMask((1u64 << count) - 1)
        }
    }

    pub fn from_cpus(cpus: impl IntoIterator<Item = usize>) -> CpuMask {
        CpuMask(cpus.into_iter().fold(0, |m, c| m | (1 << c)))
    }

    pub fn contains(self, cpu: usize) -> bool {
        cpu < Self::CAPACITY && self.0 & (1 << cpu) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn intersect(self, other: CpuMask) -> CpuMask {
        CpuMask(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..Self::CAPACITY).filter(move |&c| self.contains(c))
    }
}

/// Ranges joined by `;`, e.g. `0;2-3`.
impl fmt::Display for CpuMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cpus: Vec<usize> = self.iter().collect();
        let mut first = true;
        let mut i = 0;
        while i < cpus.len() {
            let mut j = i;
            while j + 1 < cpus.len() && cpus[j + 1] == cpus[j] + 1 {
                j += 1;
            }
            if !first {
                f.write_str(";")?;
            }
            first = false;
            if j > i {
                write!(f, "{}-{}", cpus[i], cpus[j])?;
            } else {
                write!(f, "{}", cpus[i])?;
            }
            i = j + 1;
        }
        Ok(())
    }
}

impl FromStr for CpuMask {
    type Err = VnodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VnodeError::Parse(format!("bad cpu list `{s}`"));
        let cpu = |t: &str| -> Result<usize, VnodeError> {
            t.parse::<usize>()
                .ok()
                .filter(|&c| c < Self::CAPACITY)
                .ok_or_else(bad)
        };
        let mut mask = CpuMask::EMPTY;
        for part in s.split(';') {
            match part.split_once('-') {
                Some((lo, hi)) => {
                    let (lo, hi) = (cpu(lo)?, cpu(hi)?);
                    if lo > hi {
                        return Err(bad());
                    }
                    mask = CpuMask(mask.0 | CpuMask::from_cpus(lo..=hi).0);
                }
                None => mask = CpuMask(mask.0 | (1 << cpu(part)?)),
            }
        }
        Ok(mask)
    }
}

/// Online flags for the actual CPUs of the device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpuState {
    online: Vec<bool>,
    online_count: usize,
}

impl CpuState {
    pub fn new(actual: usize) -> Self {
        CpuState {
            online: vec![true; actual],
            online_count: actual,
        }
    }

    pub fn actual_count(&self) -> usize {
        self.online.len()
    }

    pub fn online_count(&self) -> usize {
        self.online_count
    }

    pub fn online_mask(&self) -> CpuMask {
        CpuMask::from_cpus(
            self.online
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(c, _)| c),
        )
    }

    pub fn set_online(&mut self, cpu: usize, online: bool) -> Result<(), VnodeError> {
        let slot = self
            .online
            .get_mut(cpu)
            .ok_or(VnodeError::UnknownCpu(cpu))?;
        *slot = online;
        self.online_count = self.online.iter().filter(|&&on| on).count();
        Ok(())
    }

    pub fn validate(&self, mask: CpuMask) -> Result<(), VnodeError> {
        match mask.iter().find(|&c| c >= self.actual_count()) {
            Some(cpu) => Err(VnodeError::UnknownCpu(cpu)),
            None => Ok(()),
        }
    }

    /// `mask ∩ online`, where an empty mask means every online CPU.
    pub fn effective(&self, mask: CpuMask) -> CpuMask {
        if mask.is_empty() {
            self.online_mask()
        } else {
            mask.intersect(self.online_mask())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_text_round_trip() {
        for text in ["0", "0-1", "0;2-3", "1;3;5-7"] {
            let mask: CpuMask = text.parse().unwrap();
            assert_eq!(mask.to_string(), text);
        }
        assert!("3-1".parse::<CpuMask>().is_err());
        assert!("x".parse::<CpuMask>().is_err());
        assert!("64".parse::<CpuMask>().is_err());
    }

    #[test]
    fn counts_follow_hotplug() {
        let mut cpus = CpuState::new(2);
        assert_eq!((cpus.actual_count(), cpus.online_count()), (2, 2));
        cpus.set_online(1, false).unwrap();
        assert_eq!(cpus.online_count(), 1);
        cpus.set_online(1, false).unwrap();
        assert_eq!(cpus.online_count(), 1);
        cpus.set_online(1, true).unwrap();
        assert_eq!(cpus.online_count(), 2);
        assert_eq!(cpus.set_online(2, true), Err(VnodeError::UnknownCpu(2)));
    }

    #[test]
    fn effective_mask_is_intersection() {
        let mut cpus = CpuState::new(2);
        let both = CpuMask::from_cpus([0, 1]);
        assert_eq!(cpus.effective(both), both);
        cpus.set_online(1, false).unwrap();
        assert_eq!(cpus.effective(both), CpuMask::from_cpus([0]));
        assert!(cpus.effective(CpuMask::from_cpus([1])).is_empty());
        assert_eq!(cpus.effective(CpuMask::EMPTY), CpuMask::from_cpus([0]));
        assert_eq!(
            cpus.validate(CpuMask::from_cpus([5])),
            Err(VnodeError::UnknownCpu(5))
        );
    }
}
