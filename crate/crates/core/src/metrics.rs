//! Slot-occupancy statistics shared by the learned index and the baselines.

use crate::error::{Error, Result};

/// Result of dropping `inserts` keys into `slots` cells without chaining.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occupancy {
    pub slots: usize,
    pub inserts: usize,
    pub occupied: usize,
}

impl Occupancy {
    /// Keys that landed on an already occupied cell.
    pub fn collisions(&self) -> usize {
        self.inserts - self.occupied
    }

    pub fn empty_slot_ratio(&self) -> f64 {
        1.0 - self.occupied as f64 / self.slots as f64
    }

    /// Build-set false-positive probability: collisions over inserts.
    pub fn fp_probability(&self) -> f64 {
        if self.inserts == 0 {
            0.0
        } else {
            self.collisions() as f64 / self.inserts as f64
        }
    }

    pub fn load_factor(&self) -> f64 {
        self.inserts as f64 / self.slots as f64
    }
}

/// Reusable bit set for counting distinct slots.
#[derive(Clone, Debug, Default)]
pub struct SlotCounter {
    bits: Vec<u64>,
}

impl SlotCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts distinct values among `slots`, each of which must be below
    /// `total`.
    pub fn count(&mut self, total: usize, slots: impl IntoIterator<Item = usize>) -> Occupancy {
        let words = total.div_ceil(64);
        self.bits.clear();
        self.bits.resize(words, 0);
        let mut inserts = 0;
        let mut occupied = 0;
        for s in slots {
            assert!(s < total, "slot {s} out of range {total}");
            let (w, b) = (s / 64, s % 64);
            let mask = 1u64 << b;
            if self.bits[w] & mask == 0 {
                self.bits[w] |= mask;
                occupied += 1;
            }
            inserts += 1;
        }
        Occupancy {
            slots: total,
            inserts,
            occupied,
        }
    }
}

pub fn occupancy(total: usize, slots: impl IntoIterator<Item = usize>) -> Occupancy {
    SlotCounter::new().count(total, slots)
}

/// Smallest multiple of `granularity` (at most `cap`) whose false-positive
/// probability, as reported by `fp_at`, is at or below `target`.
///
/// Gallops upward by doubling until the target is met, then bisects the last
/// bracket. When `fp_at` is monotone this is the exact answer; for noisy
/// mappings it is the smallest passing point inside the bracket.
pub fn slots_required(
    target: f64,
    granularity: usize,
    cap: usize,
    mut fp_at: impl FnMut(usize) -> Result<f64>,
) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!(
            "false-positive target {target} must be in (0, 1]"
        )));
    }
    if granularity == 0 {
        return Err(Error::Config("granularity must be at least 1".into()));
    }
    let max_steps = cap / granularity;
    if max_steps == 0 {
        return Err(Error::TargetUnreachable { target, cap });
    }
    let mut passes = |steps: usize| -> Result<bool> { Ok(fp_at(steps * granularity)? <= target) };

    let mut lo = 0usize; // largest step known to fail (0 = none tried)
    let mut hi = 1usize;
    loop {
        if passes(hi)? {
            break;
        }
        lo = hi;
        if hi == max_steps {
            return Err(Error::TargetUnreachable { target, cap });
        }
        hi = (hi * 2).min(max_steps);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * granularity)
}
