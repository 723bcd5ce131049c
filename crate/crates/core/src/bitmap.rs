//! Offset bitmap: `P` equal parts of 2-byte cells. A nonzero cell holds a
//! 1-based token into its part's entry store, so `0` always means empty.

use crate::error::{Error, Result};

pub const DEFAULT_PARTS: usize = 1000;
/// Simulated bytes per stored entry, used only for address arithmetic.
pub const DEFAULT_ENTRY_SIZE: u64 = 8;
/// Largest token a 2-byte cell can hold, hence the per-part entry limit.
pub const PART_CAPACITY: usize = u16::MAX as usize;
pub const CELL_BYTES: usize = 2;

/// `min(floor(cdf * slots_per_part), slots_per_part - 1)`.
#[inline]
pub fn slot_of(cdf: f64, slots_per_part: usize) -> usize {
    debug_assert!(slots_per_part >= 1);
    // `as` saturates negatives and NaN to 0
    ((cdf * slots_per_part as f64).floor() as usize).min(slots_per_part - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnhancedBitmap {
    parts: usize,
    slots_per_part: usize,
    cells: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The entry was stored; the cell now holds this token.
    Inserted(u16),
    /// The cell was already taken; nothing changed.
    Collision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe<'a, E> {
    Hit { address: u64, entry: &'a E },
    Miss,
}

impl<E> Probe<'_, E> {
    pub fn is_hit(&self) -> bool {
        matches!(self, Probe::Hit { .. })
    }

    pub fn entry(&self) -> Option<&E> {
        match self {
            Probe::Hit { entry, .. } => Some(entry),
            Probe::Miss => None,
        }
    }
}

impl EnhancedBitmap {
    /// Splits `total_slots` into `parts` equal parts, rounding the part size
    /// up when the division is inexact.
    pub fn new(parts: usize, total_slots: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::Config("bitmap needs at least one part".into()));
        }
        if total_slots == 0 {
            return Err(Error::Config("bitmap needs at least one slot".into()));
        }
        let slots_per_part = total_slots.div_ceil(parts);
        Ok(EnhancedBitmap {
            parts,
            slots_per_part,
            cells: vec![0; parts * slots_per_part],
        })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn slots_per_part(&self) -> usize {
        self.slots_per_part
    }

    pub fn total_slots(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn slot_of(&self, cdf: f64) -> usize {
        slot_of(cdf, self.slots_per_part)
    }

    #[inline]
    pub fn global_slot(&self, part: usize, slot: usize) -> usize {
        assert!(
            part < self.parts && slot < self.slots_per_part,
            "bitmap index out of range"
        );
        part * self.slots_per_part + slot
    }

    #[inline]
    pub fn cell(&self, part: usize, slot: usize) -> u16 {
        self.cells[self.global_slot(part, slot)]
    }

    pub fn occupied_slots(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn empty_slot_ratio(&self) -> f64 {
        1.0 - self.occupied_slots() as f64 / self.cells.len() as f64
    }

    pub fn memory_bytes(&self) -> usize {
        self.cells.len() * CELL_BYTES
    }

    /// Stores `entry` at `(part, slot)` unless the cell is taken.
    pub fn insert<E>(
        &mut self,
        store: &mut PartedStore<E>,
        part: usize,
        slot: usize,
        entry: E,
    ) -> Result<InsertOutcome> {
        let at = self.global_slot(part, slot);
        if self.cells[at] != 0 {
            return Ok(InsertOutcome::Collision);
        }
        let token = store.push(part, entry)?;
        self.cells[at] = token;
        Ok(InsertOutcome::Inserted(token))
    }

    #[inline]
    pub fn lookup<'s, E>(
        &self,
        store: &'s PartedStore<E>,
        part: usize,
        slot: usize,
    ) -> Probe<'s, E> {
        match self.cells[self.global_slot(part, slot)] {
            0 => Probe::Miss,
            token => {
                let index = token as usize - 1;
                Probe::Hit {
                    address: store.address(part, index),
                    entry: &store.parts[part][index],
                }
            }
        }
    }

    /// Checks that each part's tokens are distinct and within its store.
    pub fn check_tokens<E>(&self, store: &PartedStore<E>) -> std::result::Result<(), String> {
        for (part, cells) in self.cells.chunks(self.slots_per_part).enumerate() {
            let count = store.entry_count(part);
            let mut seen = vec![false; count + 1];
            for &token in cells.iter().filter(|&&c| c != 0) {
                let t = token as usize;
                if t > count {
                    return Err(format!("part {part}: token {t} exceeds {count} entries"));
                }
                if std::mem::replace(&mut seen[t], true) {
                    return Err(format!("part {part}: token {t} used twice"));
                }
            }
        }
        Ok(())
    }
}

/// Append-only per-part entry lists with simulated base addresses. Each part
/// reserves room for [`PART_CAPACITY`] entries so address ranges never
/// overlap.
#[derive(Clone, Debug)]
pub struct PartedStore<E> {
    parts: Vec<Vec<E>>,
    entry_size: u64,
}

impl<E> PartedStore<E> {
    pub fn new(parts: usize) -> Self {
        Self::with_entry_size(parts, DEFAULT_ENTRY_SIZE)
    }

    pub fn with_entry_size(parts: usize, entry_size: u64) -> Self {
        PartedStore {
            parts: (0..parts).map(|_| Vec::new()).collect(),
            entry_size,
        }
    }

    pub fn entry_size(&self) -> u64 {
        self.entry_size
    }

    pub fn entry_count(&self, part: usize) -> usize {
        self.parts[part].len()
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn base_addr(&self, part: usize) -> u64 {
        part as u64 * PART_CAPACITY as u64 * self.entry_size
    }

    #[inline]
    fn address(&self, part: usize, index: usize) -> u64 {
        self.base_addr(part) + index as u64 * self.entry_size
    }

    pub fn entries(&self, part: usize) -> &[E] {
        &self.parts[part]
    }

    fn push(&mut self, part: usize, entry: E) -> Result<u16> {
        let list = &mut self.parts[part];
        if list.len() >= PART_CAPACITY {
            return Err(Error::PartFull {
                part,
                capacity: PART_CAPACITY,
            });
        }
        list.push(entry);
        Ok(list.len() as u16)
    }
}
