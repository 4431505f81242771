//! Slice-feature memory bank.
//!
//! Stores fused image/mask token features from previously segmented slices.
//! Capacity-bounded FIFO with one twist: prompted entries (from slices the
//! user actually clicked on) outrank unprompted ones, so propagation can run
//! indefinitely without the original prompts being flushed by its own
//! predictions.

use ndarray::Array2;

/// Fused features of one previously segmented slice.
#[derive(Clone, Debug)]
pub struct MemoryEntry {
    /// T × embed_dim token features.
    pub tokens: Array2<f64>,
    pub slice_index: usize,
    /// Whether the source slice carried user prompts.
    pub prompted: bool,
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    capacity: usize,
    entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> MemoryBank {
        assert!(capacity >= 1, "memory capacity must be at least 1");
        MemoryBank { capacity, entries: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest-first view of the stored entries.
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Append an entry; over capacity, evict the oldest unprompted entry, or
    /// the oldest prompted one if no unprompted entry remains.
    pub fn push(&mut self, entry: MemoryEntry) {
        self.entries.push(entry);
        if self.entries.len() > self.capacity {
            let victim = self
                .entries
                .iter()
                .position(|e| !e.prompted)
                .unwrap_or(0);
            self.entries.remove(victim);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(slice_index: usize, prompted: bool) -> MemoryEntry {
        MemoryEntry { tokens: Array2::zeros((2, 2)), slice_index, prompted }
    }

    fn slices(bank: &MemoryBank) -> Vec<usize> {
        bank.entries().iter().map(|e| e.slice_index).collect()
    }

    #[test]
    fn fifo_when_all_unprompted() {
        let mut bank = MemoryBank::new(2);
        for i in 0..3 {
            bank.push(entry(i, false));
        }
        assert_eq!(slices(&bank), vec![1, 2]);
    }

    #[test]
    fn unprompted_evicted_before_prompted() {
        let mut bank = MemoryBank::new(2);
        bank.push(entry(0, true));
        bank.push(entry(1, false));
        bank.push(entry(2, false));
        assert_eq!(slices(&bank), vec![0, 2]);
        assert!(bank.entries()[0].prompted);
    }

    #[test]
    fn all_prompted_keeps_most_recent() {
        let mut bank = MemoryBank::new(1);
        bank.push(entry(0, true));
        bank.push(entry(1, true));
        assert_eq!(slices(&bank), vec![1]);
    }

    #[test]
    fn retention_policy_under_arbitrary_push_sequences() {
        use crate::rng::Rng;
        let mut rng = Rng::from_tags(31, &[7]);
        for capacity in [1usize, 3, 8] {
            let mut bank = MemoryBank::new(capacity);
            let mut pushed_prompted = 0usize;
            for i in 0..100 {
                let prompted = rng.coin(0.4);
                pushed_prompted += prompted as usize;
                bank.push(entry(i, prompted));
                assert!(bank.len() <= capacity, "capacity bound");
                // A prompted entry may only be missing if prompted pushes
                // alone exceeded capacity.
                let held_prompted = bank.entries().iter().filter(|e| e.prompted).count();
                assert_eq!(held_prompted, pushed_prompted.min(capacity).min(bank.len()));
                // Entries stay in insertion order.
                assert!(bank
                    .entries()
                    .windows(2)
                    .all(|w| w[0].slice_index < w[1].slice_index));
            }
        }
    }
}
