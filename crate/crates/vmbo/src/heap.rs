//! Indexed binary min-heap keyed by `(f64, id)`.
//!
//! The order-statistic solvers keep one heap per ordered cluster pair and
//! need to delete arbitrary points when they change cluster, so the heap
//! carries a position map from point id to slot. Keys compare by
//! `f64::total_cmp` first and id second, which makes every ordering
//! decision deterministic.

/// Min-heap over `(key, id)` pairs with O(log n) removal by id.
///
/// Ids must be dense in `0..capacity`. Each id may be present at most
/// once.
pub(crate) struct IndexedMinHeap {
    entries: Vec<(f64, u32)>,
    /// Maps id to slot + 1; 0 means absent.
    pos: Vec<u32>,
}

#[inline]
fn less(a: (f64, u32), b: (f64, u32)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.1 < b.1,
    }
}

impl IndexedMinHeap {
    pub fn new(capacity: usize) -> Self {
        IndexedMinHeap {
            entries: Vec::new(),
            pos: vec![0; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[allow(dead_code)] // standard companion to len
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn peek(&self) -> Option<(f64, u32)> {
        self.entries.first().copied()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.pos[id as usize] != 0
    }

    pub fn key_of(&self, id: u32) -> Option<f64> {
        let slot = self.pos[id as usize];
        if slot == 0 {
            None
        } else {
            Some(self.entries[slot as usize - 1].0)
        }
    }

    pub fn insert(&mut self, key: f64, id: u32) {
        debug_assert!(!self.contains(id), "id {id} inserted twice");
        let slot = self.entries.len();
        self.entries.push((key, id));
        self.pos[id as usize] = slot as u32 + 1;
        self.sift_up(slot);
    }

    /// Removes `id` if present; returns whether it was.
    pub fn remove(&mut self, id: u32) -> bool {
        let slot = self.pos[id as usize];
        if slot == 0 {
            return false;
        }
        let slot = slot as usize - 1;
        let last = self.entries.len() - 1;
        self.pos[id as usize] = 0;
        if slot != last {
            let moved = self.entries[last];
            self.entries[slot] = moved;
            self.pos[moved.1 as usize] = slot as u32 + 1;
            self.entries.truncate(last);
            // The replacement can violate either direction.
            self.sift_down(slot);
            self.sift_up(self.pos[moved.1 as usize].saturating_sub(1) as usize);
        } else {
            self.entries.truncate(last);
        }
        true
    }

    /// Replaces the whole content in O(n) (Floyd heapify).
    pub fn rebuild(&mut self, entries: Vec<(f64, u32)>) {
        for &(_, id) in &self.entries {
            self.pos[id as usize] = 0;
        }
        self.entries = entries;
        for (slot, &(_, id)) in self.entries.iter().enumerate() {
            debug_assert_eq!(self.pos[id as usize], 0, "id {id} appears twice in rebuild");
            self.pos[id as usize] = slot as u32 + 1;
        }
        if self.entries.len() > 1 {
            for slot in (0..self.entries.len() / 2).rev() {
                self.sift_down(slot);
            }
        }
    }

    fn sift_up(&mut self, mut slot: usize) {
        while slot > 0 {
            let parent = (slot - 1) / 2;
            if less(self.entries[slot], self.entries[parent]) {
                self.swap_slots(slot, parent);
                slot = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut slot: usize) {
        let n = self.entries.len();
        loop {
            let left = 2 * slot + 1;
            if left >= n {
                break;
            }
            let right = left + 1;
            let mut best = left;
            if right < n && less(self.entries[right], self.entries[left]) {
                best = right;
            }
            if less(self.entries[best], self.entries[slot]) {
                self.swap_slots(slot, best);
                slot = best;
            } else {
                break;
            }
        }
    }

    fn swap_slots(&mut self, a: usize, b: usize) {
        self.entries.swap(a, b);
        self.pos[self.entries[a].1 as usize] = a as u32 + 1;
        self.pos[self.entries[b].1 as usize] = b as u32 + 1;
    }

    /// Checks heap order and position-map consistency. Test support.
    #[cfg(test)]
    fn validate(&self) {
        for slot in 1..self.entries.len() {
            let parent = (slot - 1) / 2;
            assert!(
                !less(self.entries[slot], self.entries[parent]),
                "heap order violated at slot {slot}"
            );
        }
        for (slot, &(_, id)) in self.entries.iter().enumerate() {
            assert_eq!(self.pos[id as usize] as usize, slot + 1);
        }
        let present = self.pos.iter().filter(|&&p| p != 0).count();
        assert_eq!(present, self.entries.len());
    }
}
