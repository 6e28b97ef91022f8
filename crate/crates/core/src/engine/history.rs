//! Circular exposure history sized to the maximum delay horizon.
//!
//! One buffer of [horizon][n_regions] per exposure, stored contiguously so
//! a delayed read is one slot lookup plus a region offset. Reads always see
//! committed data: writes for a step are staged outside the ring and enter
//! it in a single `commit` after all of the step's reads are done.

#[derive(Debug, Clone)]
pub struct HistoryRing {
    n_regions: usize,
    n_exposures: usize,
    horizon: usize,
    /// [exposure][slot][region]
    data: Vec<f64>,
    /// Slot holding the most recently committed step.
    cursor: usize,
}

impl HistoryRing {
    pub fn new(n_exposures: usize, horizon: usize, n_regions: usize) -> Self {
        assert!(horizon >= 1 && n_exposures >= 1);
        HistoryRing {
            n_regions,
            n_exposures,
            horizon,
            data: vec![0.0; n_exposures * horizon * n_regions],
            cursor: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_exposures(&self) -> usize {
        self.n_exposures
    }

    /// Pre-fills every slot with per-region values (region-major layout
    /// `initial[region * n_exposures + exposure]`).
    pub fn fill(&mut self, initial: &[f64]) {
        assert_eq!(initial.len(), self.n_regions * self.n_exposures);
        for e in 0..self.n_exposures {
            for slot in 0..self.horizon {
                let base = self.index(e, slot, 0);
                for i in 0..self.n_regions {
                    self.data[base + i] = initial[i * self.n_exposures + e];
                }
            }
        }
    }

    #[inline]
    fn index(&self, exposure: usize, slot: usize, region: usize) -> usize {
        (exposure * self.horizon + slot) * self.n_regions + region
    }

    /// Slot that holds the value committed `delay` steps ago.
    #[inline]
    pub fn slot_of(&self, delay: usize) -> usize {
        debug_assert!(delay < self.horizon);
        (self.cursor + self.horizon - delay) % self.horizon
    }

    /// The exposure value committed exactly `delay` steps ago (delay 0 is
    /// the most recently committed step).
    #[inline]
    pub fn read(&self, exposure: usize, region: usize, delay: usize) -> f64 {
        self.data[self.index(exposure, self.slot_of(delay), region)]
    }

    /// Region-contiguous row of one exposure at one slot; pair with
    /// `slot_of`/`slot_table` for bulk delayed reads.
    #[inline]
    pub fn row(&self, exposure: usize, slot: usize) -> &[f64] {
        let base = self.index(exposure, slot, 0);
        &self.data[base..base + self.n_regions]
    }

    /// Fills `table[d]` with the slot for delay d, for the current cursor.
    pub fn slot_table(&self, table: &mut Vec<usize>) {
        table.clear();
        table.extend((0..self.horizon).map(|d| self.slot_of(d)));
    }

    /// Commits one step of exposures (region-major staging layout
    /// `staged[region * n_exposures + exposure]`) and advances the cursor.
    pub fn commit(&mut self, staged: &[f64]) {
        assert_eq!(staged.len(), self.n_regions * self.n_exposures);
        let next = (self.cursor + 1) % self.horizon;
        for e in 0..self.n_exposures {
            let base = self.index(e, next, 0);
            for i in 0..self.n_regions {
                self.data[base + i] = staged[i * self.n_exposures + e];
            }
        }
        self.cursor = next;
    }
}
