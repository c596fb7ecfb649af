use std::collections::BTreeMap;

/// Work measured in units of `h^{-1}` per forward solve, plus the number of
/// solves charged at each mesh level.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostLedger {
    total_units: u64,
    solves: BTreeMap<u32, u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Charge `count` forward solves at `mesh_level` (each costs `2^mesh_level`).
    pub fn charge(&mut self, mesh_level: u32, count: u64) {
        if count == 0 {
            return;
        }
        self.total_units += count << mesh_level;
        *self.solves.entry(mesh_level).or_insert(0) += count;
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.total_units += other.total_units;
        for (&lvl, &n) in &other.solves {
            *self.solves.entry(lvl).or_insert(0) += n;
        }
    }

    pub fn total_units(&self) -> u64 {
        self.total_units
    }

    pub fn solves_at(&self, mesh_level: u32) -> u64 {
        self.solves.get(&mesh_level).copied().unwrap_or(0)
    }

    pub fn per_level(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.solves.iter().map(|(&l, &n)| (l, n))
    }
}
