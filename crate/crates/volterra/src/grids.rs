//! Uniform time grids.
//!
//! All simulation schemes in this crate are built on a uniform partition of
//! `[0, T]`.  The step is stored once at construction so that every consumer
//! sees the exact same floating-point value (recomputing `T / n` in several
//! places would be bitwise identical anyway, but storing it makes the
//! dependency explicit and lets fingerprints hash a single number).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_max: f64,
    pub n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Self {
        assert!(t_max > 0.0 && n_steps > 0, "time grid needs T > 0 and at least one step");
        Self { t_max, n_steps, dt: t_max / n_steps as f64 }
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node `t_i = i Δt` for `i = 0..=n_steps`.
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |i| self.node(i))
    }

    /// Grid with the same horizon and `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self::new(self.t_max, self.n_steps * factor)
    }

    /// Index of the node equal to `t` (within one part in 1e-9 of a step).
    /// Operations that restart mid-path use this to reject off-grid times.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = (t / self.dt).round();
        if i < 0.0 || i > self.n_steps as f64 {
            return None;
        }
        let i = i as usize;
        ((t - self.node(i)).abs() <= 1e-9 * self.dt).then_some(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_cover_interval() {
        let g = TimeGrid::new(2.0, 8);
        assert_eq!(g.n_nodes(), 9);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(8), 2.0);
        assert!((g.dt() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn index_of_rejects_off_grid_times() {
        let g = TimeGrid::new(1.0, 10);
        assert_eq!(g.index_of(0.3), Some(3));
        assert_eq!(g.index_of(0.35), None);
        assert_eq!(g.index_of(-0.1), None);
        assert_eq!(g.index_of(1.2), None);
    }
}
