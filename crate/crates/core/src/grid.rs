//! Integer-aligned time grids.
//!
//! A grid over `[t_start, t_end]` with `m` subdivisions per unit interval has
//! nodes `t_k = t_start + k/m`. Nodes are stored as an integer part plus a
//! rational offset `j/m` with `0 <= j < m`, so integer nodes are exact and the
//! floor of a node never depends on floating-point rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Greatest integer `<= t`.
pub fn floor_anchor(t: f64) -> i64 {
    t.floor() as i64
}

/// A grid node `n + j/m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridNode {
    pub n: i64,
    pub j: u32,
    pub m: u32,
}

impl GridNode {
    pub fn t(&self) -> f64 {
        self.n as f64 + self.j as f64 / self.m as f64
    }

    /// Integer part, read from the exact representation.
    pub fn floor(&self) -> i64 {
        self.n
    }

    pub fn is_integer(&self) -> bool {
        self.j == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: i64,
    t_end: i64,
    m: u32,
}

impl TimeGrid {
    /// Builds a grid; the endpoints must be integers with `t_start < t_end`.
    pub fn new(t_start: f64, t_end: f64, m: u32) -> Result<Self> {
        if !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if t_start.fract() != 0.0 || t_end.fract() != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "endpoints must be integers, got [{t_start}, {t_end}]"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidGrid("subdivisions per unit must be >= 1".into()));
        }
        if t_start >= t_end {
            return Err(Error::InvalidGrid(format!(
                "t_start ({t_start}) must be below t_end ({t_end})"
            )));
        }
        Ok(Self {
            t_start: t_start as i64,
            t_end: t_end as i64,
            m,
        })
    }

    pub fn from_integers(t_start: i64, t_end: i64, m: u32) -> Result<Self> {
        Self::new(t_start as f64, t_end as f64, m)
    }

    pub fn t_start(&self) -> i64 {
        self.t_start
    }

    pub fn t_end(&self) -> i64 {
        self.t_end
    }

    pub fn subdivisions(&self) -> u32 {
        self.m
    }

    pub fn step(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Number of unit intervals `[n, n+1]` covered.
    pub fn intervals(&self) -> usize {
        (self.t_end - self.t_start) as usize
    }

    pub fn len(&self) -> usize {
        self.intervals() * self.m as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, k: usize) -> GridNode {
        let m = self.m as usize;
        GridNode {
            n: self.t_start + (k / m) as i64,
            j: (k % m) as u32,
            m: self.m,
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        self.node(k).t()
    }

    pub fn nodes(&self) -> impl Iterator<Item = GridNode> + '_ {
        (0..self.len()).map(|k| self.node(k))
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t(k)).collect()
    }

    /// Index of the node `n + j/m`; `j` may equal `m` (the next integer).
    pub fn index_of(&self, n: i64, j: u32) -> Option<usize> {
        let k = (n - self.t_start) * self.m as i64 + j as i64;
        (k >= 0 && (k as usize) < self.len()).then_some(k as usize)
    }

    pub fn index_of_integer(&self, n: i64) -> Option<usize> {
        self.index_of(n, 0)
    }

    /// Index of the node closest to `t`, if `t` lies on the grid to within
    /// `1e-9` of a step.
    pub fn locate(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start as f64) * self.m as f64;
        let k = x.round();
        if (x - k).abs() > 1e-9 || k < 0.0 || k as usize >= self.len() {
            return None;
        }
        Some(k as usize)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start as f64 && t <= self.t_end as f64
    }

    /// The same grid extended by `margin` unit intervals on both sides.
    pub fn widen(&self, margin: i64) -> Self {
        Self {
            t_start: self.t_start - margin,
            t_end: self.t_end + margin,
            m: self.m,
        }
    }

    /// Sub-grid with the same step; endpoints are clamped into this grid.
    pub fn sub(&self, t_start: i64, t_end: i64) -> Result<Self> {
        Self::from_integers(t_start.max(self.t_start), t_end.min(self.t_end), self.m)
    }
}
