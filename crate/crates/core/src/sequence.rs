use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Values `u(n)` for every integer `n` in `[n_min, n_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    n_min: i64,
    values: Vec<Vector>,
}

impl SequenceWindow {
    pub fn new(n_min: i64, values: Vec<Vector>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSpec("sequence window is empty".into()));
        }
        let q = values[0].len();
        if let Some(bad) = values.iter().find(|v| v.len() != q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: bad.len(),
                context: "sequence window entries".into(),
            });
        }
        Ok(Self { n_min, values })
    }

    pub fn from_fn<F: FnMut(i64) -> Vector>(n_min: i64, n_max: i64, mut f: F) -> Result<Self> {
        Self::new(n_min, (n_min..=n_max).map(&mut f).collect())
    }

    pub fn scalar<F: FnMut(i64) -> f64>(n_min: i64, n_max: i64, mut f: F) -> Result<Self> {
        Self::from_fn(n_min, n_max, |n| Vector::from_element(1, f(n)))
    }

    pub fn constant(n_min: i64, n_max: i64, value: Vector) -> Result<Self> {
        Self::from_fn(n_min, n_max, |_| value.clone())
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    pub fn n_max(&self) -> i64 {
        self.n_min + self.values.len() as i64 - 1
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.n_min && n <= self.n_max()
    }

    pub fn get(&self, n: i64) -> Option<&Vector> {
        if self.contains(n) {
            Some(&self.values[(n - self.n_min) as usize])
        } else {
            None
        }
    }

    /// Panics outside the window.
    pub fn at(&self, n: i64) -> &Vector {
        self.get(n)
            .unwrap_or_else(|| panic!("index {n} outside [{}, {}]", self.n_min, self.n_max()))
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Vector)> {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.n_min + i as i64, v))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn restrict(&self, n_min: i64, n_max: i64) -> Result<Self> {
        if n_min < self.n_min || n_max > self.n_max() || n_min > n_max {
            return Err(Error::WindowTooSmall {
                have_min: self.n_min,
                have_max: self.n_max(),
                need_min: n_min,
                need_max: n_max,
                context: "sequence restriction".into(),
            });
        }
        Ok(Self {
            n_min,
            values: self.values[(n_min - self.n_min) as usize..=(n_max - self.n_min) as usize].to_vec(),
        })
    }

    /// `max_n |self(n) - other(n)|` over the common window.
    pub fn distance(&self, other: &Self) -> f64 {
        let lo = self.n_min.max(other.n_min);
        let hi = self.n_max().min(other.n_max());
        (lo..=hi)
            .map(|n| (self.at(n) - other.at(n)).norm())
            .fold(0.0, f64::max)
    }
}
