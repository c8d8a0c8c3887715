//! Flat storage for finite point sets in `R^d`.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A finite, ordered set of points of a common dimension, stored
/// row-major in one buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Real> PointSet<T> {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "points need at least one coordinate");
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    /// Builds from a flat row-major buffer. Panics if the length is not a
    /// multiple of `dim`.
    pub fn from_flat(dim: usize, coords: Vec<T>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "ragged point buffer");
        Self { dim, coords }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<T>]) -> Self {
        let mut set = Self::new(dim);
        for r in rows {
            set.push(r);
        }
        set
    }

    /// The grid `{i/m : i = 0..m-1}^d`, first coordinate varying slowest.
    pub fn grid(dim: usize, m: usize) -> Self {
        let total = m.pow(dim as u32);
        let mut coords = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            coords.extend(idx.iter().map(|&i| T::lit(i as f64 / m as f64)));
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { dim, coords }
    }

    pub fn push(&mut self, p: &[T]) {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        self.coords.extend_from_slice(p);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &i in indices {
            out.push(self.point(i));
        }
        out
    }

    pub fn as_flat(&self) -> &[T] {
        &self.coords
    }
}
