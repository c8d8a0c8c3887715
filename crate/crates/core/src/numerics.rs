//! Dense linear algebra with incremental updates: the regularized design
//! matrix inverse and its log-determinant under rank-one updates.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::scalar::Real;

/// Exact re-factorization interval for [`SpdTracker`].
pub const REFACTOR_INTERVAL: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not numerically positive definite")]
    NotPositiveDefinite,
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sampling scale must be positive, got {0}")]
    BadScale(f64),
}

/// Maintains `A_t = lambda I + sum_s x_s x_s^T`, its inverse and
/// `log det(A_t / lambda)` under rank-one updates.
#[derive(Debug, Clone)]
pub struct SpdTracker<T: Real> {
    lambda: T,
    gram: DMatrix<T>,
    inv: DMatrix<T>,
    logdet: T,
    rounds: usize,
    since_refactor: usize,
    refactor_every: usize,
    // lower Cholesky factor of `inv`, rebuilt lazily for sampling
    inv_factor: Option<DMatrix<T>>,
}

impl<T: Real> SpdTracker<T> {
    pub fn new(dim: usize, lambda: T) -> Self {
        assert!(lambda > T::zero(), "regularization must be positive");
        Self {
            lambda,
            gram: DMatrix::identity(dim, dim) * lambda,
            inv: DMatrix::identity(dim, dim) / lambda,
            logdet: T::zero(),
            rounds: 0,
            since_refactor: 0,
            refactor_every: REFACTOR_INTERVAL,
            inv_factor: None,
        }
    }

    /// Overrides the re-factorization interval (0 disables it).
    pub fn with_refactor_interval(mut self, every: usize) -> Self {
        self.refactor_every = every;
        self
    }

    pub fn dim(&self) -> usize {
        self.inv.nrows()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn inv(&self) -> &DMatrix<T> {
        &self.inv
    }

    /// `A_t` itself.
    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    /// `log det(A_t / lambda)`.
    pub fn logdet(&self) -> T {
        self.logdet
    }

    /// `x^T A_t^{-1} x`, clamped at zero.
    pub fn mahalanobis_sq(&self, x: &DVector<T>) -> T {
        let q = x.dot(&(&self.inv * x));
        q.max(T::zero())
    }

    pub fn mahalanobis(&self, x: &DVector<T>) -> T {
        self.mahalanobis_sq(x).sqrt()
    }

    /// Squared Mahalanobis norms of every row of `rows`.
    pub fn mahalanobis_sq_rows(&self, rows: &DMatrix<T>) -> Vec<T> {
        let projected = rows * &self.inv;
        (0..rows.nrows())
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..rows.ncols() {
                    acc += projected[(i, j)] * rows[(i, j)];
                }
                acc.max(T::zero())
            })
            .collect()
    }

    /// Sherman–Morrison update with `x x^T`. Returns `x^T A_{t-1}^{-1} x`
    /// measured before the update.
    pub fn rank1_update(&mut self, x: &DVector<T>) -> T {
        let u = &self.inv * x;
        let m2 = x.dot(&u).max(T::zero());
        let denom = T::one() + m2;
        let n = self.dim();
        for j in 0..n {
            let uj = u[j] / denom;
            for i in 0..n {
                self.inv[(i, j)] -= u[i] * uj;
            }
        }
        self.gram.ger(T::one(), x, x, T::one());
        self.logdet += denom.ln();
        self.rounds += 1;
        self.since_refactor += 1;
        self.inv_factor = None;
        if self.refactor_every > 0 && self.since_refactor >= self.refactor_every {
            // a failed factorization keeps the Sherman–Morrison state
            let _ = self.refactor();
        }
        m2
    }

    /// Recomputes the inverse and log-determinant from `A_t` directly.
    pub fn refactor(&mut self) -> Result<(), NumericsError> {
        let chol = Cholesky::new(self.gram.clone()).ok_or(NumericsError::NotPositiveDefinite)?;
        let l = chol.l_dirty();
        let mut logdet = T::zero();
        for i in 0..self.dim() {
            logdet += l[(i, i)].ln();
        }
        self.logdet = T::lit(2.0) * logdet - T::lit(self.dim() as f64) * self.lambda.ln();
        self.inv = chol.inverse();
        self.since_refactor = 0;
        self.inv_factor = None;
        Ok(())
    }

    /// Draws from `N(mean, scale^2 A_t^{-1})`.
    pub fn sample_gaussian<R: Rng + ?Sized>(
        &mut self,
        mean: &DVector<T>,
        scale: T,
        rng: &mut R,
    ) -> Result<DVector<T>, NumericsError>
    where
        StandardNormal: Distribution<T>,
    {
        if mean.len() != self.dim() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        if !(scale > T::zero()) {
            return Err(NumericsError::BadScale(scale.as_f64()));
        }
        if self.inv_factor.is_none() {
            let factor = match Cholesky::new(self.inv.clone()) {
                Some(c) => c.unpack(),
                None => {
                    self.refactor()?;
                    Cholesky::new(self.inv.clone())
                        .ok_or(NumericsError::NotPositiveDefinite)?
                        .unpack()
                }
            };
            self.inv_factor = Some(factor);
        }
        let l = self.inv_factor.as_ref().expect("factor cached above");
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        Ok(mean + (l * z) * scale)
    }
}

/// Numerical rank of `m` and an orthonormal basis (columns) of its row
/// space, using singular values above `rel_tol * sigma_max`.
pub fn row_space<T: Real>(m: &DMatrix<T>, rel_tol: T) -> (usize, DMatrix<T>) {
    let n = m.ncols();
    if m.nrows() == 0 || n == 0 {
        return (0, DMatrix::zeros(n, 0));
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let max = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b));
    let mut kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| max > T::zero() && svd.singular_values[i] > rel_tol * max)
        .collect();
    kept.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let basis = DMatrix::from_fn(n, kept.len(), |i, j| v_t[(kept[j], i)]);
    (kept.len(), basis)
}
