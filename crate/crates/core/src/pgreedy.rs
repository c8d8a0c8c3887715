//! P-greedy point selection with simultaneous Newton-basis construction,
//! and the feature map `x -> (N_1(x), ..., N_D(x))` built on top of it.
//!
//! The Newton basis `N_1..N_D` is the Gram–Schmidt orthonormalization of
//! the kernel translates `K(., xi_1)..K(., xi_D)` in the RKHS. Because it is
//! orthonormal, the squared power function satisfies
//! `P^2(x) = K(x, x) - sum_k N_k(x)^2`, which is what the greedy rule
//! maximizes and what [`NewtonBuilder`] keeps up to date per candidate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::Kernel;
use crate::points::PointSet;
use crate::scalar::{argmax, Real};

/// Pivots below this value are treated as numerically zero.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Cap applied when no explicit point budget is given.
pub const DEFAULT_MAX_POINTS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PGreedyError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("admissible error must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("candidate dimension {got} does not match kernel dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("max_points must be at least one")]
    ZeroBudget,
    #[error("candidate {index} has power {power:e} below the pivot floor")]
    DegeneratePivot { index: usize, power: f64 },
    #[error("decay fit needs at least 10 basis points, got {0}")]
    TooFewPoints(usize),
}

/// How [`build_basis`] terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisStatus {
    /// `max P^2 < e^2` over the candidate set.
    Converged,
    /// The point budget ran out first.
    Truncated,
    /// The next pivot fell below [`PIVOT_FLOOR`].
    PrecisionExhausted,
}

pub fn default_max_points(n_candidates: usize) -> usize {
    n_candidates.min(DEFAULT_MAX_POINTS)
}

/// Incremental Newton-basis construction over a fixed candidate set.
///
/// Points may be appended in any order; [`build_basis`] drives it
/// greedily, environment generation drives it in sampling order.
#[derive(Debug, Clone)]
pub struct NewtonBuilder<'a, T: Real> {
    kernel: &'a Kernel<T>,
    candidates: &'a PointSet<T>,
    // columns[k][i] = N_k(candidate i)
    columns: Vec<Vec<T>>,
    power_sq: Vec<T>,
    selected: Vec<usize>,
    // transfer[k][j], j <= k
    transfer: Vec<Vec<T>>,
}

impl<'a, T: Real> NewtonBuilder<'a, T> {
    pub fn new(kernel: &'a Kernel<T>, candidates: &'a PointSet<T>) -> Result<Self, PGreedyError> {
        if candidates.is_empty() {
            return Err(PGreedyError::EmptyCandidates);
        }
        if candidates.dim() != kernel.dim() {
            return Err(PGreedyError::DimensionMismatch {
                expected: kernel.dim(),
                got: candidates.dim(),
            });
        }
        let power_sq = candidates.iter().map(|p| kernel.diag(p)).collect();
        Ok(Self {
            kernel,
            candidates,
            columns: Vec::new(),
            power_sq,
            selected: Vec::new(),
            transfer: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Current `P^2` at every candidate.
    pub fn power_sq(&self) -> &[T] {
        &self.power_sq
    }

    pub fn max_power_sq(&self) -> T {
        self.power_sq.iter().copied().fold(T::zero(), |a, b| a.max(b))
    }

    /// Candidate with the largest `P^2`, lowest index on ties.
    pub fn greedy_choice(&self) -> usize {
        argmax(self.power_sq.iter().copied()).unwrap_or(0)
    }

    /// Appends candidate `index` to the basis.
    pub fn push(&mut self, index: usize) -> Result<(), PGreedyError> {
        let pivot = self.power_sq[index];
        if !(pivot > T::lit(PIVOT_FLOOR)) {
            return Err(PGreedyError::DegeneratePivot {
                index,
                power: pivot.as_f64(),
            });
        }
        let m = self.selected.len();
        let xi = self.candidates.point(index);
        let at_xi: Vec<T> = self.columns.iter().map(|c| c[index]).collect();
        let inv_norm = T::one() / pivot.sqrt();

        let mut col: Vec<T> = self
            .candidates
            .iter()
            .map(|x| self.kernel.eval(x, xi))
            .collect();
        for (c, &w) in self.columns.iter().zip(&at_xi) {
            for (v, &ck) in col.iter_mut().zip(c) {
                *v -= w * ck;
            }
        }
        for (v, p) in col.iter_mut().zip(self.power_sq.iter_mut()) {
            *v *= inv_norm;
            *p = (*p - *v * *v).max(T::zero());
        }
        self.power_sq[index] = T::zero();

        let mut row = vec![T::zero(); m + 1];
        row[m] = T::one();
        for (k, &w) in at_xi.iter().enumerate() {
            for (r, &c) in row.iter_mut().zip(&self.transfer[k]) {
                *r -= w * c;
            }
        }
        for r in row.iter_mut() {
            *r *= inv_norm;
        }

        self.transfer.push(row);
        self.columns.push(col);
        self.selected.push(index);
        Ok(())
    }

    /// Freezes the builder into a basis.
    pub fn finish(self, admissible_error: T, trace: Vec<T>, status: BasisStatus) -> NewtonBasis<T> {
        let d = self.selected.len();
        let n = self.candidates.len();
        let transfer = DMatrix::from_fn(d, d, |k, j| {
            if j <= k {
                self.transfer[k][j]
            } else {
                T::zero()
            }
        });
        let candidate_values = DMatrix::from_fn(n, d, |i, k| self.columns[k][i]);
        NewtonBasis {
            kernel: *self.kernel,
            points: self.candidates.select(&self.selected),
            selected: self.selected,
            transfer,
            candidate_values,
            residual_trace: trace,
            admissible_error,
            status,
        }
    }
}

/// Selected points plus the lower-triangular transfer matrix `C` with
/// `N_k(x) = sum_{j <= k} C[k][j] K(x, xi_j)`.
#[derive(Debug, Clone)]
pub struct NewtonBasis<T: Real> {
    kernel: Kernel<T>,
    points: PointSet<T>,
    selected: Vec<usize>,
    transfer: DMatrix<T>,
    candidate_values: DMatrix<T>,
    residual_trace: Vec<T>,
    admissible_error: T,
    status: BasisStatus,
}

impl<T: Real> NewtonBasis<T> {
    /// The zero-dimensional basis, `V(empty)`.
    pub fn empty(kernel: Kernel<T>, admissible_error: T) -> Self {
        Self {
            kernel,
            points: PointSet::new(kernel.dim()),
            selected: Vec::new(),
            transfer: DMatrix::zeros(0, 0),
            candidate_values: DMatrix::zeros(0, 0),
            residual_trace: Vec::new(),
            admissible_error,
            status: BasisStatus::Converged,
        }
    }

    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn points(&self) -> &PointSet<T> {
        &self.points
    }

    /// Candidate indices of the selected points, in selection order.
    pub fn selected_indices(&self) -> &[usize] {
        &self.selected
    }

    pub fn transfer(&self) -> &DMatrix<T> {
        &self.transfer
    }

    /// `max_x P_m^2(x)` after each of the `m = 1..D` additions.
    pub fn residual_trace(&self) -> &[T] {
        &self.residual_trace
    }

    pub fn admissible_error(&self) -> T {
        self.admissible_error
    }

    pub fn status(&self) -> BasisStatus {
        self.status
    }

    /// Newton values on the candidate set the basis was built from
    /// (one row per candidate).
    pub fn candidate_values(&self) -> &DMatrix<T> {
        &self.candidate_values
    }

    /// `[K(x, xi_1), ..., K(x, xi_D)]`.
    pub fn kernel_column(&self, x: &[T]) -> DVector<T> {
        DVector::from_iterator(self.len(), self.points.iter().map(|p| self.kernel.eval(x, p)))
    }

    /// Lower-triangular `L[j][k] = N_k(xi_j)`, the Cholesky factor of the
    /// kernel matrix on the selected points; `C = L^{-1}`.
    pub fn factor(&self) -> DMatrix<T> {
        let d = self.len();
        DMatrix::from_fn(d, d, |j, k| {
            if k <= j {
                self.candidate_values[(self.selected[j], k)]
            } else {
                T::zero()
            }
        })
    }

    /// `x~ = [N_1(x), ..., N_D(x)]`, by forward substitution with the
    /// factor rather than multiplication by `C`, which is better conditioned.
    pub fn feature_of(&self, x: &[T]) -> DVector<T> {
        let k = self.kernel_column(x);
        if self.is_empty() {
            return k;
        }
        self.factor().solve_lower_triangular(&k).unwrap_or_else(|| &self.transfer * k)
    }

    /// Weights `w = C^T a` with `sum_k a_k N_k = sum_j w_j K(., xi_j)`,
    /// by back substitution with the factor.
    pub fn translate_weights(&self, coeffs: &DVector<T>) -> DVector<T> {
        self.factor()
            .transpose()
            .solve_upper_triangular(coeffs)
            .unwrap_or_else(|| self.transfer.transpose() * coeffs)
    }

    pub fn power_function(&self, x: &[T]) -> T {
        let f = self.feature_of(x);
        (self.kernel.diag(x) - f.norm_squared()).max(T::zero()).sqrt()
    }

    /// RKHS Gram matrix of the Newton basis, `C K_xi C^T`.
    pub fn newton_gram(&self) -> DMatrix<T> {
        let d = self.len();
        let k = DMatrix::from_fn(d, d, |i, j| {
            self.kernel.eval(self.points.point(i), self.points.point(j))
        });
        &self.transfer * k * self.transfer.transpose()
    }
}

/// Greedy selection of up to `max_points` candidates until
/// `max P^2 < admissible_error^2`. Ties go to the lowest candidate index.
pub fn build_basis<T: Real>(
    kernel: &Kernel<T>,
    candidates: &PointSet<T>,
    admissible_error: T,
    max_points: usize,
) -> Result<NewtonBasis<T>, PGreedyError> {
    let e = admissible_error.as_f64();
    if !(e > 0.0 && e.is_finite()) {
        return Err(PGreedyError::BadTolerance(e));
    }
    if max_points == 0 {
        return Err(PGreedyError::ZeroBudget);
    }
    let mut builder = NewtonBuilder::new(kernel, candidates)?;
    let tol = admissible_error * admissible_error;
    let mut trace = Vec::new();
    let mut next = builder.greedy_choice();
    let status = loop {
        builder.push(next)?;
        let max = builder.max_power_sq();
        trace.push(max);
        if max < tol {
            break BasisStatus::Converged;
        }
        if builder.len() >= max_points {
            break BasisStatus::Truncated;
        }
        next = builder.greedy_choice();
        if !(builder.power_sq()[next] > T::lit(PIVOT_FLOOR)) {
            break BasisStatus::PrecisionExhausted;
        }
    };
    Ok(builder.finish(admissible_error, trace, status))
}

/// Per-arm features `x~` for a fixed arm set.
#[derive(Debug, Clone)]
pub struct FeatureMap<T: Real> {
    basis: NewtonBasis<T>,
    features: DMatrix<T>,
}

impl<T: Real> FeatureMap<T> {
    /// Features of the candidate set the basis was built on, reusing the
    /// values computed during selection.
    pub fn on_candidates(basis: NewtonBasis<T>) -> Self {
        let features = basis.candidate_values.clone();
        Self { basis, features }
    }

    /// Features of an arbitrary arm set through the transfer matrix.
    pub fn new(basis: NewtonBasis<T>, arms: &PointSet<T>) -> Self {
        let d = basis.len();
        let mut features = DMatrix::zeros(arms.len(), d);
        for (i, x) in arms.iter().enumerate() {
            features.row_mut(i).copy_from(&basis.feature_of(x).transpose());
        }
        Self { basis, features }
    }

    pub fn basis(&self) -> &NewtonBasis<T> {
        &self.basis
    }

    /// One row per arm.
    pub fn features(&self) -> &DMatrix<T> {
        &self.features
    }

    pub fn into_features(self) -> DMatrix<T> {
        self.features
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature(&self, arm: usize) -> DVector<T> {
        self.features.row(arm).transpose()
    }
}

/// Least-squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Regression of `log max P^2` against `m^{1/d}` (exponential decay) and
/// against `log m` (polynomial decay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub exponential: LineFit,
    pub polynomial: LineFit,
    /// Set when the trace is (numerically) constant and both fits are
    /// meaningless.
    pub degenerate: bool,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> (LineFit, bool) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let degenerate = sxx <= 0.0 || syy <= 1e-24 * (1.0 + my * my) * n;
    if degenerate {
        return (
            LineFit {
                slope: 0.0,
                intercept: my,
                r_squared: 0.0,
            },
            true,
        );
    }
    let slope = sxy / sxx;
    (
        LineFit {
            slope,
            intercept: my - slope * mx,
            r_squared: sxy * sxy / (sxx * syy),
        },
        false,
    )
}

/// Decay-rate diagnostics of a residual trace of length at least 10,
/// for points in `dim` dimensions.
pub fn decay_fit(trace: &[f64], dim: usize) -> Result<DecayReport, PGreedyError> {
    if trace.len() < 10 {
        return Err(PGreedyError::TooFewPoints(trace.len()));
    }
    let mut ms = Vec::new();
    let mut ys = Vec::new();
    for (i, &v) in trace.iter().enumerate() {
        if v > 0.0 {
            ms.push((i + 1) as f64);
            ys.push(v.ln());
        }
    }
    if ys.len() < 2 {
        let flat = LineFit {
            slope: 0.0,
            intercept: 0.0,
            r_squared: 0.0,
        };
        return Ok(DecayReport {
            exponential: flat,
            polynomial: flat,
            degenerate: true,
        });
    }
    let root: Vec<f64> = ms.iter().map(|m| m.powf(1.0 / dim as f64)).collect();
    let logs: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
    let (exponential, d1) = fit_line(&root, &ys);
    let (polynomial, d2) = fit_line(&logs, &ys);
    Ok(DecayReport {
        exponential,
        polynomial,
        degenerate: d1 || d2,
    })
}

pub fn decay_diagnostics<T: Real>(basis: &NewtonBasis<T>) -> Result<DecayReport, PGreedyError> {
    let trace: Vec<f64> = basis.residual_trace().iter().map(|v| v.as_f64()).collect();
    decay_fit(&trace, basis.kernel().dim())
}
