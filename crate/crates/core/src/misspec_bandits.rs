//! Algorithms for linear bandits with bounded misspecification over a
//! finite arm set whose features lie in the unit ball.
//!
//! Features are passed as a matrix with one row per arm.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numerics::{row_space, NumericsError, SpdTracker};
use crate::scalar::{argmax, Real};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("arm features span only {rank} of {dim} dimensions")]
    RankDeficient { rank: usize, dim: usize },
    #[error("arm set is empty")]
    NoArms,
    #[error("exploration weight gamma = {0} exceeds one; lower eta")]
    GammaTooLarge(f64),
    #[error("arm index {0} out of range")]
    BadArm(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinBanditParams<T> {
    /// Ridge regularization `lambda >= 1`.
    pub lambda: T,
    /// Sub-Gaussian noise scale `R`.
    pub noise: T,
    /// Norm bound `B` on the parameter and the rewards.
    pub norm_bound: T,
    /// Confidence level `delta` in `(0, 1]`.
    pub delta: T,
    /// Uniform misspecification bound `epsilon >= 0`.
    pub misspecification: T,
}

impl<T: Real> LinBanditParams<T> {
    pub fn validate(&self) -> Result<(), BanditError> {
        let bad = |what: &str| Err(BanditError::InvalidParameter(what.to_string()));
        if !(self.lambda >= T::one()) {
            return bad("lambda must be >= 1");
        }
        if !(self.noise >= T::zero()) {
            return bad("noise scale must be >= 0");
        }
        if !(self.norm_bound >= T::zero()) {
            return bad("norm bound must be >= 0");
        }
        if !(self.delta > T::zero() && self.delta <= T::one()) {
            return bad("delta must lie in (0, 1]");
        }
        if !(self.misspecification >= T::zero()) {
            return bad("misspecification must be >= 0");
        }
        Ok(())
    }
}

/// Regularized least-squares state shared by the UCB and Thompson rules.
#[derive(Debug, Clone)]
pub struct LinBanditState<T: Real> {
    tracker: SpdTracker<T>,
    b: DVector<T>,
    theta_hat: DVector<T>,
    psi: T,
    params: LinBanditParams<T>,
}

impl<T: Real> LinBanditState<T> {
    pub fn new(dim: usize, params: LinBanditParams<T>) -> Result<Self, BanditError> {
        params.validate()?;
        Ok(Self {
            tracker: SpdTracker::new(dim, params.lambda),
            b: DVector::zeros(dim),
            theta_hat: DVector::zeros(dim),
            psi: T::zero(),
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn params(&self) -> &LinBanditParams<T> {
        &self.params
    }

    pub fn tracker(&self) -> &SpdTracker<T> {
        &self.tracker
    }

    pub fn theta_hat(&self) -> &DVector<T> {
        &self.theta_hat
    }

    /// `b_t = sum_s y_s x_s`.
    pub fn reward_sum(&self) -> &DVector<T> {
        &self.b
    }

    /// `psi_t = sum_s ||x_s||_{A_{s-1}^{-1}}`.
    pub fn psi(&self) -> T {
        self.psi
    }

    /// Confidence radius at the configured `delta`.
    pub fn beta(&self) -> T {
        self.beta_at(self.params.delta)
    }

    /// `R sqrt(log det(A_t / lambda) + 2 log(1/delta)) + sqrt(lambda) B`.
    pub fn beta_at(&self, delta: T) -> T {
        let p = &self.params;
        let radicand = (self.tracker.logdet() - T::lit(2.0) * delta.ln()).max(T::zero());
        p.noise * radicand.sqrt() + p.lambda.sqrt() * p.norm_bound
    }

    /// `<theta_hat, x> + ||x||_{A^{-1}} (beta + epsilon psi)` for every arm.
    pub fn ucb_scores(&self, features: &DMatrix<T>) -> Vec<T> {
        let width = self.beta() + self.params.misspecification * self.psi;
        let norms = self.tracker.mahalanobis_sq_rows(features);
        let means = features * &self.theta_hat;
        norms
            .iter()
            .zip(means.iter())
            .map(|(&n2, &m)| m + n2.sqrt() * width)
            .collect()
    }

    pub fn ucb_select(&self, features: &DMatrix<T>) -> usize {
        argmax(self.ucb_scores(features)).unwrap_or(0)
    }

    /// Thompson rule: draw `mu ~ N(theta_hat, s^2 A^{-1})` with
    /// `s = beta(delta / 2) + epsilon psi` and maximize `<mu, x>`.
    pub fn ts_select<R: Rng + ?Sized>(
        &mut self,
        features: &DMatrix<T>,
        rng: &mut R,
    ) -> Result<usize, BanditError>
    where
        StandardNormal: Distribution<T>,
    {
        let scale = self.beta_at(self.params.delta / T::lit(2.0))
            + self.params.misspecification * self.psi;
        let mu = if scale > T::zero() {
            self.tracker.sample_gaussian(&self.theta_hat, scale, rng)?
        } else {
            self.theta_hat.clone()
        };
        Ok(argmax((features * mu).iter().copied()).unwrap_or(0))
    }

    /// Records reward `y` for the pulled arm with feature `x`.
    pub fn update(&mut self, x: &DVector<T>, y: T) {
        let m2 = self.tracker.rank1_update(x);
        self.psi += m2.sqrt();
        self.b.axpy(y, x, T::one());
        self.theta_hat = self.tracker.inv() * &self.b;
    }
}

/// A probability vector over the arm set.
#[derive(Debug, Clone, PartialEq)]
pub struct Design<T> {
    pub weights: Vec<T>,
    /// `max_x x^T Q(pi)^{-1} x`.
    pub leverage_max: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> Design<T> {
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] > T::zero())
            .collect()
    }
}

/// `Q(pi) = sum_x pi(x) x x^T`.
pub fn design_matrix<T: Real>(features: &DMatrix<T>, weights: &[T]) -> DMatrix<T> {
    let d = features.ncols();
    let mut q = DMatrix::zeros(d, d);
    for (i, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            let x = features.row(i).transpose();
            q.ger(w, &x, &x, T::one());
        }
    }
    q
}

/// Leverages `x^T Q^{-1} x` of every arm.
pub fn leverages<T: Real>(features: &DMatrix<T>, q_inv: &DMatrix<T>) -> Vec<T> {
    let proj = features * q_inv;
    proj.component_mul(features)
        .column_sum()
        .iter()
        .map(|v| v.max(T::zero()))
        .collect()
}

fn spd_inverse<T: Real>(m: DMatrix<T>) -> Result<DMatrix<T>, BanditError> {
    Cholesky::new(m)
        .map(|c| c.inverse())
        .ok_or(BanditError::Numerics(NumericsError::NotPositiveDefinite))
}

/// Fails with [`BanditError::RankDeficient`] unless the rows span `R^D`.
pub fn check_spans<T: Real>(features: &DMatrix<T>) -> Result<(), BanditError> {
    if features.nrows() == 0 {
        return Err(BanditError::NoArms);
    }
    let (rank, _) = row_space(features, T::lit(RANK_TOL));
    if rank < features.ncols() {
        return Err(BanditError::RankDeficient {
            rank,
            dim: features.ncols(),
        });
    }
    Ok(())
}

/// Picks `D` arms by pivoted Gram–Schmidt on the rows.
fn spanning_subset<T: Real>(features: &DMatrix<T>) -> Vec<usize> {
    let (n, d) = features.shape();
    let mut residual = features.clone();
    let mut chosen = Vec::with_capacity(d);
    for _ in 0..d {
        let norms = (0..n).map(|i| residual.row(i).norm_squared());
        let best = argmax(norms).unwrap_or(0);
        let pivot = residual.row(best).transpose();
        let pn = pivot.norm();
        if pn <= T::zero() {
            break;
        }
        let dir = pivot / pn;
        let coeffs = &residual * &dir;
        residual.ger(-T::one(), &coeffs, &dir, T::one());
        chosen.push(best);
    }
    chosen
}

/// Approximate G-optimal (equivalently D-optimal) design by Frank–Wolfe
/// with away steps on `log det Q(pi)`.
///
/// Stops once the largest leverage is at most `D (1 + tol)`; by
/// Kiefer–Wolfowitz the optimum is exactly `D`.
pub fn g_optimal_design<T: Real>(
    features: &DMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<Design<T>, BanditError> {
    check_spans(features)?;
    let (n, d) = features.shape();
    let dd = T::lit(d as f64);
    let target = dd * (T::one() + tol);

    let mut weights = vec![T::zero(); n];
    let start = spanning_subset(features);
    let w0 = T::one() / T::lit(start.len() as f64);
    for &i in &start {
        weights[i] = w0;
    }
    let mut q_inv = spd_inverse(design_matrix(features, &weights))?;
    let mut lev = leverages(features, &q_inv);

    let mut best = Design {
        weights: weights.clone(),
        leverage_max: lev.iter().copied().fold(T::zero(), |a, b| a.max(b)),
        converged: false,
        iterations: 0,
    };

    for iter in 0..max_iters {
        let up = argmax(lev.iter().copied()).unwrap_or(0);
        let g_up = lev[up];
        if g_up < best.leverage_max {
            best.weights.clone_from(&weights);
            best.leverage_max = g_up;
            best.iterations = iter;
        }
        if g_up <= target {
            best.weights = weights;
            best.leverage_max = g_up;
            best.converged = true;
            best.iterations = iter;
            return Ok(best);
        }
        // worst supported arm, candidate for an away step
        let mut down = up;
        let mut g_down = T::max_value().unwrap_or(g_up);
        for (i, &w) in weights.iter().enumerate() {
            if w > T::zero() && lev[i] < g_down {
                g_down = lev[i];
                down = i;
            }
        }
        let (arm, step) = if g_up / dd - T::one() >= T::one() - g_down / dd {
            (up, (g_up / dd - T::one()) / (g_up - T::one()))
        } else {
            let w = weights[down];
            let floor = -w / (T::one() - w);
            let step = if g_down > T::one() {
                ((g_down / dd - T::one()) / (g_down - T::one())).max(floor)
            } else {
                floor
            };
            (down, step)
        };
        if step == T::zero() || !(step < T::one()) {
            break;
        }

        for w in weights.iter_mut() {
            *w *= T::one() - step;
        }
        weights[arm] += step;
        if weights[arm] < T::lit(1e-15) {
            weights[arm] = T::zero();
        }

        // Sherman–Morrison on Q <- (1 - step) (Q + c x x^T)
        let c = step / (T::one() - step);
        let x = features.row(arm).transpose();
        let u = &q_inv * &x;
        let denom = T::one() + c * lev[arm];
        let scale = T::one() / (T::one() - step);
        if (iter + 1) % 64 == 0 || !(denom > T::lit(1e-12)) {
            q_inv = spd_inverse(design_matrix(features, &weights))?;
            lev = leverages(features, &q_inv);
        } else {
            let proj = features * &u;
            q_inv.ger(-c / denom, &u, &u, T::one());
            q_inv *= scale;
            for (l, p) in lev.iter_mut().zip(proj.iter()) {
                *l = ((*l - c * *p * *p / denom) * scale).max(T::zero());
            }
        }
    }
    // final exact check of the best iterate
    let q_inv = spd_inverse(design_matrix(features, &best.weights))?;
    let lev = leverages(features, &q_inv);
    best.leverage_max = lev.iter().copied().fold(T::zero(), |a, b| a.max(b));
    best.converged = best.leverage_max <= target;
    best.iterations = max_iters;
    Ok(best)
}

/// EXP3 for adversarial linear bandits with a fixed exploration design.
#[derive(Debug, Clone)]
pub struct Exp3State<T: Real> {
    cumulative_phi: DVector<T>,
    pi_exp: Vec<T>,
    eta: T,
    gamma: T,
    exploration_leverage: T,
}

/// Sampling distributions of one EXP3 round and the sampled arm.
#[derive(Debug, Clone)]
pub struct Exp3Round<T> {
    /// Exponential weights `q_t`.
    pub q: Vec<T>,
    /// Mixed distribution `p_t = gamma pi_exp + (1 - gamma) q_t`.
    pub p: Vec<T>,
    pub arm: usize,
}

impl<T: Real> Exp3State<T> {
    /// `gamma` is derived as `B * Gamma(pi_exp) * eta`.
    pub fn new(design: &Design<T>, dim: usize, eta: T, norm_bound: T) -> Result<Self, BanditError> {
        if !(eta > T::zero()) {
            return Err(BanditError::InvalidParameter("eta must be positive".into()));
        }
        let gamma = norm_bound * design.leverage_max * eta;
        if gamma > T::one() {
            return Err(BanditError::GammaTooLarge(gamma.as_f64()));
        }
        Ok(Self {
            cumulative_phi: DVector::zeros(dim),
            pi_exp: design.weights.clone(),
            eta,
            gamma,
            exploration_leverage: design.leverage_max,
        })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn exploration_leverage(&self) -> T {
        self.exploration_leverage
    }

    pub fn exploration(&self) -> &[T] {
        &self.pi_exp
    }

    pub fn cumulative_phi(&self) -> &DVector<T> {
        &self.cumulative_phi
    }

    /// `(q_t, p_t)` from the current cumulative estimates.
    pub fn distributions(&self, features: &DMatrix<T>) -> (Vec<T>, Vec<T>) {
        let scores = features * &self.cumulative_phi;
        let max = scores.iter().copied().fold(T::min_value().unwrap_or(T::zero()), |a, b| a.max(b));
        let mut q: Vec<T> = scores.iter().map(|&s| (self.eta * (s - max)).exp()).collect();
        let total = q.iter().copied().fold(T::zero(), |a, b| a + b);
        for v in q.iter_mut() {
            *v /= total;
        }
        let p = q
            .iter()
            .zip(&self.pi_exp)
            .map(|(&qi, &pi)| self.gamma * pi + (T::one() - self.gamma) * qi)
            .collect();
        (q, p)
    }

    pub fn begin_round<R: Rng + ?Sized>(&self, features: &DMatrix<T>, rng: &mut R) -> Exp3Round<T> {
        let (q, p) = self.distributions(features);
        let arm = sample_index(&p, rng);
        Exp3Round { q, p, arm }
    }

    /// Adds `phi_t = g_t(x_t) Q(p_t)^{-1} x_t` to the cumulative estimate.
    pub fn finish_round(
        &mut self,
        features: &DMatrix<T>,
        round: &Exp3Round<T>,
        reward: T,
    ) -> Result<DVector<T>, BanditError> {
        let phi = exp3_estimate(features, &round.p, round.arm, reward)?;
        self.cumulative_phi += &phi;
        Ok(phi)
    }
}

/// The importance-weighted parameter estimate `g Q(p)^{-1} x_arm`.
pub fn exp3_estimate<T: Real>(
    features: &DMatrix<T>,
    p: &[T],
    arm: usize,
    reward: T,
) -> Result<DVector<T>, BanditError> {
    if arm >= features.nrows() {
        return Err(BanditError::BadArm(arm));
    }
    let q = design_matrix(features, p);
    let chol = Cholesky::new(q).ok_or(BanditError::Numerics(NumericsError::NotPositiveDefinite))?;
    let x = features.row(arm).transpose();
    Ok(chol.solve(&x) * reward)
}

/// Inverse-CDF sampling from a probability vector.
pub fn sample_index<T: Real, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in p.iter().enumerate() {
        let w = w.as_f64();
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasedElimParams<T> {
    pub delta: T,
    /// Multiplies the pull schedule; the natural choice for
    /// `R`-sub-Gaussian noise is `R^2`.
    pub schedule_scale: T,
    /// Ridge added to the phase-local least squares.
    pub ridge: T,
    pub design_tol: T,
    pub design_max_iters: usize,
}

impl<T: Real> PhasedElimParams<T> {
    pub fn with_noise(delta: T, noise: T) -> Self {
        Self {
            delta,
            schedule_scale: noise * noise,
            ridge: T::lit(1e-8),
            design_tol: T::lit(0.01),
            design_max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOutcome {
    /// The phase ran to completion.
    Completed { phase: usize, eliminated: Vec<usize> },
    /// The reward channel closed mid-phase.
    HorizonReached,
}

/// Phased elimination with G-optimal pull schedules.
#[derive(Debug, Clone)]
pub struct PhasedElimState<T: Real> {
    active: Vec<usize>,
    phase: usize,
    n_arms: usize,
    params: PhasedElimParams<T>,
}

impl<T: Real> PhasedElimState<T> {
    pub fn new(n_arms: usize, params: PhasedElimParams<T>) -> Result<Self, BanditError> {
        if n_arms == 0 {
            return Err(BanditError::NoArms);
        }
        if !(params.delta > T::zero() && params.delta <= T::one()) {
            return Err(BanditError::InvalidParameter("delta must lie in (0, 1]".into()));
        }
        Ok(Self {
            active: (0..n_arms).collect(),
            phase: 1,
            n_arms,
            params,
        })
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Current phase index `l`, starting at one.
    pub fn phase(&self) -> usize {
        self.phase
    }

    /// Target accuracy `2^{-l}`.
    pub fn accuracy(&self) -> T {
        T::lit(0.5f64.powi(self.phase as i32))
    }

    /// `(2 D / eps_l^2) log(|A| l (l + 1) / delta)`, times the schedule scale.
    pub fn schedule_length(&self, dim: usize) -> T {
        let l = self.phase as f64;
        let eps = self.accuracy();
        let log_term = (T::lit(self.n_arms as f64 * l * (l + 1.0)) / self.params.delta).ln();
        self.params.schedule_scale * T::lit(2.0 * dim as f64) / (eps * eps) * log_term
    }

    /// Runs one phase. `pull(arm)` returns the observed reward, or `None`
    /// once the horizon is exhausted.
    pub fn step<F>(&mut self, features: &DMatrix<T>, mut pull: F) -> Result<PhaseOutcome, BanditError>
    where
        F: FnMut(usize) -> Option<T>,
    {
        if self.active.len() == 1 {
            let arm = self.active[0];
            while pull(arm).is_some() {}
            return Ok(PhaseOutcome::HorizonReached);
        }
        let active_features =
            DMatrix::from_fn(self.active.len(), features.ncols(), |i, j| features[(self.active[i], j)]);
        let (rank, basis) = row_space(&active_features, T::lit(RANK_TOL));
        if rank == 0 {
            // all active arms share the zero feature: indistinguishable
            let arm = self.active[0];
            while pull(arm).is_some() {}
            return Ok(PhaseOutcome::HorizonReached);
        }
        let z = &active_features * &basis;
        let weights = match g_optimal_design(&z, self.params.design_tol, self.params.design_max_iters) {
            Ok(design) => design.weights,
            Err(_) => vec![T::one() / T::lit(self.active.len() as f64); self.active.len()],
        };

        let g = self.schedule_length(rank);
        let mut gram = DMatrix::identity(rank, rank) * self.params.ridge;
        let mut rhs = DVector::zeros(rank);
        for (local, &w) in weights.iter().enumerate() {
            if w <= T::zero() {
                continue;
            }
            let count = (w * g).ceil().as_f64().max(1.0) as usize;
            let arm = self.active[local];
            let zx = z.row(local).transpose();
            let mut total = T::zero();
            for _ in 0..count {
                match pull(arm) {
                    Some(y) => total += y,
                    None => return Ok(PhaseOutcome::HorizonReached),
                }
            }
            gram.ger(T::lit(count as f64), &zx, &zx, T::one());
            rhs.axpy(total, &zx, T::one());
        }
        let theta = Cholesky::new(gram)
            .ok_or(BanditError::Numerics(NumericsError::NotPositiveDefinite))?
            .solve(&rhs);
        let est = &z * theta;
        let best = est.iter().copied().fold(T::min_value().unwrap_or(T::zero()), |a, b| a.max(b));
        let threshold = T::lit(2.0) * self.accuracy();
        let mut kept = Vec::with_capacity(self.active.len());
        let mut eliminated = Vec::new();
        for (local, &arm) in self.active.iter().enumerate() {
            if best - est[local] > threshold {
                eliminated.push(arm);
            } else {
                kept.push(arm);
            }
        }
        self.active = kept;
        let phase = self.phase;
        self.phase += 1;
        Ok(PhaseOutcome::Completed { phase, eliminated })
    }
}
