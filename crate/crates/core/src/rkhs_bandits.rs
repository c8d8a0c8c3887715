//! Kernelized bandit algorithms: the APG family, which runs a
//! misspecified linear bandit on P-greedy Newton features, and the exact
//! IGP-UCB baseline.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environments::{derive_seed, AdversarialSeq, NoiseStream, SyntheticEnv};
use crate::misspec_bandits::{
    g_optimal_design, BanditError, Exp3State, LinBanditParams, LinBanditState, PhaseOutcome,
    PhasedElimParams, PhasedElimState, RANK_TOL,
};
use crate::numerics::row_space;
use crate::pgreedy::{build_basis, default_max_points, BasisStatus, FeatureMap, PGreedyError};
use crate::scalar::argmax;
use crate::{Kernel64, PointSet64};

const TS_STREAM: u64 = 0x7453;
const EXP3_STREAM: u64 = 0x6578;

#[derive(Debug, Error)]
pub enum RkhsError {
    #[error(transparent)]
    Basis(#[from] PGreedyError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// The linear-bandit rule run on the Newton features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApgAlgorithm {
    Ucb,
    Pe,
    Ts,
    Exp3,
}

impl ApgAlgorithm {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ucb => "APG-UCB",
            Self::Pe => "APG-PE",
            Self::Ts => "APG-TS",
            Self::Exp3 => "APG-EXP3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeSettings {
    /// Multiplier of the pull schedule; `None` means `R^2`.
    pub schedule_scale: Option<f64>,
    pub ridge: f64,
    pub design_tol: f64,
    pub design_max_iters: usize,
}

impl Default for PeSettings {
    fn default() -> Self {
        Self {
            schedule_scale: None,
            ridge: 1e-8,
            design_tol: 0.01,
            design_max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp3Settings {
    /// Learning rate; `None` means `sqrt(log|A| / (D T))`.
    pub eta: Option<f64>,
    pub design_tol: f64,
    pub design_max_iters: usize,
}

impl Default for Exp3Settings {
    fn default() -> Self {
        Self {
            eta: None,
            design_tol: 0.01,
            design_max_iters: 10_000,
        }
    }
}

/// Parameters of one APG run. The admissible error is `alpha / T^q` and
/// the misspecification handed to the linear layer is `B` times that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApgConfig {
    pub algorithm: ApgAlgorithm,
    pub horizon: usize,
    pub q: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub noise: f64,
    pub norm_bound: f64,
    pub delta: f64,
    /// Basis budget; `None` means `min(|A|, 2000)`.
    pub max_points: Option<usize>,
    pub pe: PeSettings,
    pub exp3: Exp3Settings,
    pub seed: u64,
}

impl ApgConfig {
    /// Experiment defaults: `B = 1`, `lambda = 1`, `delta = 1e-3`;
    /// `q = 1/2, alpha = 5e-3` except for EXP3, which uses `q = 1` and
    /// `alpha = log|A|`.
    pub fn standard(algorithm: ApgAlgorithm, horizon: usize, n_arms: usize, noise: f64) -> Self {
        let (q, alpha) = match algorithm {
            ApgAlgorithm::Exp3 => (1.0, (n_arms.max(2) as f64).ln()),
            _ => (0.5, 5e-3),
        };
        Self {
            algorithm,
            horizon,
            q,
            alpha,
            lambda: 1.0,
            noise,
            norm_bound: 1.0,
            delta: 1e-3,
            max_points: None,
            pe: PeSettings::default(),
            exp3: Exp3Settings::default(),
            seed: 0,
        }
    }

    pub fn admissible_error(&self) -> f64 {
        self.alpha / (self.horizon as f64).powf(self.q)
    }

    pub fn misspecification(&self) -> f64 {
        self.norm_bound * self.admissible_error()
    }

    pub fn validate(&self) -> Result<(), RkhsError> {
        let bad = |m: &str| Err(RkhsError::Invalid(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.q > 0.0 && self.alpha > 0.0) {
            return bad("q and alpha must be positive");
        }
        let e = self.admissible_error();
        if !(e > 0.0 && e.is_finite()) {
            return bad("admissible error alpha / T^q must be positive and finite");
        }
        Ok(())
    }

    fn linear_params(&self) -> LinBanditParams<f64> {
        LinBanditParams {
            lambda: self.lambda,
            noise: self.noise,
            norm_bound: self.norm_bound,
            delta: self.delta,
            misspecification: self.misspecification(),
        }
    }
}

/// Source of rewards. `round` is zero-based and every round calls
/// `reward` exactly once.
pub trait RewardOracle {
    fn reward(&mut self, round: usize, arm: usize) -> f64;
}

impl<F: FnMut(usize, usize) -> f64> RewardOracle for F {
    fn reward(&mut self, round: usize, arm: usize) -> f64 {
        self(round, arm)
    }
}

/// `y_t = f(x_t) + eps_t` from a synthetic environment.
pub struct StochasticOracle<'a> {
    env: &'a SyntheticEnv,
    noise: NoiseStream,
}

impl<'a> StochasticOracle<'a> {
    pub fn new(env: &'a SyntheticEnv, run_seed: u64) -> Self {
        Self {
            env,
            noise: env.noise_stream(run_seed),
        }
    }
}

impl RewardOracle for StochasticOracle<'_> {
    fn reward(&mut self, _round: usize, arm: usize) -> f64 {
        self.env.pull(arm, &mut self.noise)
    }
}

/// Noiseless `f_t(x_t)` from an oblivious sequence.
pub struct AdversarialOracle<'a> {
    seq: &'a AdversarialSeq,
}

impl<'a> AdversarialOracle<'a> {
    pub fn new(seq: &'a AdversarialSeq) -> Self {
        Self { seq }
    }
}

impl RewardOracle for AdversarialOracle<'_> {
    fn reward(&mut self, round: usize, arm: usize) -> f64 {
        self.seq.value(round, arm)
    }
}

/// Arms played and timing of one run. Regret is computed by the caller,
/// who knows the reward function.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub arms: Vec<usize>,
    /// Seconds since the start of the round loop, after each round.
    pub elapsed: Vec<f64>,
    /// Basis construction, feature map and design time.
    pub setup_secs: f64,
    pub basis_size: usize,
    /// Feature dimension after any rank reduction.
    pub feature_dim: usize,
    pub admissible_error: f64,
    pub warnings: Vec<String>,
    /// EXP3 exponential weights `q_T` after the last round.
    pub final_weights: Option<Vec<f64>>,
}

impl RunTrace {
    pub fn loop_secs(&self) -> f64 {
        self.elapsed.last().copied().unwrap_or(0.0)
    }

    pub fn total_secs(&self) -> f64 {
        self.setup_secs + self.loop_secs()
    }
}

struct Recorder {
    start: Instant,
    trace: RunTrace,
    horizon: usize,
}

impl Recorder {
    fn new(trace: RunTrace, horizon: usize) -> Self {
        Self {
            start: Instant::now(),
            trace,
            horizon,
        }
    }

    fn round(&self) -> usize {
        self.trace.arms.len()
    }

    fn done(&self) -> bool {
        self.round() >= self.horizon
    }

    fn record(&mut self, arm: usize) {
        self.trace.arms.push(arm);
        self.trace.elapsed.push(self.start.elapsed().as_secs_f64());
    }
}

/// Rotates feature rows onto their top singular subspace when they do not
/// span `R^D`. The rotation is an isometry on the rows, so all inner
/// products between arm features are preserved.
pub fn reduce_to_span(features: DMatrix<f64>) -> (DMatrix<f64>, Option<(usize, usize)>) {
    let d = features.ncols();
    let (rank, basis) = row_space(&features, RANK_TOL);
    if rank == d || rank == 0 {
        (features, None)
    } else {
        (&features * basis, Some((d, rank)))
    }
}

fn check_arms(kernel: &Kernel64, arms: &PointSet64) -> Result<(), RkhsError> {
    if arms.is_empty() {
        return Err(RkhsError::Invalid("arm set is empty".into()));
    }
    if arms.dim() != kernel.dim() {
        return Err(RkhsError::Invalid(format!(
            "arm dimension {} does not match kernel dimension {}",
            arms.dim(),
            kernel.dim()
        )));
    }
    Ok(())
}

/// Runs one APG algorithm for `cfg.horizon` rounds: builds the Newton
/// basis on the arm set with the admissible error, maps every arm to its
/// features, and plays the configured linear rule with misspecification
/// `B * e`.
pub fn apg_run(
    cfg: &ApgConfig,
    kernel: &Kernel64,
    arms: &PointSet64,
    oracle: &mut dyn RewardOracle,
) -> Result<RunTrace, RkhsError> {
    cfg.validate()?;
    check_arms(kernel, arms)?;
    let setup = Instant::now();
    let e = cfg.admissible_error();
    let budget = cfg.max_points.unwrap_or_else(|| default_max_points(arms.len()));
    let basis = build_basis(kernel, arms, e, budget)?;
    let mut trace = RunTrace {
        basis_size: basis.len(),
        admissible_error: e,
        ..RunTrace::default()
    };
    match basis.status() {
        BasisStatus::Converged => {}
        BasisStatus::Truncated => trace
            .warnings
            .push(format!("basis truncated at {} points before reaching e = {e:e}", basis.len())),
        BasisStatus::PrecisionExhausted => trace.warnings.push(format!(
            "basis stopped at {} points: pivots fell below the precision floor",
            basis.len()
        )),
    }
    let mut features = FeatureMap::on_candidates(basis).into_features();
    if matches!(cfg.algorithm, ApgAlgorithm::Pe | ApgAlgorithm::Exp3) {
        let (reduced, change) = reduce_to_span(features);
        features = reduced;
        if let Some((from, to)) = change {
            trace
                .warnings
                .push(format!("arm features span {to} of {from} dimensions; rotated onto their span"));
        }
    }
    trace.feature_dim = features.ncols();

    match cfg.algorithm {
        ApgAlgorithm::Ucb | ApgAlgorithm::Ts => run_optimistic(cfg, &features, oracle, trace, setup),
        ApgAlgorithm::Pe => run_pe(cfg, &features, oracle, trace, setup),
        ApgAlgorithm::Exp3 => run_exp3(cfg, &features, oracle, trace, setup),
    }
}

fn run_optimistic(
    cfg: &ApgConfig,
    features: &DMatrix<f64>,
    oracle: &mut dyn RewardOracle,
    mut trace: RunTrace,
    setup: Instant,
) -> Result<RunTrace, RkhsError> {
    let mut state = LinBanditState::new(features.ncols(), cfg.linear_params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TS_STREAM));
    trace.setup_secs = setup.elapsed().as_secs_f64();
    let mut rec = Recorder::new(trace, cfg.horizon);
    while !rec.done() {
        let arm = match cfg.algorithm {
            ApgAlgorithm::Ts => state.ts_select(features, &mut rng)?,
            _ => state.ucb_select(features),
        };
        let y = oracle.reward(rec.round(), arm);
        state.update(&features.row(arm).transpose(), y);
        rec.record(arm);
    }
    Ok(rec.trace)
}

fn run_pe(
    cfg: &ApgConfig,
    features: &DMatrix<f64>,
    oracle: &mut dyn RewardOracle,
    mut trace: RunTrace,
    setup: Instant,
) -> Result<RunTrace, RkhsError> {
    let params = PhasedElimParams {
        delta: cfg.delta,
        schedule_scale: cfg.pe.schedule_scale.unwrap_or(cfg.noise * cfg.noise),
        ridge: cfg.pe.ridge,
        design_tol: cfg.pe.design_tol,
        design_max_iters: cfg.pe.design_max_iters,
    };
    let mut state = PhasedElimState::new(features.nrows(), params)?;
    trace.setup_secs = setup.elapsed().as_secs_f64();
    let mut rec = Recorder::new(trace, cfg.horizon);
    loop {
        let outcome = state.step(features, |arm| {
            if rec.done() {
                return None;
            }
            let y = oracle.reward(rec.round(), arm);
            rec.record(arm);
            Some(y)
        })?;
        if outcome == PhaseOutcome::HorizonReached || rec.done() {
            break;
        }
    }
    Ok(rec.trace)
}

fn run_exp3(
    cfg: &ApgConfig,
    features: &DMatrix<f64>,
    oracle: &mut dyn RewardOracle,
    mut trace: RunTrace,
    setup: Instant,
) -> Result<RunTrace, RkhsError> {
    let (n, d) = features.shape();
    let design = g_optimal_design(features, cfg.exp3.design_tol, cfg.exp3.design_max_iters)?;
    if !design.converged {
        trace.warnings.push(format!(
            "exploration design stopped at leverage {:.4} (target {d})",
            design.leverage_max
        ));
    }
    let eta = cfg
        .exp3
        .eta
        .unwrap_or_else(|| ((n.max(2) as f64).ln() / (d as f64 * cfg.horizon as f64)).sqrt());
    let mut state = Exp3State::new(&design, d, eta, cfg.norm_bound)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, EXP3_STREAM));
    trace.setup_secs = setup.elapsed().as_secs_f64();
    let mut rec = Recorder::new(trace, cfg.horizon);
    while !rec.done() {
        let round = state.begin_round(features, &mut rng);
        let g = oracle.reward(rec.round(), round.arm);
        state.finish_round(features, &round, g)?;
        rec.record(round.arm);
    }
    let mut trace = rec.trace;
    trace.final_weights = Some(state.distributions(features).0);
    Ok(trace)
}

/// APG-EXP3 against an oblivious sequence; rewards are observed without
/// noise.
pub fn apg_exp3_run(cfg: &ApgConfig, kernel: &Kernel64, seq: &AdversarialSeq) -> Result<RunTrace, RkhsError> {
    if cfg.algorithm != ApgAlgorithm::Exp3 {
        return Err(RkhsError::Invalid("apg_exp3_run needs the EXP3 rule".into()));
    }
    if cfg.horizon > seq.horizon() {
        return Err(RkhsError::Invalid(format!(
            "horizon {} exceeds the sequence length {}",
            cfg.horizon,
            seq.horizon()
        )));
    }
    let mut oracle = AdversarialOracle::new(seq);
    apg_run(cfg, kernel, seq.arms(), &mut oracle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgpParams {
    pub lambda: f64,
    pub noise: f64,
    pub norm_bound: f64,
    pub delta: f64,
}

impl IgpParams {
    /// `lambda = 1 + 2/T`, `B = 1`, `delta = 1e-3`.
    pub fn for_horizon(horizon: usize, noise: f64) -> Self {
        Self {
            lambda: 1.0 + 2.0 / horizon.max(1) as f64,
            noise,
            norm_bound: 1.0,
            delta: 1e-3,
        }
    }
}

/// GP-UCB with the information-gain surrogate `1/2 log det(I + K_t / lambda)`.
///
/// Keeps `(K_t + lambda I)^{-1}` as a dense `t x t` block grown by Schur
/// complements, and recomputes the posterior of every arm each round.
#[derive(Debug, Clone)]
pub struct IgpUcbState {
    kernel: Kernel64,
    arms: PointSet64,
    params: IgpParams,
    capacity: usize,
    t: usize,
    kinv: DMatrix<f64>,
    // row s holds K(x_s, a) for every arm a
    cross: DMatrix<f64>,
    work: DMatrix<f64>,
    y: DVector<f64>,
    alpha: DVector<f64>,
    gamma_hat: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
    fresh: bool,
}

impl IgpUcbState {
    pub fn new(kernel: Kernel64, arms: PointSet64, params: IgpParams, capacity: usize) -> Result<Self, RkhsError> {
        check_arms(&kernel, &arms)?;
        if !(params.lambda > 0.0) {
            return Err(RkhsError::Invalid("lambda must be positive".into()));
        }
        if !(params.delta > 0.0 && params.delta <= 1.0) {
            return Err(RkhsError::Invalid("delta must lie in (0, 1]".into()));
        }
        let n = arms.len();
        Ok(Self {
            kernel,
            params,
            capacity,
            t: 0,
            kinv: DMatrix::zeros(capacity, capacity),
            cross: DMatrix::zeros(capacity, n),
            work: DMatrix::zeros(capacity, n),
            y: DVector::zeros(capacity),
            alpha: DVector::zeros(capacity),
            gamma_hat: 0.0,
            mean: vec![0.0; n],
            var: arms.iter().map(|x| kernel.diag(x)).collect(),
            fresh: true,
            arms,
        })
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat
    }

    /// `B + R sqrt(2 (gamma_hat + 1 + log(1/delta)))`.
    pub fn beta(&self) -> f64 {
        let p = &self.params;
        p.norm_bound + p.noise * (2.0 * (self.gamma_hat + 1.0 + (1.0 / p.delta).ln())).sqrt()
    }

    /// `(K_t + lambda I)^{-1}`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.kinv.view((0, 0), (self.t, self.t)).into_owned()
    }

    fn refresh(&mut self) {
        if self.fresh {
            return;
        }
        let t = self.t;
        let n = self.arms.len();
        {
            let kinv = self.kinv.view((0, 0), (t, t));
            let cross = self.cross.view((0, 0), (t, n));
            let mut w = self.work.view_mut((0, 0), (t, n));
            w.gemm(1.0, &kinv, &cross, 0.0);
        }
        let alpha = &self.alpha.as_slice()[..t];
        for a in 0..n {
            let offset = a * self.capacity;
            let c = &self.cross.as_slice()[offset..offset + t];
            let w = &self.work.as_slice()[offset..offset + t];
            let quad: f64 = c.iter().zip(w).map(|(x, y)| x * y).sum();
            let mu: f64 = c.iter().zip(alpha).map(|(x, y)| x * y).sum();
            self.mean[a] = mu;
            self.var[a] = (self.kernel.diag(self.arms.point(a)) - quad).clamp(0.0, 1.0);
        }
        self.fresh = true;
    }

    /// Posterior means and variances of every arm given the data so far.
    pub fn posterior(&mut self) -> (&[f64], &[f64]) {
        self.refresh();
        (&self.mean, &self.var)
    }

    pub fn select(&mut self) -> usize {
        self.refresh();
        let beta = self.beta();
        argmax(self.mean.iter().zip(&self.var).map(|(m, v)| m + beta * v.sqrt())).unwrap_or(0)
    }

    /// Appends the observation `(x_arm, y)`.
    pub fn update(&mut self, arm: usize, y: f64) -> Result<(), RkhsError> {
        if self.t >= self.capacity {
            return Err(RkhsError::Invalid("IGP-UCB capacity exhausted".into()));
        }
        if arm >= self.arms.len() {
            return Err(RkhsError::Bandit(BanditError::BadArm(arm)));
        }
        self.refresh();
        let t = self.t;
        let lambda = self.params.lambda;
        self.gamma_hat += 0.5 * (1.0 + self.var[arm] / lambda).ln();

        let k = DVector::from_fn(t, |i, _| self.cross[(i, arm)]);
        let v = self.kinv.view((0, 0), (t, t)) * &k;
        let s = (self.kernel.diag(self.arms.point(arm)) + lambda - k.dot(&v)).max(lambda);
        {
            let mut block = self.kinv.view_mut((0, 0), (t, t));
            block.ger(1.0 / s, &v, &v, 1.0);
        }
        for i in 0..t {
            self.kinv[(i, t)] = -v[i] / s;
            self.kinv[(t, i)] = -v[i] / s;
        }
        self.kinv[(t, t)] = 1.0 / s;

        let x = self.arms.point(arm).to_vec();
        for a in 0..self.arms.len() {
            self.cross[(t, a)] = self.kernel.eval(&x, self.arms.point(a));
        }
        self.y[t] = y;
        self.t += 1;
        let t = self.t;
        let alpha = self.kinv.view((0, 0), (t, t)) * self.y.rows(0, t);
        self.alpha.rows_mut(0, t).copy_from(&alpha);
        self.fresh = false;
        Ok(())
    }
}

/// IGP-UCB for `horizon` rounds.
pub fn igp_ucb_run(
    kernel: &Kernel64,
    arms: &PointSet64,
    oracle: &mut dyn RewardOracle,
    params: IgpParams,
    horizon: usize,
) -> Result<RunTrace, RkhsError> {
    if horizon == 0 {
        return Err(RkhsError::Invalid("horizon must be at least 1".into()));
    }
    let setup = Instant::now();
    let mut state = IgpUcbState::new(*kernel, arms.clone(), params, horizon)?;
    let trace = RunTrace {
        setup_secs: setup.elapsed().as_secs_f64(),
        ..RunTrace::default()
    };
    let mut rec = Recorder::new(trace, horizon);
    while !rec.done() {
        let arm = state.select();
        let y = oracle.reward(rec.round(), arm);
        state.update(arm, y)?;
        rec.record(arm);
    }
    Ok(rec.trace)
}
