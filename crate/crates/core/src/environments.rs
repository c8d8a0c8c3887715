//! Synthetic RKHS reward functions on grid arm sets.
//!
//! A reward function is `f = sum_i a_i phi_i` where `phi_1..phi_m` is an
//! orthonormal basis of the span of kernel translates at randomly sampled
//! centers and `a` is uniform on the unit sphere, so `||f||_H = 1`.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{KernelError, KernelSpec};
use crate::pgreedy::{BasisStatus, NewtonBuilder, PGreedyError};
use crate::{Kernel64, PointSet64};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Basis(#[from] PGreedyError),
    #[error("benchmark grids exist for d = 1, 2, 3 only (got d = {0}); pass an explicit grid size")]
    NoBenchmarkGrid(usize),
    #[error("no admissible center left after {0} resampling attempts")]
    CentersExhausted(usize),
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed environment file: {0}")]
    Json(#[from] serde_json::Error),
}

/// How `||f||_{L^1(A)}` is computed from the values on the arm set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Norm {
    /// `(1/|A|) sum |f(x)|`
    #[default]
    Mean,
    /// `sum |f(x)|`
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOptions {
    pub max_centers: usize,
    /// Sampling stops once `max_x P(x)` drops below this value.
    pub power_tol: f64,
    /// Noise standard deviation as a multiple of `||f||_{L^1(A)}`.
    pub noise_scale: f64,
    pub l1: L1Norm,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            max_centers: 300,
            power_tol: 1e-4,
            noise_scale: 0.2,
            l1: L1Norm::Mean,
        }
    }
}

/// `m_d` with `|A| = m_d^d`.
pub fn benchmark_grid_size(dim: usize) -> Result<usize, EnvError> {
    match dim {
        1 => Ok(1000),
        2 => Ok(30),
        3 => Ok(10),
        d => Err(EnvError::NoBenchmarkGrid(d)),
    }
}

pub fn benchmark_arm_set(dim: usize) -> Result<PointSet64, EnvError> {
    Ok(PointSet64::grid(dim, benchmark_grid_size(dim)?))
}

/// SplitMix64 finalizer applied to `base ^ tag`, for deriving independent
/// stream seeds from one base seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fixed reward function on a finite arm set.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    kernel: Kernel64,
    spec: Option<KernelSpec>,
    arms: PointSet64,
    centers: Vec<usize>,
    coeffs: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<f64>,
    best_arm: usize,
    l1_norm: f64,
    noise_sigma: f64,
    seed: u64,
    options: EnvOptions,
}

/// On-disk form of an environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvRecord {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub arms: Vec<f64>,
    pub centers: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub seed: u64,
    pub options: EnvOptions,
    pub noise_sigma: f64,
}

/// Samples centers without replacement in random order until the budget
/// or the power tolerance is reached. Candidates whose residual power is
/// already below the tolerance are skipped, since the center Gram matrix
/// would be numerically singular with them.
fn sample_centers<'a>(
    kernel: &'a Kernel64,
    arms: &'a PointSet64,
    options: &EnvOptions,
    rng: &mut ChaCha8Rng,
) -> Result<NewtonBuilder<'a, f64>, EnvError> {
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.shuffle(rng);
    let mut builder = NewtonBuilder::new(kernel, arms)?;
    let tol_sq = options.power_tol * options.power_tol;
    let mut skipped = 0;
    for idx in order {
        if builder.len() >= options.max_centers || builder.max_power_sq() < tol_sq {
            break;
        }
        if builder.power_sq()[idx] < tol_sq {
            skipped += 1;
            continue;
        }
        builder.push(idx)?;
    }
    if builder.is_empty() {
        return Err(EnvError::CentersExhausted(skipped));
    }
    Ok(builder)
}

impl SyntheticEnv {
    /// Random environment on `arms`; bit-identical for equal seeds.
    pub fn generate(
        kernel: Kernel64,
        arms: PointSet64,
        seed: u64,
        options: EnvOptions,
    ) -> Result<Self, EnvError> {
        if arms.is_empty() {
            return Err(EnvError::Invalid("empty arm set".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let builder = sample_centers(&kernel, &arms, &options, &mut rng)?;
        let m = builder.len();
        let mut a: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in a.iter_mut() {
            *v /= norm;
        }
        let basis = builder.finish(options.power_tol, Vec::new(), BasisStatus::Converged);
        let centers = basis.selected_indices().to_vec();
        let coeffs = DVector::from_vec(a);
        let values = basis.candidate_values() * &coeffs;
        let weights = basis.translate_weights(&coeffs);
        Ok(Self::assemble(
            kernel,
            arms,
            centers,
            coeffs.as_slice().to_vec(),
            weights.as_slice().to_vec(),
            values.as_slice().to_vec(),
            seed,
            options,
        ))
    }

    /// Environment on the benchmark grid for dimension `dim`.
    pub fn generate_benchmark(spec: KernelSpec, dim: usize, seed: u64, options: EnvOptions) -> Result<Self, EnvError> {
        let kernel = spec.build(dim)?;
        let mut env = Self::generate(kernel, benchmark_arm_set(dim)?, seed, options)?;
        env.spec = Some(spec);
        Ok(env)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kernel: Kernel64,
        arms: PointSet64,
        centers: Vec<usize>,
        coeffs: Vec<f64>,
        weights: Vec<f64>,
        values: Vec<f64>,
        seed: u64,
        options: EnvOptions,
    ) -> Self {
        let best_arm = crate::scalar::argmax(values.iter().copied()).unwrap_or(0);
        let abs_sum: f64 = values.iter().map(|v| v.abs()).sum();
        let l1_norm = match options.l1 {
            L1Norm::Mean => abs_sum / values.len() as f64,
            L1Norm::Sum => abs_sum,
        };
        Self {
            kernel,
            spec: None,
            arms,
            centers,
            coeffs,
            weights,
            values,
            best_arm,
            l1_norm,
            noise_sigma: options.noise_scale * l1_norm,
            seed,
            options,
        }
    }

    pub fn with_spec(mut self, spec: KernelSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    pub fn kernel(&self) -> &Kernel64 {
        &self.kernel
    }

    pub fn arms(&self) -> &PointSet64 {
        &self.arms
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Arm indices of the centers in sampling order.
    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Coefficients over the orthonormal basis; unit length.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients over the kernel translates `K(., xi_j)`.
    pub fn kernel_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `f` at every arm.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, arm: usize) -> f64 {
        self.values[arm]
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    pub fn f_star(&self) -> f64 {
        self.values[self.best_arm]
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn options(&self) -> &EnvOptions {
        &self.options
    }

    /// Replaces the noise level, e.g. with zero for noiseless play.
    pub fn set_noise_sigma(&mut self, sigma: f64) {
        self.noise_sigma = sigma;
    }

    /// `sqrt(<f, f>_H)` from the kernel-translate form, using
    /// `<f, K(., xi_j)> = f(xi_j)`: `||f||^2 = sum_j w_j f(xi_j)`.
    pub fn rkhs_norm(&self) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(&c, w)| w * self.values[c])
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// `f(x) = sum_j w_j K(x, xi_j)` at an arbitrary point.
    pub fn eval_at(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(&c, w)| w * self.kernel.eval(x, self.arms.point(c)))
            .sum()
    }

    /// Noise stream for one run. The `t`-th draw is consumed in round `t`
    /// whatever arm is pulled.
    pub fn noise_stream(&self, run_seed: u64) -> NoiseStream {
        NoiseStream::new(self.noise_sigma, derive_seed(self.seed, run_seed))
    }

    /// `f(x_arm) + noise`.
    pub fn pull(&self, arm: usize, noise: &mut NoiseStream) -> f64 {
        self.values[arm] + noise.next_noise()
    }

    pub fn to_record(&self) -> Result<EnvRecord, EnvError> {
        let kernel = self
            .spec
            .ok_or_else(|| EnvError::Invalid("environment has no kernel spec attached".into()))?;
        Ok(EnvRecord {
            kernel,
            dim: self.arms.dim(),
            arms: self.arms.as_flat().to_vec(),
            centers: self.centers.clone(),
            coeffs: self.coeffs.clone(),
            seed: self.seed,
            options: self.options,
            noise_sigma: self.noise_sigma,
        })
    }

    /// Rebuilds the environment from its centers and coefficients.
    pub fn from_record(record: &EnvRecord) -> Result<Self, EnvError> {
        let kernel = record.kernel.build(record.dim)?;
        if record.arms.len() % record.dim != 0 {
            return Err(EnvError::Invalid("arm coordinates not a multiple of dim".into()));
        }
        if record.centers.len() != record.coeffs.len() {
            return Err(EnvError::Invalid("centers and coefficients differ in length".into()));
        }
        let arms = PointSet64::from_flat(record.dim, record.arms.clone());
        let mut builder = NewtonBuilder::new(&kernel, &arms)?;
        for &c in &record.centers {
            if c >= arms.len() {
                return Err(EnvError::Invalid(format!("center index {c} out of range")));
            }
            builder.push(c)?;
        }
        let basis = builder.finish(record.options.power_tol, Vec::new(), BasisStatus::Converged);
        let coeffs = DVector::from_column_slice(&record.coeffs);
        let values = basis.candidate_values() * &coeffs;
        let weights = basis.translate_weights(&coeffs);
        let mut env = Self::assemble(
            kernel,
            arms.clone(),
            record.centers.clone(),
            record.coeffs.clone(),
            weights.as_slice().to_vec(),
            values.as_slice().to_vec(),
            record.seed,
            record.options,
        );
        env.noise_sigma = record.noise_sigma;
        env.spec = Some(record.kernel);
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let json = serde_json::to_string(&self.to_record()?)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let record: EnvRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_record(&record)
    }
}

/// Gaussian noise drawn once per round.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn next_noise(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        if self.sigma == 0.0 {
            0.0
        } else {
            self.sigma * z
        }
    }
}

/// An oblivious sequence of reward functions, each held for
/// `drift_period` rounds.
#[derive(Debug, Clone)]
pub struct AdversarialSeq {
    functions: Vec<SyntheticEnv>,
    drift_period: usize,
    horizon: usize,
}

impl AdversarialSeq {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn drift_period(&self) -> usize {
        self.drift_period
    }

    pub fn functions(&self) -> &[SyntheticEnv] {
        &self.functions
    }

    pub fn n_arms(&self) -> usize {
        self.functions[0].n_arms()
    }

    pub fn arms(&self) -> &PointSet64 {
        self.functions[0].arms()
    }

    /// The function active in round `t` (zero-based).
    pub fn at(&self, t: usize) -> &SyntheticEnv {
        &self.functions[(t / self.drift_period).min(self.functions.len() - 1)]
    }

    pub fn value(&self, t: usize, arm: usize) -> f64 {
        self.at(t).value(arm)
    }

    /// `sum_t f_t(x)` for every arm.
    pub fn cumulative_values(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_arms()];
        for (j, f) in self.functions.iter().enumerate() {
            let start = j * self.drift_period;
            let len = self.horizon.min(start + self.drift_period) - start;
            for (tot, v) in totals.iter_mut().zip(f.values()) {
                *tot += len as f64 * v;
            }
        }
        totals
    }

    /// Best fixed arm in hindsight.
    pub fn best_fixed_arm(&self) -> usize {
        crate::scalar::argmax(self.cumulative_values()).unwrap_or(0)
    }
}

/// `ceil(T / drift_period)` independent unit-norm functions.
pub fn generate_adversarial(
    kernel: Kernel64,
    arms: PointSet64,
    horizon: usize,
    drift_period: usize,
    seed: u64,
    options: EnvOptions,
) -> Result<AdversarialSeq, EnvError> {
    if horizon == 0 || drift_period == 0 {
        return Err(EnvError::Invalid("horizon and drift period must be positive".into()));
    }
    let count = horizon.div_ceil(drift_period);
    let functions = (0..count)
        .map(|j| SyntheticEnv::generate(kernel, arms.clone(), derive_seed(seed, j as u64), options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AdversarialSeq {
        functions,
        drift_period,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::FamilyName;

    fn se_env(dim: usize, m: usize, seed: u64) -> SyntheticEnv {
        let k = Kernel64::default_se(dim).unwrap();
        SyntheticEnv::generate(k, PointSet64::grid(dim, m), seed, EnvOptions::default())
            .unwrap()
            .with_spec(KernelSpec::with_factor(FamilyName::Se, 0.2))
    }

    #[test]
    fn benchmark_grid_sizes() {
        assert_eq!(benchmark_arm_set(1).unwrap().len(), 1000);
        assert_eq!(benchmark_arm_set(2).unwrap().len(), 900);
        assert_eq!(benchmark_arm_set(3).unwrap().len(), 1000);
        assert!(matches!(benchmark_arm_set(4), Err(EnvError::NoBenchmarkGrid(4))));
    }

    #[test]
    fn single_center_is_signed_translate() {
        let k = Kernel64::default_rq(1).unwrap();
        let opts = EnvOptions {
            max_centers: 1,
            ..EnvOptions::default()
        };
        let env = SyntheticEnv::generate(k, PointSet64::grid(1, 50), 3, opts).unwrap();
        assert_eq!(env.centers().len(), 1);
        assert!((env.coeffs()[0].abs() - 1.0).abs() < 1e-15);
        let c = env.arms().point(env.centers()[0]).to_vec();
        for (i, x) in env.arms().iter().enumerate() {
            assert!((env.value(i) - env.coeffs()[0] * k.eval(x, &c)).abs() < 1e-15);
        }
        assert!((env.rkhs_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_oracle_and_unit_norm() {
        for (dim, m) in [(1, 1000), (2, 30), (3, 10)] {
            for (kernel, seed) in [Kernel64::default_se(dim), Kernel64::default_rq(dim)]
                .into_iter()
                .flat_map(|k| {
                    let k = k.unwrap();
                    (0..3).map(move |s| (k, s))
                })
            {
                let env = SyntheticEnv::generate(kernel, PointSet64::grid(dim, m), seed, EnvOptions::default()).unwrap();
                let err = env
                    .arms()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (env.eval_at(x) - env.value(i)).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-8, "d={dim}: expansion error {err:e}");
                // any norm oracle goes through the center kernel matrix,
                // whose condition number reaches 1e10 and beyond here
                assert!((env.rkhs_norm() - 1.0).abs() < 1e-4, "norm {}", env.rkhs_norm());
                assert!(env.centers().len() <= 300);
                let mut sorted = env.centers().to_vec();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted.len(), env.centers().len());
                assert!(env.values().iter().all(|&v| v <= env.f_star()));
            }
        }
    }

    #[test]
    fn unit_norm_when_well_conditioned() {
        let opts = EnvOptions {
            power_tol: 0.05,
            ..EnvOptions::default()
        };
        for seed in 0..5 {
            let k = Kernel64::default_rq(2).unwrap();
            let env = SyntheticEnv::generate(k, PointSet64::grid(2, 20), seed, opts).unwrap();
            assert!((env.rkhs_norm() - 1.0).abs() < 1e-10, "norm {}", env.rkhs_norm());
        }
    }

    #[test]
    fn reproducible_from_seed_and_file() {
        let a = se_env(2, 15, 42);
        let b = se_env(2, 15, 42);
        assert_eq!(a.centers(), b.centers());
        assert_eq!(a.coeffs(), b.coeffs());
        assert_eq!(a.values(), b.values());
        let c = se_env(2, 15, 43);
        assert_ne!(a.coeffs(), c.coeffs());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        a.save(&path).unwrap();
        let back = SyntheticEnv::load(&path).unwrap();
        assert_eq!(back.values(), a.values());
        assert_eq!(back.noise_sigma(), a.noise_sigma());
    }

    #[test]
    fn noise_statistics() {
        let env = se_env(1, 200, 5);
        let sigma = env.noise_sigma();
        assert!(sigma > 0.0);
        assert!((sigma - 0.2 * env.l1_norm()).abs() < 1e-15);
        let mut noise = env.noise_stream(1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| env.pull(7, &mut noise)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - env.value(7)).abs() < 4.0 * sigma / (n as f64).sqrt());
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.03);

        let mut quiet = env.clone();
        quiet.set_noise_sigma(0.0);
        let mut noise = quiet.noise_stream(1);
        assert_eq!(quiet.pull(7, &mut noise), quiet.value(7));
    }

    #[test]
    fn noise_does_not_depend_on_arm() {
        let env = se_env(1, 100, 8);
        let mut s1 = env.noise_stream(3);
        let mut s2 = env.noise_stream(3);
        for t in 0..50 {
            let a = env.pull(t % 100, &mut s1) - env.value(t % 100);
            let b = env.pull(99 - t, &mut s2) - env.value(99 - t);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn l1_sum_variant() {
        let k = Kernel64::default_se(1).unwrap();
        let opts = EnvOptions {
            l1: L1Norm::Sum,
            ..EnvOptions::default()
        };
        let mean_env = SyntheticEnv::generate(k, PointSet64::grid(1, 100), 2, EnvOptions::default()).unwrap();
        let sum_env = SyntheticEnv::generate(k, PointSet64::grid(1, 100), 2, opts).unwrap();
        assert!((sum_env.l1_norm() - 100.0 * mean_env.l1_norm()).abs() < 1e-10);
    }

    #[test]
    fn adversarial_sequences() {
        let k = Kernel64::default_se(1).unwrap();
        let arms = PointSet64::grid(1, 10);
        let constant = generate_adversarial(k, arms.clone(), 40, 40, 1, EnvOptions::default()).unwrap();
        assert_eq!(constant.functions().len(), 1);
        assert_eq!(constant.value(0, 3), constant.value(39, 3));

        let drifting = generate_adversarial(k, arms.clone(), 7, 1, 1, EnvOptions::default()).unwrap();
        assert_eq!(drifting.functions().len(), 7);
        for f in drifting.functions() {
            assert!((f.rkhs_norm() - 1.0).abs() < 1e-8);
        }
        let seq = generate_adversarial(k, arms, 25, 10, 9, EnvOptions::default()).unwrap();
        assert_eq!(seq.functions().len(), 3);
        let totals = seq.cumulative_values();
        let direct: f64 = (0..25).map(|t| seq.value(t, 4)).sum();
        assert!((totals[4] - direct).abs() < 1e-12);
    }
}
