//! Benchmark driver: configuration, seeded execution, regret
//! normalization and CSV output.
//!
//! Output layout under the output directory:
//!
//! * `results/` holds everything that is a function of the configuration
//!   alone (regret curves, summaries) and is bit-identical across reruns;
//! * `timing/` holds wall-clock measurements;
//! * `plot.gp` is a gnuplot script for the mean curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::environments::{
    derive_seed, generate_adversarial, benchmark_grid_size, AdversarialSeq, EnvError, EnvOptions, L1Norm,
    SyntheticEnv,
};
use crate::kernels::KernelSpec;
use crate::misspec_bandits::{g_optimal_design, Design};
use crate::pgreedy::{build_basis, decay_diagnostics, default_max_points, FeatureMap, NewtonBasis};
use crate::rkhs_bandits::{
    apg_exp3_run, apg_run, igp_ucb_run, ApgAlgorithm, ApgConfig, Exp3Settings, IgpParams, PeSettings,
    RkhsError, RunTrace, StochasticOracle,
};
use crate::{Kernel64, PointSet64};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Run(#[from] RkhsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ApgUcb,
    ApgPe,
    ApgTs,
    ApgExp3,
    IgpUcb,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Self::ApgUcb => "APG-UCB",
            Self::ApgPe => "APG-PE",
            Self::ApgTs => "APG-TS",
            Self::ApgExp3 => "APG-EXP3",
            Self::IgpUcb => "IGP-UCB",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::ApgUcb => "apg-ucb",
            Self::ApgPe => "apg-pe",
            Self::ApgTs => "apg-ts",
            Self::ApgExp3 => "apg-exp3",
            Self::IgpUcb => "igp-ucb",
        }
    }

    fn apg(self) -> Option<ApgAlgorithm> {
        match self {
            Self::ApgUcb => Some(ApgAlgorithm::Ucb),
            Self::ApgPe => Some(ApgAlgorithm::Pe),
            Self::ApgTs => Some(ApgAlgorithm::Ts),
            Self::ApgExp3 => Some(ApgAlgorithm::Exp3),
            Self::IgpUcb => None,
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub dim: Option<usize>,
    /// Grid size `m` for every dimension.
    pub grid: Option<usize>,
    /// Grid sizes for d = 1, 2, 3, ...; the benchmark grids when unset.
    pub grid_sizes: Option<Vec<usize>>,
    pub n_envs: usize,
    pub max_centers: usize,
    pub power_tol: f64,
    pub noise_scale: f64,
    pub l1: L1Norm,
    /// Overrides the environment noise standard deviation.
    pub noise_sigma: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        let o = EnvOptions::default();
        Self {
            dim: None,
            grid: None,
            grid_sizes: None,
            n_envs: 10,
            max_centers: o.max_centers,
            power_tol: o.power_tol,
            noise_scale: o.noise_scale,
            l1: o.l1,
            noise_sigma: None,
        }
    }
}

impl EnvSection {
    pub fn options(&self) -> EnvOptions {
        EnvOptions {
            max_centers: self.max_centers,
            power_tol: self.power_tol,
            noise_scale: self.noise_scale,
            l1: self.l1,
        }
    }

    pub fn grid_size(&self, dim: usize) -> Result<usize, HarnessError> {
        if let Some(m) = self.grid {
            return Ok(m);
        }
        if let Some(sizes) = &self.grid_sizes {
            return sizes.get(dim.wrapping_sub(1)).copied().ok_or_else(|| {
                HarnessError::Config(format!("env.grid_sizes has no entry for d = {dim}"))
            });
        }
        Ok(benchmark_grid_size(dim)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApgSection {
    pub q: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub delta: f64,
    pub norm_bound: f64,
    /// Sub-Gaussian scale `R`; the average environment noise when unset.
    pub noise: Option<f64>,
    pub max_points: Option<usize>,
    /// Explicit admissible error for the `basis` and `design` commands.
    pub basis_tol: Option<f64>,
}

impl Default for ApgSection {
    fn default() -> Self {
        Self {
            q: 0.5,
            alpha: 5e-3,
            lambda: 1.0,
            delta: 1e-3,
            norm_bound: 1.0,
            noise: None,
            max_points: None,
            basis_tol: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgpSection {
    /// Defaults to `1 + 2/T`.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp3Section {
    pub q: f64,
    /// Defaults to `log|A|`.
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub design_tol: f64,
    pub design_max_iters: usize,
    pub drift_period: usize,
    pub n_seeds: usize,
    /// Size of the trailing window in the adversarial summary.
    pub tail: usize,
}

impl Default for Exp3Section {
    fn default() -> Self {
        let s = Exp3Settings::default();
        Self {
            q: 1.0,
            alpha: None,
            eta: None,
            design_tol: s.design_tol,
            design_max_iters: s.design_max_iters,
            drift_period: 500,
            n_seeds: 20,
            tail: 2000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub algorithm: Option<Algorithm>,
    pub env_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub algorithms: Vec<Algorithm>,
    pub dims: Vec<usize>,
    /// Kernels to sweep; the top-level `kernel` when empty.
    pub kernels: Vec<KernelSpec>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::ApgUcb, Algorithm::IgpUcb],
            dims: vec![1, 2, 3],
            kernels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            tol: 0.01,
            max_iters: 10_000,
        }
    }
}

/// Complete experiment configuration. Every section is optional in the
/// file; [`Config::require`] checks what a command needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub horizon: Option<usize>,
    pub threads: Option<usize>,
    pub kernel: Option<KernelSpec>,
    pub env: EnvSection,
    pub apg: ApgSection,
    pub igp: IgpSection,
    pub pe: PeSettings,
    pub exp3: Exp3Section,
    pub run: RunSection,
    pub bench: BenchSection,
    pub design: DesignSection,
}

/// Built-in configurations.
pub const PRESETS: &[(&str, &str)] = &[
    ("benchmark", PRESET_BENCHMARK),
    ("benchmark-rq-d1", PRESET_BENCHMARK_RQ_D1),
    ("reduced", PRESET_REDUCED),
    ("smoke", PRESET_SMOKE),
];

const PRESET_BENCHMARK: &str = r#"
horizon = 5000
[bench]
algorithms = ["apg-ucb", "apg-pe", "apg-ts", "igp-ucb"]
dims = [1, 2, 3]
[[bench.kernels]]
family = "rq"
lengthscale_factor = 0.3
[[bench.kernels]]
family = "se"
lengthscale_factor = 0.2
"#;

const PRESET_BENCHMARK_RQ_D1: &str = r#"
horizon = 5000
[bench]
algorithms = ["apg-ucb", "igp-ucb"]
dims = [1]
[[bench.kernels]]
family = "rq"
shape = 2.0
lengthscale = 0.3
"#;

const PRESET_REDUCED: &str = r#"
horizon = 2000
[env]
grid_sizes = [500, 23, 8]
[bench]
algorithms = ["apg-ucb", "igp-ucb"]
dims = [1, 2, 3]
[[bench.kernels]]
family = "rq"
lengthscale_factor = 0.3
[[bench.kernels]]
family = "se"
lengthscale_factor = 0.2
"#;

const PRESET_SMOKE: &str = r#"
horizon = 10
[env]
n_envs = 2
grid_sizes = [50, 8, 4]
[bench]
algorithms = ["apg-ucb", "apg-pe", "apg-ts", "igp-ucb"]
dims = [1]
[[bench.kernels]]
family = "se"
lengthscale_factor = 0.2
"#;

impl Config {
    /// Parses TOML; errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim().to_string();
            if path == "." || path.is_empty() {
                HarnessError::Config(msg)
            } else {
                HarnessError::Config(format!("at `{path}`: {msg}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str) -> Result<Self, HarnessError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                HarnessError::Config(format!("unknown preset `{name}` (expected one of: {})", names.join(", ")))
            })?;
        Self::from_toml(text)
    }

    /// Fails with the dotted names of missing required keys.
    pub fn require(&self, keys: &[&str]) -> Result<(), HarnessError> {
        let missing: Vec<&str> = keys
            .iter()
            .copied()
            .filter(|k| match *k {
                "horizon" => self.horizon.is_none(),
                "kernel" => self.kernel.is_none(),
                "env.dim" => self.env.dim.is_none(),
                "run.algorithm" => self.run.algorithm.is_none(),
                _ => false,
            })
            .collect();
        match missing.as_slice() {
            [] => Ok(()),
            [one] => Err(HarnessError::Config(format!("missing required key `{one}`"))),
            many => Err(HarnessError::Config(format!(
                "missing required keys {}",
                many.iter().map(|k| format!("`{k}`")).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    /// The thread count is excluded since it does not affect results.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&Self {
            threads: None,
            ..self.clone()
        })
        .expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn horizon(&self) -> Result<usize, HarnessError> {
        self.require(&["horizon"])?;
        let t = self.horizon.unwrap_or(0);
        if t == 0 {
            return Err(HarnessError::Config("`horizon` must be at least 1".into()));
        }
        Ok(t)
    }

    fn kernels(&self) -> Result<Vec<KernelSpec>, HarnessError> {
        if !self.bench.kernels.is_empty() {
            return Ok(self.bench.kernels.clone());
        }
        self.require(&["kernel"])?;
        Ok(vec![self.kernel.expect("checked")])
    }

    pub fn arm_set(&self, dim: usize) -> Result<PointSet64, HarnessError> {
        if dim == 0 {
            return Err(HarnessError::Config("dimension must be positive".into()));
        }
        Ok(PointSet64::grid(dim, self.env.grid_size(dim)?))
    }

    /// APG parameters for `alg` on `n_arms` arms with noise scale `noise`.
    pub fn apg_config(&self, alg: ApgAlgorithm, horizon: usize, n_arms: usize, noise: f64, seed: u64) -> ApgConfig {
        let mut cfg = ApgConfig::standard(alg, horizon, n_arms, self.apg.noise.unwrap_or(noise));
        if alg == ApgAlgorithm::Exp3 {
            cfg.q = self.exp3.q;
            cfg.alpha = self.exp3.alpha.unwrap_or(cfg.alpha);
        } else {
            cfg.q = self.apg.q;
            cfg.alpha = self.apg.alpha;
        }
        cfg.lambda = self.apg.lambda;
        cfg.delta = self.apg.delta;
        cfg.norm_bound = self.apg.norm_bound;
        cfg.max_points = self.apg.max_points;
        cfg.pe = self.pe;
        cfg.exp3 = Exp3Settings {
            eta: self.exp3.eta,
            design_tol: self.exp3.design_tol,
            design_max_iters: self.exp3.design_max_iters,
        };
        cfg.seed = seed;
        cfg
    }

    pub fn igp_params(&self, horizon: usize, noise: f64) -> IgpParams {
        let mut p = IgpParams::for_horizon(horizon, self.apg.noise.unwrap_or(noise));
        if let Some(l) = self.igp.lambda {
            p.lambda = l;
        }
        p.norm_bound = self.apg.norm_bound;
        p.delta = self.apg.delta;
        p
    }
}

/// Stable 64-bit FNV-1a of a label, for seed derivation.
fn label_hash(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of environment `index` for a kernel and dimension.
pub fn env_seed(base: u64, kernel: &KernelSpec, dim: usize, index: usize) -> u64 {
    derive_seed(derive_seed(base, label_hash(&kernel.label())), (dim as u64) << 32 | index as u64)
}

/// Per-round regret against the best arm and its running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Cumulative regret divided by `f* - mean f`; `None` for constant `f`.
    pub normalized: Option<Vec<f64>>,
}

impl RegretCurve {
    pub fn from_arms(env: &SyntheticEnv, arms: &[usize]) -> Self {
        let f_star = env.f_star();
        let instant: Vec<f64> = arms.iter().map(|&a| f_star - env.value(a)).collect();
        let cumulative = running_sum(&instant);
        let normalized = normalize(&cumulative, env);
        Self {
            instant,
            cumulative,
            normalized,
        }
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

fn running_sum(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Divides by `f* - (1/|A|) sum f`, the expected per-round regret of
/// uniform play, so that uniform play has slope one. Returns `None` with
/// a warning when `f` is constant on the arm set.
pub fn normalize(cumulative: &[f64], env: &SyntheticEnv) -> Option<Vec<f64>> {
    let gap = env.f_star() - env.mean_value();
    if !(gap > 0.0) {
        warn!("reward function is constant on the arm set; skipping normalization");
        return None;
    }
    Some(cumulative.iter().map(|r| r / gap).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub algorithm: Algorithm,
    pub kernel: String,
    pub dim: usize,
    pub env_index: usize,
    pub env_seed: u64,
    pub run_seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub trace: RunTrace,
    pub curve: RegretCurve,
}

/// Runs one stochastic algorithm on one environment. All algorithms on
/// the same environment see the same noise sequence.
pub fn run_algorithm(
    cfg: &Config,
    alg: Algorithm,
    env: &SyntheticEnv,
    noise_bound: f64,
    horizon: usize,
    run_seed: u64,
) -> Result<RunTrace, RkhsError> {
    let mut oracle = StochasticOracle::new(env, 0);
    match alg.apg() {
        Some(a) => {
            let apg = cfg.apg_config(a, horizon, env.n_arms(), noise_bound, run_seed);
            apg_run(&apg, env.kernel(), env.arms(), &mut oracle)
        }
        None => igp_ucb_run(
            env.kernel(),
            env.arms(),
            &mut oracle,
            cfg.igp_params(horizon, noise_bound),
            horizon,
        ),
    }
}

/// All runs for one (kernel, d) pair.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub n_arms: usize,
    /// `R` handed to the algorithms: the average environment noise.
    pub noise_bound: f64,
    pub runs: Vec<Result<RunRecord, String>>,
}

impl CaseResult {
    pub fn slug(&self) -> String {
        format!("{}_d{}", slug(&self.kernel.label()), self.dim)
    }

    pub fn successful(&self, alg: Algorithm) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .filter(move |r| r.meta.algorithm == alg)
    }

    /// Mean of the normalized cumulative regret at the final round.
    pub fn mean_final_normalized(&self, alg: Algorithm) -> Option<f64> {
        let finals: Vec<f64> = self
            .successful(alg)
            .filter_map(|r| r.curve.normalized.as_ref().and_then(|c| c.last().copied()))
            .collect();
        (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64)
    }

    /// Mean normalized cumulative regret at round `t` (one-based).
    pub fn mean_normalized_at(&self, alg: Algorithm, t: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .successful(alg)
            .filter_map(|r| r.curve.normalized.as_ref().and_then(|c| c.get(t - 1).copied()))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_total_secs(&self, alg: Algorithm) -> Option<f64> {
        let vals: Vec<f64> = self.successful(alg).map(|r| r.trace.total_secs()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn sum_total_secs(&self, alg: Algorithm) -> f64 {
        self.successful(alg).map(|r| r.trace.total_secs()).sum()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.is_err()).count()
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub config_hash: String,
    pub horizon: usize,
    pub algorithms: Vec<Algorithm>,
    pub cases: Vec<CaseResult>,
}

impl BenchResult {
    pub fn failures(&self) -> usize {
        self.cases.iter().map(CaseResult::failures).sum()
    }
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot build thread pool: {e}")))
}

/// Generates the environments of every (kernel, d) case.
pub fn bench_environments(cfg: &Config) -> Result<Vec<(KernelSpec, usize, Vec<SyntheticEnv>)>, HarnessError> {
    let mut cases = Vec::new();
    for spec in cfg.kernels()? {
        for &dim in &cfg.bench.dims {
            let kernel = spec.build(dim).map_err(|e| HarnessError::Config(e.to_string()))?;
            let arms = cfg.arm_set(dim)?;
            let envs = (0..cfg.env.n_envs)
                .into_par_iter()
                .map(|i| make_env(cfg, kernel, spec, arms.clone(), env_seed(cfg.seed, &spec, dim, i)))
                .collect::<Result<Vec<_>, _>>()?;
            cases.push((spec, dim, envs));
        }
    }
    Ok(cases)
}

fn make_env(
    cfg: &Config,
    kernel: Kernel64,
    spec: KernelSpec,
    arms: PointSet64,
    seed: u64,
) -> Result<SyntheticEnv, HarnessError> {
    let mut env = SyntheticEnv::generate(kernel, arms, seed, cfg.env.options())?.with_spec(spec);
    if let Some(s) = cfg.env.noise_sigma {
        env.set_noise_sigma(s);
    }
    Ok(env)
}

/// Runs the full (kernel x d x environment x algorithm) matrix. Runs are
/// distributed over the pool and collected in index order, so results do
/// not depend on the thread count.
pub fn run_bench(cfg: &Config) -> Result<BenchResult, HarnessError> {
    let horizon = cfg.horizon()?;
    if cfg.bench.algorithms.is_empty() {
        return Err(HarnessError::Config("`bench.algorithms` is empty".into()));
    }
    if cfg.env.n_envs == 0 {
        return Err(HarnessError::Config("`env.n_envs` must be at least 1".into()));
    }
    let pool = thread_pool(cfg.threads)?;
    let hash = cfg.hash();
    let cases = pool.install(|| -> Result<Vec<CaseResult>, HarnessError> {
        let generated = bench_environments(cfg)?;
        let mut cases = Vec::new();
        for (spec, dim, envs) in generated {
            let noise_bound = envs.iter().map(|e| e.noise_sigma()).sum::<f64>() / envs.len() as f64;
            let jobs: Vec<(usize, Algorithm)> = (0..envs.len())
                .flat_map(|i| cfg.bench.algorithms.iter().map(move |&a| (i, a)))
                .collect();
            let runs = jobs
                .par_iter()
                .map(|&(i, alg)| {
                    let env = &envs[i];
                    let run_seed = derive_seed(env.seed(), alg.stream());
                    let meta = RunMeta {
                        algorithm: alg,
                        kernel: spec.label(),
                        dim,
                        env_index: i,
                        env_seed: env.seed(),
                        run_seed,
                    };
                    run_algorithm(cfg, alg, env, noise_bound, horizon, run_seed)
                        .map(|trace| RunRecord {
                            curve: RegretCurve::from_arms(env, &trace.arms),
                            meta,
                            trace,
                        })
                        .map_err(|e| format!("{} env {i}: {e}", alg.label()))
                })
                .collect();
            cases.push(CaseResult {
                kernel: spec,
                dim,
                n_arms: envs[0].n_arms(),
                noise_bound,
                runs,
            });
        }
        Ok(cases)
    })?;
    Ok(BenchResult {
        config_hash: hash,
        horizon,
        algorithms: cfg.bench.algorithms.clone(),
        cases,
    })
}

fn header(hash: &str, extra: &str) -> String {
    let mut h = format!("# config_hash={hash}\n");
    if !extra.is_empty() {
        let _ = writeln!(h, "# {extra}");
    }
    h
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-run regret CSV: `round,arm,regret,cumulative_regret,normalized_regret`.
pub fn run_csv(hash: &str, rec: &RunRecord) -> String {
    let m = &rec.meta;
    let mut s = header(
        hash,
        &format!(
            "algorithm={} kernel={} d={} env={} env_seed={} run_seed={}",
            m.algorithm.label(),
            m.kernel,
            m.dim,
            m.env_index,
            m.env_seed,
            m.run_seed
        ),
    );
    s.push_str("round,arm,regret,cumulative_regret,normalized_regret\n");
    for (t, &arm) in rec.trace.arms.iter().enumerate() {
        let norm = rec.curve.normalized.as_ref().map(|c| c[t]);
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            t + 1,
            arm,
            rec.curve.instant[t],
            rec.curve.cumulative[t],
            fmt_opt(norm)
        );
    }
    s
}

/// Mean and standard deviation across runs of the normalized cumulative
/// regret at every round, one column pair per algorithm.
pub fn mean_curves_csv(hash: &str, case: &CaseResult, algorithms: &[Algorithm], horizon: usize) -> String {
    let mut s = header(hash, &format!("kernel={} d={} arms={}", case.kernel.label(), case.dim, case.n_arms));
    s.push_str("round");
    for a in algorithms {
        let _ = write!(s, ",{0}_mean,{0}_sd", a.slug());
    }
    s.push('\n');
    let curves: Vec<Vec<&Vec<f64>>> = algorithms
        .iter()
        .map(|&a| case.successful(a).filter_map(|r| r.curve.normalized.as_ref()).collect())
        .collect();
    for t in 0..horizon {
        let _ = write!(s, "{}", t + 1);
        for runs in &curves {
            let vals: Vec<f64> = runs.iter().filter_map(|c| c.get(t).copied()).collect();
            if vals.is_empty() {
                s.push_str(",,");
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let _ = write!(s, ",{mean},{}", var.sqrt());
        }
        s.push('\n');
    }
    s
}

fn summary_csv(result: &BenchResult) -> String {
    let mut s = header(&result.config_hash, &format!("horizon={}", result.horizon));
    s.push_str("kernel,d,arms,noise_bound,algorithm,runs,failed,mean_final_regret,mean_final_normalized,mean_basis_size\n");
    for case in &result.cases {
        for &alg in &result.algorithms {
            let ok: Vec<&RunRecord> = case.successful(alg).collect();
            let failed = case
                .runs
                .iter()
                .filter(|r| matches!(r, Err(e) if e.starts_with(alg.label())))
                .count();
            let n = ok.len().max(1) as f64;
            let final_regret = ok.iter().map(|r| r.curve.final_regret()).sum::<f64>() / n;
            let basis = ok.iter().map(|r| r.trace.basis_size as f64).sum::<f64>() / n;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                case.kernel.label(),
                case.dim,
                case.n_arms,
                case.noise_bound,
                alg.label(),
                ok.len(),
                failed,
                final_regret,
                fmt_opt(case.mean_final_normalized(alg)),
                basis
            );
        }
    }
    s
}

/// Mean total seconds, one row per algorithm and one column per case.
fn timing_table_csv(result: &BenchResult) -> String {
    let mut s = header(&result.config_hash, "mean total wall time per run in seconds");
    s.push_str("algorithm");
    for case in &result.cases {
        let _ = write!(s, ",{} d={}", case.kernel.label(), case.dim);
    }
    s.push('\n');
    for &alg in &result.algorithms {
        s.push_str(alg.label());
        for case in &result.cases {
            let _ = write!(s, ",{}", fmt_opt(case.mean_total_secs(alg)));
        }
        s.push('\n');
    }
    s
}

fn timing_runs_csv(result: &BenchResult) -> String {
    let mut s = header(&result.config_hash, "");
    s.push_str("kernel,d,env,algorithm,setup_secs,loop_secs,total_secs,basis_size,feature_dim\n");
    for case in &result.cases {
        for rec in case.runs.iter().filter_map(|r| r.as_ref().ok()) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                rec.meta.kernel,
                rec.meta.dim,
                rec.meta.env_index,
                rec.meta.algorithm.label(),
                rec.trace.setup_secs,
                rec.trace.loop_secs(),
                rec.trace.total_secs(),
                rec.trace.basis_size,
                rec.trace.feature_dim
            );
        }
    }
    s
}

fn elapsed_csv(hash: &str, rec: &RunRecord) -> String {
    let mut s = header(hash, &format!("setup_secs={}", rec.trace.setup_secs));
    s.push_str("round,elapsed_secs\n");
    for (t, e) in rec.trace.elapsed.iter().enumerate() {
        let _ = writeln!(s, "{},{e}", t + 1);
    }
    s
}

fn plot_script(result: &BenchResult) -> String {
    let mut s = format!("# config_hash={}\n", result.config_hash);
    s.push_str("set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n");
    s.push_str("set terminal pngcairo size 800,600\nset xlabel 'round'\nset ylabel 'normalized cumulative regret'\n");
    for case in &result.cases {
        let file = format!("results/mean_{}.csv", case.slug());
        let _ = writeln!(s, "set output 'mean_{}.png'", case.slug());
        let _ = writeln!(s, "set title '{} d={}'", case.kernel.label(), case.dim);
        let parts: Vec<String> = result
            .algorithms
            .iter()
            .enumerate()
            .map(|(k, a)| format!("'{file}' using 1:{} with lines title '{}'", 2 + 2 * k, a.label()))
            .collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    }
    s
}

/// Writes `results/`, `timing/` and `plot.gp` under `out_dir`.
pub fn write_bench(result: &BenchResult, out_dir: &Path) -> Result<(), HarnessError> {
    let hash = &result.config_hash;
    let results = out_dir.join("results");
    let timing = out_dir.join("timing");
    for case in &result.cases {
        for rec in case.runs.iter().filter_map(|r| r.as_ref().ok()) {
            let name = format!("{}_env{}_{}.csv", case.slug(), rec.meta.env_index, rec.meta.algorithm.slug());
            write_file(&results.join("runs").join(&name), &run_csv(hash, rec))?;
            write_file(&timing.join("runs").join(&name), &elapsed_csv(hash, rec))?;
        }
        write_file(
            &results.join(format!("mean_{}.csv", case.slug())),
            &mean_curves_csv(hash, case, &result.algorithms, result.horizon),
        )?;
    }
    write_file(&results.join("summary.csv"), &summary_csv(result))?;
    let failures: Vec<&String> = result
        .cases
        .iter()
        .flat_map(|c| c.runs.iter().filter_map(|r| r.as_ref().err()))
        .collect();
    if !failures.is_empty() {
        let text: String = failures.iter().map(|f| format!("{f}\n")).collect();
        write_file(&results.join("failures.txt"), &text)?;
    }
    write_file(&timing.join("table.csv"), &timing_table_csv(result))?;
    write_file(&timing.join("runs.csv"), &timing_runs_csv(result))?;
    write_file(&out_dir.join("plot.gp"), &plot_script(result))?;
    Ok(())
}

/// Newton basis for the configured kernel and dimension. The admissible
/// error is `apg.basis_tol` if set, `alpha / T^q` otherwise.
pub fn configured_basis(cfg: &Config) -> Result<(NewtonBasis<f64>, PointSet64), HarnessError> {
    cfg.require(&["kernel", "env.dim"])?;
    let dim = cfg.env.dim.expect("checked");
    let kernel = cfg
        .kernel
        .expect("checked")
        .build(dim)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let arms = cfg.arm_set(dim)?;
    let e = match cfg.apg.basis_tol {
        Some(e) => e,
        None => cfg.apg.alpha / (cfg.horizon()? as f64).powf(cfg.apg.q),
    };
    let budget = cfg.apg.max_points.unwrap_or_else(|| default_max_points(arms.len()));
    let basis = build_basis(&kernel, &arms, e, budget).map_err(RkhsError::from)?;
    Ok((basis, arms))
}

/// One row per selected point: `step,index,max_power_sq,x1..xd`.
pub fn basis_csv(hash: &str, basis: &NewtonBasis<f64>) -> String {
    let dim = basis.kernel().dim();
    let mut s = header(
        hash,
        &format!(
            "points={} admissible_error={} status={:?}",
            basis.len(),
            basis.admissible_error(),
            basis.status()
        ),
    );
    s.push_str("step,index,max_power_sq");
    for k in 1..=dim {
        let _ = write!(s, ",x{k}");
    }
    s.push('\n');
    for (step, (&idx, p2)) in basis.selected_indices().iter().zip(basis.residual_trace()).enumerate() {
        let _ = write!(s, "{},{idx},{p2}", step + 1);
        for c in basis.points().point(step) {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

/// Decay-fit summary line for a basis, if it has enough points.
pub fn decay_summary(basis: &NewtonBasis<f64>) -> String {
    match decay_diagnostics(basis) {
        Ok(r) if r.degenerate => "decay fit: trace is numerically constant".to_string(),
        Ok(r) => format!(
            "decay fit: exponential slope {:.4} (R^2 {:.3}), polynomial slope {:.4} (R^2 {:.3})",
            r.exponential.slope, r.exponential.r_squared, r.polynomial.slope, r.polynomial.r_squared
        ),
        Err(e) => format!("decay fit skipped: {e}"),
    }
}

/// G-optimal design on the configured Newton features.
pub fn configured_design(cfg: &Config) -> Result<(Design<f64>, DMatrix<f64>), HarnessError> {
    let (basis, _) = configured_basis(cfg)?;
    let features = FeatureMap::on_candidates(basis).into_features();
    let (features, _) = crate::rkhs_bandits::reduce_to_span(features);
    let design = g_optimal_design(&features, cfg.design.tol, cfg.design.max_iters).map_err(RkhsError::from)?;
    Ok((design, features))
}

pub fn design_csv(hash: &str, design: &Design<f64>, features: &DMatrix<f64>) -> String {
    let q = crate::misspec_bandits::design_matrix(features, &design.weights);
    let lev = q
        .try_inverse()
        .map(|inv| crate::misspec_bandits::leverages(features, &inv))
        .unwrap_or_default();
    let mut s = header(
        hash,
        &format!(
            "dim={} leverage_max={} converged={} iterations={}",
            features.ncols(),
            design.leverage_max,
            design.converged,
            design.iterations
        ),
    );
    s.push_str("arm,weight,leverage\n");
    for i in design.support() {
        let _ = writeln!(s, "{i},{},{}", design.weights[i], lev.get(i).copied().unwrap_or(f64::NAN));
    }
    s
}

/// Result of a single `run`.
#[derive(Debug)]
pub struct SingleRun {
    pub env: SyntheticEnv,
    pub record: RunRecord,
}

/// One algorithm on environment `run.env_index` of the configured case.
pub fn run_single(cfg: &Config) -> Result<SingleRun, HarnessError> {
    cfg.require(&["horizon", "kernel", "env.dim", "run.algorithm"])?;
    let horizon = cfg.horizon()?;
    let spec = cfg.kernel.expect("checked");
    let dim = cfg.env.dim.expect("checked");
    let alg = cfg.run.algorithm.expect("checked");
    let kernel = spec.build(dim).map_err(|e| HarnessError::Config(e.to_string()))?;
    let seed = env_seed(cfg.seed, &spec, dim, cfg.run.env_index);
    let env = make_env(cfg, kernel, spec, cfg.arm_set(dim)?, seed)?;
    let run_seed = derive_seed(seed, alg.stream());
    let trace = run_algorithm(cfg, alg, &env, env.noise_sigma(), horizon, run_seed)?;
    let record = RunRecord {
        curve: RegretCurve::from_arms(&env, &trace.arms),
        meta: RunMeta {
            algorithm: alg,
            kernel: spec.label(),
            dim,
            env_index: cfg.run.env_index,
            env_seed: seed,
            run_seed,
        },
        trace,
    };
    Ok(SingleRun { env, record })
}

/// Outcome of the adversarial EXP3 experiment.
#[derive(Debug, Clone)]
pub struct AdvReport {
    pub horizon: usize,
    pub n_arms: usize,
    pub tail: usize,
    /// Mean over seeds of the cumulative regret against the best fixed arm.
    pub mean_cumulative: Vec<f64>,
    pub sd_cumulative: Vec<f64>,
    /// Mean over seeds of the expected cumulative regret of uniform play.
    pub uniform_cumulative: Vec<f64>,
    /// Mean over seeds of the cumulative regret of full-information
    /// follow-the-leader, which plays the best arm on all past functions.
    pub leader_cumulative: Vec<f64>,
    /// Mean per-round regret over the trailing window.
    pub tail_regret: f64,
    pub tail_uniform: f64,
    pub tail_leader: f64,
    pub failures: Vec<String>,
    pub total_secs: f64,
}

/// Per-round regret of the played arms, of uniform play (in expectation)
/// and of full-information follow-the-leader.
fn adversarial_regret(seq: &AdversarialSeq, arms: &[usize]) -> [Vec<f64>; 3] {
    let best = seq.best_fixed_arm();
    let n = seq.n_arms() as f64;
    let mut alg = Vec::with_capacity(arms.len());
    let mut uni = Vec::with_capacity(arms.len());
    let mut ftl = Vec::with_capacity(arms.len());
    let mut totals = vec![0.0; seq.n_arms()];
    for (t, &a) in arms.iter().enumerate() {
        let f = seq.at(t);
        let fb = f.value(best);
        alg.push(fb - f.value(a));
        uni.push(fb - f.values().iter().sum::<f64>() / n);
        let leader = crate::scalar::argmax(totals.iter().copied()).unwrap_or(0);
        ftl.push(fb - f.value(leader));
        for (tot, v) in totals.iter_mut().zip(f.values()) {
            *tot += v;
        }
    }
    [alg, uni, ftl]
}

/// APG-EXP3 on `exp3.n_seeds` independent oblivious sequences.
pub fn run_adversarial(cfg: &Config) -> Result<AdvReport, HarnessError> {
    cfg.require(&["horizon", "kernel", "env.dim"])?;
    let horizon = cfg.horizon()?;
    let spec = cfg.kernel.expect("checked");
    let dim = cfg.env.dim.expect("checked");
    let kernel = spec.build(dim).map_err(|e| HarnessError::Config(e.to_string()))?;
    let arms = cfg.arm_set(dim)?;
    if cfg.exp3.n_seeds == 0 || cfg.exp3.drift_period == 0 {
        return Err(HarnessError::Config("`exp3.n_seeds` and `exp3.drift_period` must be positive".into()));
    }
    let tail = cfg.exp3.tail.clamp(1, horizon);
    let pool = thread_pool(cfg.threads)?;
    let outcomes: Vec<Result<([Vec<f64>; 3], f64), String>> = pool.install(|| {
        (0..cfg.exp3.n_seeds)
            .into_par_iter()
            .map(|s| {
                let seed = derive_seed(derive_seed(cfg.seed, label_hash("adv")), s as u64);
                let seq = generate_adversarial(kernel, arms.clone(), horizon, cfg.exp3.drift_period, seed, cfg.env.options())
                    .map_err(|e| format!("seed {s}: {e}"))?;
                let apg = cfg.apg_config(ApgAlgorithm::Exp3, horizon, arms.len(), 0.0, derive_seed(seed, 1));
                let trace = apg_exp3_run(&apg, &kernel, &seq).map_err(|e| format!("seed {s}: {e}"))?;
                Ok((adversarial_regret(&seq, &trace.arms), trace.total_secs()))
            })
            .collect()
    });
    let mut failures = Vec::new();
    let mut runs = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(e),
        }
    }
    let k = runs.len().max(1) as f64;
    let cum: Vec<Vec<f64>> = runs.iter().map(|r| running_sum(&r.0[0])).collect();
    let uni: Vec<Vec<f64>> = runs.iter().map(|r| running_sum(&r.0[1])).collect();
    let ftl: Vec<Vec<f64>> = runs.iter().map(|r| running_sum(&r.0[2])).collect();
    let mut mean_cumulative = vec![0.0; horizon];
    let mut sd_cumulative = vec![0.0; horizon];
    let mut uniform_cumulative = vec![0.0; horizon];
    let mut leader_cumulative = vec![0.0; horizon];
    for t in 0..horizon {
        let mean = cum.iter().map(|c| c[t]).sum::<f64>() / k;
        let var = if cum.len() > 1 {
            cum.iter().map(|c| (c[t] - mean) * (c[t] - mean)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        mean_cumulative[t] = mean;
        sd_cumulative[t] = var.sqrt();
        uniform_cumulative[t] = uni.iter().map(|c| c[t]).sum::<f64>() / k;
        leader_cumulative[t] = ftl.iter().map(|c| c[t]).sum::<f64>() / k;
    }
    let window = |c: &[f64]| {
        let before = if horizon > tail { c[horizon - tail - 1] } else { 0.0 };
        (c[horizon - 1] - before) / tail as f64
    };
    Ok(AdvReport {
        horizon,
        n_arms: arms.len(),
        tail,
        tail_regret: if runs.is_empty() { f64::NAN } else { window(&mean_cumulative) },
        tail_uniform: if runs.is_empty() { f64::NAN } else { window(&uniform_cumulative) },
        tail_leader: if runs.is_empty() { f64::NAN } else { window(&leader_cumulative) },
        mean_cumulative,
        sd_cumulative,
        uniform_cumulative,
        failures,
        leader_cumulative,
        total_secs: runs.iter().map(|r| r.1).sum(),
    })
}

pub fn adversarial_csv(hash: &str, report: &AdvReport) -> String {
    let mut s = header(
        hash,
        &format!(
            "arms={} tail={} tail_regret_per_round={} tail_uniform_per_round={} tail_leader_per_round={}",
            report.n_arms, report.tail, report.tail_regret, report.tail_uniform, report.tail_leader
        ),
    );
    s.push_str("round,mean_cumulative_regret,sd_cumulative_regret,uniform_cumulative_regret,leader_cumulative_regret\n");
    for t in 0..report.horizon {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            t + 1,
            report.mean_cumulative[t],
            report.sd_cumulative[t],
            report.uniform_cumulative[t],
            report.leader_cumulative[t]
        );
    }
    s
}

/// Writes the adversarial outputs under `out_dir`.
pub fn write_adversarial(hash: &str, report: &AdvReport, out_dir: &Path) -> Result<(), HarnessError> {
    write_file(&out_dir.join("results").join("adversarial.csv"), &adversarial_csv(hash, report))?;
    let mut t = header(hash, "");
    let _ = writeln!(t, "total_secs\n{}", report.total_secs);
    write_file(&out_dir.join("timing").join("adversarial.csv"), &t)
}

/// Writes a single run's regret and timing CSVs.
pub fn write_single(hash: &str, run: &SingleRun, out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let m = &run.record.meta;
    let name = format!("{}_d{}_env{}_{}.csv", slug(&m.kernel), m.dim, m.env_index, m.algorithm.slug());
    let path = out_dir.join("results").join(&name);
    write_file(&path, &run_csv(hash, &run.record))?;
    write_file(&out_dir.join("timing").join(&name), &elapsed_csv(hash, &run.record))?;
    let env_path = out_dir.join("results").join(format!("env_{}_d{}_env{}.json", slug(&m.kernel), m.dim, m.env_index));
    run.env.save(&env_path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            let cfg = Config::preset(name).unwrap();
            assert!(cfg.horizon.is_some());
        }
        let cfg = Config::preset("reduced").unwrap();
        assert_eq!(cfg.env.grid_size(3).unwrap(), 8);
        assert_eq!(cfg.arm_set(2).unwrap().len(), 529);
        assert!(Config::preset("nope").is_err());
    }

    #[test]
    fn config_errors_name_keys() {
        let err = Config::from_toml("horizon = \"ten\"").unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
        let err = Config::from_toml("[apg]\nq = \"x\"").unwrap_err();
        assert!(err.to_string().contains("apg.q"), "{err}");
        let err = Config::from_toml("[kernel]\nfamily = \"laplace\"").unwrap_err();
        assert!(err.to_string().contains("rq") && err.to_string().contains("kernel"), "{err}");
        let err = Config::from_toml("[env]\nbogus = 1").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let cfg = Config::from_toml("horizon = 10\n[kernel]\nfamily = \"se\"\n[env]\ndim = 1").unwrap();
        let err = run_single(&cfg).unwrap_err();
        assert!(err.to_string().contains("run.algorithm"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::preset("smoke").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.threads = Some(7);
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn normalization_and_regret_curves() {
        let k = Kernel64::default_se(1).unwrap();
        let env = SyntheticEnv::generate(k, PointSet64::grid(1, 50), 4, EnvOptions::default()).unwrap();
        let best = env.best_arm();
        let zero = RegretCurve::from_arms(&env, &vec![best; 20]);
        assert!(zero.cumulative.iter().all(|&c| c == 0.0));
        assert!(zero.normalized.unwrap().iter().all(|&c| c == 0.0));

        // uniform play over every arm once: normalized regret equals the count
        let all: Vec<usize> = (0..50).collect();
        let curve = RegretCurve::from_arms(&env, &all);
        let last = *curve.normalized.unwrap().last().unwrap();
        assert!((last - 50.0).abs() < 1e-9);
        assert!(curve.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn constant_function_skips_normalization() {
        let k = Kernel64::default_se(1).unwrap();
        let arms = PointSet64::from_flat(1, vec![0.5, 0.5]);
        let env = SyntheticEnv::generate(k, arms, 1, EnvOptions::default()).unwrap();
        assert_eq!(env.f_star(), env.mean_value());
        assert!(normalize(&[0.0, 0.0], &env).is_none());
    }

    #[test]
    fn smoke_bench_is_thread_independent() {
        let mut cfg = Config::preset("smoke").unwrap();
        cfg.threads = Some(1);
        let a = run_bench(&cfg).unwrap();
        cfg.threads = Some(3);
        let b = run_bench(&cfg).unwrap();
        assert_eq!(a.failures(), 0);
        for (ca, cb) in a.cases.iter().zip(&b.cases) {
            for (ra, rb) in ca.runs.iter().zip(&cb.runs) {
                let (ra, rb) = (ra.as_ref().unwrap(), rb.as_ref().unwrap());
                assert_eq!(run_csv("h", ra), run_csv("h", rb));
            }
        }
    }
}
