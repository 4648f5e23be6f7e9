//! Multilevel Monte Carlo estimation of `E[U(T)]` with pairwise-coupled levels.
//!
//! Level `ℓ` contributes the sample mean of `U^{ℓ,F} - U^{ℓ-1,C}` (with
//! `U^{-1,C} = 0`), differences taken on the fine band with the coarse member
//! zero-padded. Levels are summed on the finest band.

use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseStreamKey, StreamRole};
use crate::reaction::OpCounter;
use crate::solver::{CoupledSolver, PairResolution, SchemeKind};
use crate::spectral::{ModelSpec, SpectralField};

/// Level growth rates: weak error `2^{-αℓ}`, coupled variance
/// `2^{-βℓ}`, cost `2^{γℓ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Rates {
    /// Rates the experiments use: `(1, 2, 1 + 1/(2φ))` for exponential Euler,
    /// `(φ, 2φ, 3/2)` for the other two schemes.
    pub fn experimental(scheme: SchemeKind, phi: f64) -> Self {
        match scheme {
            SchemeKind::ExpEuler => Rates {
                alpha: 1.0,
                beta: 2.0,
                gamma: 1.0 + 1.0 / (2.0 * phi),
            },
            SchemeKind::DriftExpEuler | SchemeKind::Milstein => Rates {
                alpha: phi,
                beta: 2.0 * phi,
                gamma: 1.5,
            },
        }
    }
}

/// Rule for the number of levels `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelRule {
    /// `⌈log₂(1/ε)/α⌉`
    WeakRate,
    /// `⌈log₂(1/ε)/φ⌉ - 2`
    RegularityMinusTwo,
    /// `⌈log₂(log₂(1/ε)/ε)⌉`
    LogCorrected,
    Fixed(u32),
}

impl LevelRule {
    pub fn experimental(scheme: SchemeKind) -> Self {
        match scheme {
            SchemeKind::ExpEuler => LevelRule::WeakRate,
            SchemeKind::DriftExpEuler | SchemeKind::Milstein => LevelRule::RegularityMinusTwo,
        }
    }
}

impl FromStr for LevelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak-rate" => Ok(LevelRule::WeakRate),
            "regularity-minus-two" => Ok(LevelRule::RegularityMinusTwo),
            "log-corrected" => Ok(LevelRule::LogCorrected),
            other => other
                .parse::<u32>()
                .map(LevelRule::Fixed)
                .map_err(|_| Error::Config(format!("unknown level rule {other:?}"))),
        }
    }
}

/// Resolution hierarchy `(N_ℓ, J_ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LevelSchedule {
    /// `J_ℓ = 2^{ℓ+2}`, `N_ℓ = 2⌈2^{ℓ/(2φ)+1}⌉`.
    ExpEulerExperiment { phi: f64 },
    /// `J_ℓ = 2^{ℓ+2}`, `N_ℓ = 2⌈2^{ℓ/2+1}⌉`.
    SqrtExperiment,
    /// `J_ℓ = J₀ 2^ℓ`, `N_ℓ ≈ N₀ 2^{νℓ}`; `ν = 1/(2φ)` and `ν = 1/2` give the
    /// two asymptotic cost schedules.
    Geometric { j0: usize, n0: usize, nu: f64 },
    /// `N_ℓ = J_ℓ = 2^{ℓ+2}`.
    Diagonal,
}

impl LevelSchedule {
    pub fn experimental(scheme: SchemeKind, phi: f64) -> Self {
        match scheme {
            SchemeKind::ExpEuler => LevelSchedule::ExpEulerExperiment { phi },
            SchemeKind::DriftExpEuler | SchemeKind::Milstein => LevelSchedule::SqrtExperiment,
        }
    }

    /// Asymptotic cost-optimal schedule for `scheme`.
    pub fn asymptotic(scheme: SchemeKind, phi: f64, j0: usize, n0: usize) -> Self {
        let nu = match scheme {
            SchemeKind::ExpEuler => 1.0 / (2.0 * phi),
            _ => 0.5,
        };
        LevelSchedule::Geometric { j0, n0, nu }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelResolution {
    pub level: u32,
    /// Band size used by the solver (a power of two).
    pub n_modes: usize,
    /// Band size the schedule formula asks for before rounding up.
    pub n_raw: usize,
    pub steps: usize,
}

/// `(N_ℓ, J_ℓ)` for `level`, with `N_ℓ` rounded up to a power of two.
pub fn level_resolutions(level: u32, schedule: &LevelSchedule) -> LevelResolution {
    let l = f64::from(level);
    let (n_raw, steps) = match *schedule {
        LevelSchedule::ExpEulerExperiment { phi } => {
            (2 * 2f64.powf(l / (2.0 * phi) + 1.0).ceil() as usize, 1usize << (level + 2))
        }
        LevelSchedule::SqrtExperiment => (2 * 2f64.powf(l / 2.0 + 1.0).ceil() as usize, 1usize << (level + 2)),
        LevelSchedule::Geometric { j0, n0, nu } => {
            ((n0 as f64 * 2f64.powf(nu * l)).ceil() as usize, j0 << level)
        }
        LevelSchedule::Diagonal => (1usize << (level + 2), 1usize << (level + 2)),
    };
    LevelResolution {
        level,
        n_modes: n_raw.max(2).next_power_of_two(),
        n_raw,
        steps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum VarianceMode {
    /// `V_ℓ = 2^{-βℓ}`.
    Model,
    /// `V_ℓ` from a pilot of `pilot` coupled pairs per level.
    Measured { pilot: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcConfig {
    pub epsilon: f64,
    pub scheme: SchemeKind,
    pub phi: f64,
    pub rates: Rates,
    pub schedule: LevelSchedule,
    pub level_rule: LevelRule,
    /// Sample multipliers for level 0 and for levels above 0.
    pub multipliers: (u64, u64),
    /// Constant in front of `ε^{-2}` inside the allocation ceiling.
    pub allocation_factor: f64,
    pub variance_mode: VarianceMode,
}

impl MlmcConfig {
    /// The parameter choices the numerical experiments use for `scheme` at regularity `phi`.
    pub fn experimental(scheme: SchemeKind, phi: f64, epsilon: f64) -> Self {
        Self {
            epsilon,
            scheme,
            phi,
            rates: Rates::experimental(scheme, phi),
            schedule: LevelSchedule::experimental(scheme, phi),
            level_rule: LevelRule::experimental(scheme),
            multipliers: (20, 5),
            allocation_factor: 2.0,
            variance_mode: VarianceMode::Model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("ε must lie in (0,1), got {}", self.epsilon)));
        }
        let Rates { alpha, beta, gamma } = self.rates;
        if !(alpha > 0.0 && beta > 0.0 && gamma > 0.0) {
            return Err(Error::Config("rates α, β, γ must be positive".into()));
        }
        if alpha < beta.min(gamma) / 2.0 {
            return Err(Error::Config(format!(
                "α = {alpha} < min(β, γ)/2 = {}",
                beta.min(gamma) / 2.0
            )));
        }
        if self.multipliers.0 == 0 || self.multipliers.1 == 0 {
            return Err(Error::Config("sample multipliers must be positive".into()));
        }
        if !(self.allocation_factor > 0.0) {
            return Err(Error::Config("allocation factor must be positive".into()));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::Config(format!("φ must lie in (0,1), got {}", self.phi)));
        }
        if let VarianceMode::Measured { pilot } = self.variance_mode {
            if pilot < 2 {
                return Err(Error::Config("pilot size must be >= 2".into()));
            }
        }
        Ok(())
    }

    pub fn num_levels(&self) -> Result<u32> {
        choose_num_levels(self.epsilon, self.rates.alpha, self.phi, self.level_rule)
    }
}

/// Finest level `L` for tolerance `epsilon` (floored at 0).
pub fn choose_num_levels(epsilon: f64, alpha: f64, phi: f64, rule: LevelRule) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("ε must lie in (0,1), got {epsilon}")));
    }
    let log_inv = (1.0 / epsilon).log2();
    let l = match rule {
        LevelRule::WeakRate => (log_inv / alpha).ceil(),
        LevelRule::RegularityMinusTwo => (log_inv / phi).ceil() - 2.0,
        LevelRule::LogCorrected => (log_inv / epsilon).log2().ceil(),
        LevelRule::Fixed(l) => f64::from(l),
    };
    Ok(l.max(0.0) as u32)
}

/// `C_ℓ = (ℓ+1) 2^{γℓ}`.
pub fn model_cost(level: u32, gamma: f64) -> f64 {
    f64::from(level + 1) * 2f64.powf(gamma * f64::from(level))
}

/// `V_ℓ = 2^{-βℓ}`.
pub fn model_variance(level: u32, beta: f64) -> f64 {
    2f64.powf(-beta * f64::from(level))
}

/// `M_ℓ = mult_ℓ ⌈a ε^{-2} √(V_ℓ/C_ℓ) Σ_j √(V_j C_j)⌉` for `ℓ = 0..=L`.
pub fn allocate_samples(config: &MlmcConfig, variances: &[f64], costs: &[f64]) -> Result<Vec<u64>> {
    if variances.len() != costs.len() || variances.is_empty() {
        return Err(Error::Usage(format!(
            "need one variance and one cost per level, got {} and {}",
            variances.len(),
            costs.len()
        )));
    }
    if variances.iter().chain(costs).any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Config("level variances and costs must be positive".into()));
    }
    let total: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    let scale = config.allocation_factor / (config.epsilon * config.epsilon) * total;
    Ok(variances
        .iter()
        .zip(costs)
        .enumerate()
        .map(|(l, (v, c))| {
            let mult = if l == 0 { config.multipliers.0 } else { config.multipliers.1 };
            mult * (scale * (v / c).sqrt()).ceil().max(1.0) as u64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: u32,
    pub n_modes: usize,
    pub n_raw: usize,
    pub steps: usize,
    pub samples: u64,
    pub v_model: f64,
    /// Sample mean of `‖U^{ℓ,F} - U^{ℓ-1,C}‖²_H`.
    pub v_measured: f64,
    pub v_measured_stderr: f64,
    pub c_model: f64,
    pub ops_measured: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcReport {
    pub scheme: SchemeKind,
    pub epsilon: f64,
    pub master_seed: u64,
    pub levels: Vec<LevelReport>,
    /// Estimated mean field on the finest band.
    pub mean: SpectralField,
    /// Per-level sample means of the coupled differences.
    pub level_means: Vec<SpectralField>,
}

impl MlmcReport {
    pub fn finest_level(&self) -> u32 {
        self.levels.last().map_or(0, |l| l.level)
    }

    pub fn total_model_cost(&self) -> f64 {
        total_cost(self)
    }

    pub fn total_ops(&self) -> u64 {
        self.levels.iter().map(|l| l.ops_measured).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.levels.iter().map(|l| l.seconds).sum()
    }
}

/// `Σ_ℓ M_ℓ C_ℓ`.
pub fn total_cost(report: &MlmcReport) -> f64 {
    report
        .levels
        .iter()
        .map(|l| l.samples as f64 * l.c_model)
        .sum()
}

/// Running sums over a batch of coupled samples.
#[derive(Debug, Clone)]
pub(crate) struct LevelSums {
    pub diff_sum: Vec<Complex64>,
    pub sq_norm_sum: f64,
    pub sq_norm_sq_sum: f64,
    pub ops: OpCounter,
}

impl LevelSums {
    fn new(slots: usize) -> Self {
        Self {
            diff_sum: vec![Complex64::new(0.0, 0.0); slots],
            sq_norm_sum: 0.0,
            sq_norm_sq_sum: 0.0,
            ops: OpCounter::default(),
        }
    }

    fn merge(&mut self, other: &LevelSums) {
        for (a, b) in self.diff_sum.iter_mut().zip(&other.diff_sum) {
            *a += b;
        }
        self.sq_norm_sum += other.sq_norm_sum;
        self.sq_norm_sq_sum += other.sq_norm_sq_sum;
        self.ops.merge(other.ops);
    }
}

/// Number of replicas per deterministic reduction chunk; depends on `m` only.
fn chunk_size(m: u64) -> u64 {
    m.div_ceil(1024).max(1)
}

/// Samples `replicas` of `solver` and accumulates the fine-minus-coarse statistics
/// in replica order within fixed chunks, so the result does not depend on the
/// worker count.
pub(crate) fn sample_level(
    solver: &CoupledSolver,
    seed: u64,
    role: StreamRole,
    level: u32,
    replicas: std::ops::Range<u64>,
) -> LevelSums {
    let slots = solver.fine().slots();
    let m = replicas.end - replicas.start;
    let chunk = chunk_size(m);
    let n_chunks = m.div_ceil(chunk);
    let partials: Vec<LevelSums> = (0..n_chunks)
        .into_par_iter()
        .map_init(
            || solver.clone(),
            |solver, c| {
                let mut sums = LevelSums::new(slots);
                let lo = replicas.start + c * chunk;
                let hi = (lo + chunk).min(replicas.end);
                for r in lo..hi {
                    let key = NoiseStreamKey::new(seed, role, level, r);
                    solver.run(&key, &mut sums.ops, &mut ());
                    let (fine, coarse) = solver.final_modes();
                    let sq = accumulate_difference(&mut sums.diff_sum, fine, coarse);
                    sums.sq_norm_sum += sq;
                    sums.sq_norm_sq_sum += sq * sq;
                }
                sums
            },
        )
        .collect();
    let mut total = LevelSums::new(slots);
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Adds `fine - embed(coarse)` to `acc` and returns its squared `H` norm.
fn accumulate_difference(acc: &mut [Complex64], f: &[Complex64], c: &[Complex64]) -> f64 {
    let half = f.len() - 1;
    let mut sq = 0.0;
    for k in 0..f.len() {
        let d = if k < c.len() { f[k] - c[k] } else { f[k] };
        acc[k] += d;
        sq += SpectralField::slot_weight(k, half) * d.norm_sqr();
    }
    sq
}

/// Runs the multilevel estimator.
pub fn run_estimator(model: &ModelSpec, config: &MlmcConfig, master_seed: u64) -> Result<MlmcReport> {
    run_estimator_with_role(model, config, master_seed, StreamRole::Estimator)
}

/// [`run_estimator`] drawing from the streams of `role`, so pseudo-reference
/// runs never share noise with the estimates they are compared against.
pub fn run_estimator_with_role(
    model: &ModelSpec,
    config: &MlmcConfig,
    master_seed: u64,
    role: StreamRole,
) -> Result<MlmcReport> {
    config.validate()?;
    let top = config.num_levels()?;
    let resolutions: Vec<LevelResolution> =
        (0..=top).map(|l| level_resolutions(l, &config.schedule)).collect();
    let solvers: Vec<CoupledSolver> = resolutions
        .iter()
        .map(|r| {
            let coarse = (r.level > 0).then(|| {
                let c = &resolutions[r.level as usize - 1];
                (c.n_modes, c.steps)
            });
            CoupledSolver::new(
                model,
                config.scheme,
                PairResolution {
                    n_fine: r.n_modes,
                    j_fine: r.steps,
                    coarse,
                },
            )
        })
        .collect::<Result<_>>()?;

    let costs: Vec<f64> = (0..=top).map(|l| model_cost(l, config.rates.gamma)).collect();
    let v_model: Vec<f64> = (0..=top).map(|l| model_variance(l, config.rates.beta)).collect();
    let variances = match config.variance_mode {
        VarianceMode::Model => v_model.clone(),
        VarianceMode::Measured { pilot } => solvers
            .iter()
            .enumerate()
            .map(|(l, s)| {
                // pilot replicas live above the estimator's replica range
                let sums = sample_level(s, master_seed, role, l as u32, u64::MAX - pilot as u64..u64::MAX);
                (sums.sq_norm_sum / pilot as f64).max(f64::MIN_POSITIVE)
            })
            .collect(),
    };
    let samples = allocate_samples(config, &variances, &costs)?;

    let n_max = resolutions.iter().map(|r| r.n_modes).max().unwrap_or(2);
    let mut mean = SpectralField::zeros(n_max)?;
    let mut levels = Vec::with_capacity(resolutions.len());
    let mut level_means = Vec::with_capacity(resolutions.len());
    for (l, solver) in solvers.iter().enumerate() {
        let m = samples[l];
        let start = Instant::now();
        let sums = sample_level(solver, master_seed, role, l as u32, 0..m);
        let seconds = start.elapsed().as_secs_f64();
        let mf = m as f64;
        let level_mean = SpectralField::from_half_spectrum(
            solver.fine().n_modes(),
            sums.diff_sum.iter().map(|c| c / mf).collect(),
        )?;
        mean.add_scaled(1.0, &level_mean.embed(n_max)?)?;
        let v_hat = sums.sq_norm_sum / mf;
        let second = sums.sq_norm_sq_sum / mf;
        let v_stderr = if m > 1 {
            ((second - v_hat * v_hat).max(0.0) / (mf - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        let r = &resolutions[l];
        levels.push(LevelReport {
            level: r.level,
            n_modes: r.n_modes,
            n_raw: r.n_raw,
            steps: r.steps,
            samples: m,
            v_model: v_model[l],
            v_measured: v_hat,
            v_measured_stderr: v_stderr,
            c_model: costs[l],
            ops_measured: sums.ops.get(),
            seconds,
        });
        level_means.push(level_mean);
    }

    Ok(MlmcReport {
        scheme: config.scheme,
        epsilon: config.epsilon,
        master_seed,
        levels,
        mean,
        level_means,
    })
}

/// Mean and squared norm statistics of coupled differences on one level,
/// for variance-decay studies with a fixed sample count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelVariance {
    pub level: u32,
    pub n_modes: usize,
    pub steps: usize,
    pub samples: u64,
    pub v_measured: f64,
    pub v_stderr: f64,
}

/// Measures `E‖U^{ℓ,F} - U^{ℓ-1,C}‖²` on levels `levels` with `samples` pairs each.
pub fn measure_level_variances(
    model: &ModelSpec,
    scheme: SchemeKind,
    schedule: &LevelSchedule,
    levels: std::ops::RangeInclusive<u32>,
    samples: u64,
    master_seed: u64,
) -> Result<Vec<LevelVariance>> {
    if samples < 2 {
        return Err(Error::Config("need at least 2 samples per level".into()));
    }
    levels
        .map(|l| {
            let r = level_resolutions(l, schedule);
            let coarse = (l > 0).then(|| {
                let c = level_resolutions(l - 1, schedule);
                (c.n_modes, c.steps)
            });
            let solver = CoupledSolver::new(
                model,
                scheme,
                PairResolution {
                    n_fine: r.n_modes,
                    j_fine: r.steps,
                    coarse,
                },
            )?;
            let sums = sample_level(&solver, master_seed, StreamRole::Rates, l, 0..samples);
            let m = samples as f64;
            let v = sums.sq_norm_sum / m;
            let second = sums.sq_norm_sq_sum / m;
            Ok(LevelVariance {
                level: l,
                n_modes: r.n_modes,
                steps: r.steps,
                samples,
                v_measured: v,
                v_stderr: ((second - v * v).max(0.0) / (m - 1.0)).sqrt(),
            })
        })
        .collect()
}
