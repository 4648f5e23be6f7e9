use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::{triangular_wave_coefficients, SpectralField};
use crate::error::{Error, Result};
use crate::reaction::ReactionKind;

/// Map from `|n|` to a per-mode value (eigenvalue or noise weight).
pub type ModeLaw = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    TriangularWave,
    /// Any field; resized onto each solver band.
    Field(SpectralField),
}

impl InitialCondition {
    pub fn project(&self, n_modes: usize) -> Result<SpectralField> {
        match self {
            InitialCondition::TriangularWave => triangular_wave_coefficients(n_modes),
            InitialCondition::Field(f) => f.resize(n_modes),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InitialCondition::TriangularWave => "triangular-wave".into(),
            InitialCondition::Field(f) => format!("field[{}]", f.n_modes()),
        }
    }
}

/// Semilinear model `dU = (AU + f(U)) dt + dW` on the periodic unit interval,
/// with `A e_n = -λ_n e_n` and `W = Σ √q_n e_n w^n`.
#[derive(Clone)]
pub struct ModelSpec {
    pub final_time: f64,
    /// Noise decay exponent in the default law `q_n = λ_n^{-2b} / 4`.
    pub b: f64,
    pub reaction: ReactionKind,
    pub initial: InitialCondition,
    lambda: ModeLaw,
    noise: ModeLaw,
    lambda_label: String,
    noise_label: String,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("final_time", &self.final_time)
            .field("b", &self.b)
            .field("reaction", &self.reaction)
            .field("initial", &self.initial.label())
            .field("lambda", &self.lambda_label)
            .field("noise", &self.noise_label)
            .finish()
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(0.25, ReactionKind::Linear)
    }
}

/// `λ_0 = 1`, `λ_n = (2nπ)²/5`.
pub fn default_eigenvalue(n: u64) -> f64 {
    if n == 0 {
        1.0
    } else {
        let w = 2.0 * std::f64::consts::PI * n as f64;
        w * w / 5.0
    }
}

impl ModelSpec {
    /// Default eigenvalue and noise laws, triangular-wave initial data, `T = 1/2`.
    pub fn new(b: f64, reaction: ReactionKind) -> Self {
        Self {
            final_time: 0.5,
            b,
            reaction,
            initial: InitialCondition::TriangularWave,
            lambda: Arc::new(default_eigenvalue),
            noise: Arc::new(move |n| 0.25 * default_eigenvalue(n).powf(-2.0 * b)),
            lambda_label: "default".into(),
            noise_label: format!("quarter-lambda-pow(-2b), b={b}"),
        }
    }

    pub fn with_final_time(mut self, t: f64) -> Self {
        self.final_time = t;
        self
    }

    pub fn with_initial(mut self, initial: InitialCondition) -> Self {
        self.initial = initial;
        self
    }

    /// Replaces the eigenvalue law. The noise law is *not* rebuilt; call
    /// [`ModelSpec::with_noise_law`] too if it should follow the new spectrum.
    pub fn with_eigenvalue_law(
        mut self,
        label: impl Into<String>,
        law: impl Fn(u64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.lambda = Arc::new(law);
        self.lambda_label = label.into();
        self
    }

    pub fn with_noise_law(
        mut self,
        label: impl Into<String>,
        law: impl Fn(u64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.noise = Arc::new(law);
        self.noise_label = label.into();
        self
    }

    /// Switches the noise off (`q_n = 0`).
    pub fn deterministic(self) -> Self {
        self.with_noise_law("zero", |_| 0.0)
    }

    pub fn lambda(&self, n: u64) -> f64 {
        (self.lambda)(n)
    }

    pub fn q(&self, n: u64) -> f64 {
        (self.noise)(n)
    }

    pub fn eigenvalue_label(&self) -> &str {
        &self.lambda_label
    }

    pub fn noise_label(&self) -> &str {
        &self.noise_label
    }

    /// Regularity `φ = 1/4 + b` capped below 1.
    pub fn phi_nominal(&self) -> f64 {
        (0.25 + self.b).min(1.0 - 1e-6)
    }

    /// Eigenvalues and noise weights for the half-spectrum slots of an
    /// `n_modes` band. Fails on a non-positive eigenvalue or negative weight.
    pub fn mode_tables(&self, n_modes: usize) -> Result<ModeTables> {
        super::check_power_of_two(n_modes, "mode count")?;
        let half = n_modes / 2;
        let mut lambda = Vec::with_capacity(half + 1);
        let mut q = Vec::with_capacity(half + 1);
        for k in 0..=half as u64 {
            let l = self.lambda(k);
            let qk = self.q(k);
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Model(format!("eigenvalue λ_{k} = {l} is not positive")));
            }
            if !(qk >= 0.0 && qk.is_finite()) {
                return Err(Error::Model(format!("noise weight q_{k} = {qk} is negative")));
            }
            lambda.push(l);
            q.push(qk);
        }
        Ok(ModeTables { lambda, q })
    }

    /// Stable description used for config echoes and cache keys.
    pub fn describe(&self) -> String {
        format!(
            "T={};b={};reaction={};initial={};lambda={};noise={}",
            self.final_time,
            self.b,
            self.reaction.config_name(),
            self.initial.label(),
            self.lambda_label,
            self.noise_label
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTables {
    pub lambda: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummabilityCheck {
    /// Exponent `φ'` at which `Σ λ_n^{2φ'-1} q_n` is probed.
    pub phi_prime: f64,
    pub partial_sum_half: f64,
    pub partial_sum_full: f64,
    pub cutoff: u64,
    /// Decay exponent `p` of the summand, `term(n) ≈ n^{-p}`, read off the last octave.
    pub tail_exponent: f64,
    pub summable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub eigenvalues_positive: bool,
    pub eigenvalues_nondecreasing: bool,
    pub noise_nonnegative: bool,
    pub phi_nominal: f64,
    /// `1/4 + b` itself; differs from `phi_nominal` when the cap applied.
    pub phi_uncapped: f64,
    pub summability: SummabilityCheck,
    /// Lipschitz reaction with bounded Fréchet derivatives (zero or linear).
    pub reaction_regular: bool,
    pub exponential_euler_theorem_applies: bool,
    pub milstein_theorem_applies: bool,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn all_checks_pass(&self) -> bool {
        self.eigenvalues_positive
            && self.eigenvalues_nondecreasing
            && self.noise_nonnegative
            && self.summability.summable
    }
}

const SUMMABILITY_CUTOFF: u64 = 1 << 16;

/// Checks the structural model assumptions and reports which of the two MLMC
/// cost theorems nominally cover this model.
pub fn validate_model(model: &ModelSpec) -> Result<ValidationReport> {
    let mut notes = Vec::new();
    let cutoff = SUMMABILITY_CUTOFF;

    let mut positive = true;
    let mut nondecreasing = true;
    let mut nonneg = true;
    let mut prev = 0.0;
    for n in 0..=cutoff {
        let l = model.lambda(n);
        let q = model.q(n);
        if !(l > 0.0) || !l.is_finite() {
            positive = false;
        }
        if !(q >= 0.0) || !q.is_finite() {
            nonneg = false;
        }
        if l < prev {
            nondecreasing = false;
        }
        prev = l;
    }
    if !positive {
        return Err(Error::Model("eigenvalues must be strictly positive".into()));
    }
    if !nonneg {
        return Err(Error::Model("noise weights must be non-negative".into()));
    }
    if !nondecreasing {
        notes.push("eigenvalues are not nondecreasing in |n|".into());
    }

    let phi = model.phi_nominal();
    let phi_uncapped = 0.25 + model.b;
    if phi_uncapped >= 1.0 {
        notes.push(format!(
            "1/4 + b = {phi_uncapped} lies outside (0,1); regularity capped at {phi}"
        ));
    }

    let phi_prime = phi - 1e-3;
    let term = |n: u64| model.lambda(n).powf(2.0 * phi_prime - 1.0) * model.q(n);
    let mut partial_half = 0.0;
    let mut partial = term(0);
    for n in 1..=cutoff {
        // ±n pair
        partial += 2.0 * term(n);
        if n == cutoff / 2 {
            partial_half = partial;
        }
    }
    let t_hi = term(cutoff);
    let t_lo = term(cutoff / 2);
    let tail_exponent = if t_hi > 0.0 && t_lo > 0.0 {
        (t_lo / t_hi).log2()
    } else {
        f64::INFINITY
    };
    let summable = partial.is_finite() && tail_exponent > 1.0;
    if !summable {
        notes.push(format!(
            "Σ λ_n^(2φ'-1) q_n at φ' = {phi_prime:.4} does not look summable (tail exponent {tail_exponent:.4})"
        ));
    }

    let reaction_regular = model.reaction.has_bounded_derivative_in_h();
    let exp_euler = reaction_regular && summable;
    if !reaction_regular {
        notes.push(format!(
            "{} reaction lacks a Fréchet derivative in L(H): the exponential Euler MLMC theorem does not cover it (outside proved assumptions)",
            model.reaction.config_name()
        ));
    }
    let milstein = phi > 0.5 && summable;
    if phi <= 0.5 {
        notes.push(format!(
            "φ = {phi} <= 1/2: the Milstein MLMC theorem requires φ in (1/2, 1)"
        ));
    }

    Ok(ValidationReport {
        eigenvalues_positive: positive,
        eigenvalues_nondecreasing: nondecreasing,
        noise_nonnegative: nonneg,
        phi_nominal: phi,
        phi_uncapped,
        summability: SummabilityCheck {
            phi_prime,
            partial_sum_half: partial_half,
            partial_sum_full: partial,
            cutoff,
            tail_exponent,
            summable,
        },
        reaction_regular,
        exponential_euler_theorem_applies: exp_euler,
        milstein_theorem_applies: milstein,
        notes,
    })
}
