//! Exponential Euler, drift-exponential Euler and Milstein time stepping of the
//! spectral Galerkin system, for single paths and for fine/coarse pairs driven
//! by coupled noise.
//!
//! All three schemes share the per-mode update
//! `c ← decay_k · c + drift_k · f_k(c) + R_k` and differ only in the drift
//! factor and in the law of `R_k`:
//!
//! | scheme        | `drift_k`               | increment law     |
//! |---------------|-------------------------|-------------------|
//! | ExpEuler      | `(1 - e^{-λΔt}) / λ`    | Ornstein–Uhlenbeck |
//! | DriftExpEuler | `(1 - e^{-λΔt}) / λ`    | damped Brownian   |
//! | Milstein      | `Δt · e^{-λΔt}`         | damped Brownian   |

use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{couple_into, IncrementLaw, IncrementScales, ModeStreams, NoiseStreamKey};
use crate::reaction::{reaction_cost, NemytskiiEvaluator, OpCounter, ReactionKind};
use crate::spectral::{check_power_of_two, ModelSpec, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "exp-euler")]
    ExpEuler,
    #[serde(rename = "drift-exp-euler")]
    DriftExpEuler,
    #[serde(rename = "milstein")]
    Milstein,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [
        SchemeKind::ExpEuler,
        SchemeKind::DriftExpEuler,
        SchemeKind::Milstein,
    ];

    pub fn increment_law(self) -> IncrementLaw {
        match self {
            SchemeKind::ExpEuler => IncrementLaw::OrnsteinUhlenbeck,
            SchemeKind::DriftExpEuler | SchemeKind::Milstein => IncrementLaw::DampedBrownian,
        }
    }

    pub fn config_name(self) -> &'static str {
        match self {
            SchemeKind::ExpEuler => "exp-euler",
            SchemeKind::DriftExpEuler => "drift-exp-euler",
            SchemeKind::Milstein => "milstein",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp-euler" => Ok(SchemeKind::ExpEuler),
            "drift-exp-euler" => Ok(SchemeKind::DriftExpEuler),
            "milstein" => Ok(SchemeKind::Milstein),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?}, expected exp-euler | drift-exp-euler | milstein"
            ))),
        }
    }
}

/// State of a path at time `j Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub field: SpectralField,
    pub j: usize,
    pub dt: f64,
    pub scheme: SchemeKind,
}

/// Units charged per time step outside the reaction term: one update and one
/// Gaussian draw per real degree of freedom.
pub fn step_cost(n_modes: usize, reaction: ReactionKind, noisy: bool) -> u64 {
    let base = if noisy { 2 * n_modes as u64 } else { n_modes as u64 };
    base + match reaction {
        ReactionKind::Zero => 0,
        _ => reaction_cost(n_modes),
    }
}

/// Cost model `J (N + Cost(f_N))` for a final-time solve.
pub fn path_cost_model(n_modes: usize, steps: usize, reaction: ReactionKind) -> u64 {
    let f = match reaction {
        ReactionKind::Zero => 0,
        _ => reaction_cost(n_modes),
    };
    steps as u64 * (n_modes as u64 + f)
}

/// Precomputed per-mode factors and scratch for one `(model, scheme, N, J)`.
#[derive(Debug, Clone)]
pub struct LevelSolver {
    scheme: SchemeKind,
    reaction: ReactionKind,
    n_modes: usize,
    steps: usize,
    dt: f64,
    decay: Vec<f64>,
    drift: Vec<f64>,
    scales: IncrementScales,
    evaluator: NemytskiiEvaluator,
    initial: SpectralField,
    f_buf: Vec<Complex64>,
}

impl LevelSolver {
    pub fn new(model: &ModelSpec, scheme: SchemeKind, n_modes: usize, steps: usize) -> Result<Self> {
        check_power_of_two(n_modes, "spatial resolution")?;
        if steps == 0 {
            return Err(Error::Config("number of time steps must be >= 1".into()));
        }
        if !(model.final_time > 0.0) {
            return Err(Error::Config(format!(
                "final time must be positive, got {}",
                model.final_time
            )));
        }
        let tables = model.mode_tables(n_modes)?;
        let dt = model.final_time / steps as f64;
        let decay: Vec<f64> = tables.lambda.iter().map(|l| (-l * dt).exp()).collect();
        let drift = match scheme {
            SchemeKind::ExpEuler | SchemeKind::DriftExpEuler => tables
                .lambda
                .iter()
                .map(|l| -(-l * dt).exp_m1() / l)
                .collect(),
            SchemeKind::Milstein => decay.iter().map(|e| e * dt).collect(),
        };
        let scales = IncrementScales::new(scheme.increment_law(), &tables, dt)?;
        Ok(Self {
            scheme,
            reaction: model.reaction,
            n_modes,
            steps,
            dt,
            decay,
            drift,
            scales,
            evaluator: NemytskiiEvaluator::new(n_modes)?,
            initial: model.initial.project(n_modes)?,
            f_buf: vec![Complex64::new(0.0, 0.0); n_modes / 2 + 1],
        })
    }

    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn slots(&self) -> usize {
        self.n_modes / 2 + 1
    }

    /// `e^{-λ_k Δt}` per slot.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn initial_state(&self) -> PathState {
        PathState {
            field: self.initial.clone(),
            j: 0,
            dt: self.dt,
            scheme: self.scheme,
        }
    }

    /// Turns standard normals into this level's increments in place.
    #[inline]
    pub fn scale_normals(&self, z: &mut [Complex64]) {
        self.scales.apply(z);
    }

    /// One time step on a raw half spectrum with given increments (`None` = no noise).
    #[inline]
    fn advance(&mut self, modes: &mut [Complex64], increments: Option<&[Complex64]>, ops: &mut OpCounter) {
        let has_reaction = self.reaction != ReactionKind::Zero;
        if has_reaction {
            self.evaluator
                .eval_into(self.reaction, modes, &mut self.f_buf, ops);
        }
        match (has_reaction, increments) {
            (true, Some(r)) => {
                for k in 0..modes.len() {
                    modes[k] = modes[k] * self.decay[k] + self.f_buf[k] * self.drift[k] + r[k];
                }
            }
            (true, None) => {
                for k in 0..modes.len() {
                    modes[k] = modes[k] * self.decay[k] + self.f_buf[k] * self.drift[k];
                }
            }
            (false, Some(r)) => {
                for k in 0..modes.len() {
                    modes[k] = modes[k] * self.decay[k] + r[k];
                }
            }
            (false, None) => {
                for k in 0..modes.len() {
                    modes[k] *= self.decay[k];
                }
            }
        }
        let last = modes.len() - 1;
        modes[0].im = 0.0;
        modes[last].im = 0.0;
        ops.add(if increments.is_some() {
            2 * self.n_modes as u64
        } else {
            self.n_modes as u64
        });
    }

    /// Applies one step with the given per-slot increments.
    pub fn step(&mut self, state: &mut PathState, increments: &[Complex64], ops: &mut OpCounter) -> Result<()> {
        if state.field.n_modes() != self.n_modes || increments.len() != self.slots() {
            return Err(Error::Usage(format!(
                "step on {} modes with {} increments, solver expects {} modes",
                state.field.n_modes(),
                increments.len(),
                self.n_modes
            )));
        }
        if state.scheme != self.scheme || state.dt != self.dt {
            return Err(Error::Usage("state was created for another scheme or step size".into()));
        }
        if state.j >= self.steps {
            return Err(Error::Usage(format!("path already at final step {}", self.steps)));
        }
        self.advance(state.field.half_spectrum_mut(), Some(increments), ops);
        state.j += 1;
        Ok(())
    }

    /// Full solve drawing increments from `key`'s streams.
    pub fn solve(&mut self, key: &NoiseStreamKey, ops: &mut OpCounter) -> SpectralField {
        let mut streams = ModeStreams::new(key, self.slots());
        let mut z = vec![Complex64::new(0.0, 0.0); self.slots()];
        let mut modes = self.initial.clone().into_half_spectrum();
        for _ in 0..self.steps {
            streams.draw_step(&mut z);
            self.scales.apply(&mut z);
            self.advance(&mut modes, Some(&z), ops);
        }
        SpectralField::from_half_spectrum(self.n_modes, modes).expect("layout fixed")
    }

    /// Full solve on caller-supplied increments: `noise(j, buf)` fills step `j`.
    pub fn solve_with(
        &mut self,
        mut noise: impl FnMut(usize, &mut [Complex64]),
        ops: &mut OpCounter,
    ) -> SpectralField {
        let mut z = vec![Complex64::new(0.0, 0.0); self.slots()];
        let mut modes = self.initial.clone().into_half_spectrum();
        for j in 0..self.steps {
            noise(j, &mut z);
            self.advance(&mut modes, Some(&z), ops);
        }
        SpectralField::from_half_spectrum(self.n_modes, modes).expect("layout fixed")
    }

    /// Noise-free solve.
    pub fn solve_noiseless(&mut self, ops: &mut OpCounter) -> SpectralField {
        let mut modes = self.initial.clone().into_half_spectrum();
        for _ in 0..self.steps {
            self.advance(&mut modes, None, ops);
        }
        SpectralField::from_half_spectrum(self.n_modes, modes).expect("layout fixed")
    }
}

/// One step of `scheme` from `state` (convenience wrapper; builds the factors each call).
pub fn step(
    state: &PathState,
    model: &ModelSpec,
    steps: usize,
    increments: &[Complex64],
) -> Result<(PathState, OpCounter)> {
    let mut solver = LevelSolver::new(model, state.scheme, state.field.n_modes(), steps)?;
    let mut next = state.clone();
    let mut ops = OpCounter::default();
    solver.step(&mut next, increments, &mut ops)?;
    Ok((next, ops))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution {
    pub field: SpectralField,
    pub ops: OpCounter,
}

/// Final-time solution of one path with `J` steps on `N` modes.
pub fn solve_path(
    model: &ModelSpec,
    scheme: SchemeKind,
    n_modes: usize,
    steps: usize,
    key: &NoiseStreamKey,
) -> Result<PathSolution> {
    let mut solver = LevelSolver::new(model, scheme, n_modes, steps)?;
    let mut ops = OpCounter::default();
    let field = solver.solve(key, &mut ops);
    Ok(PathSolution { field, ops })
}

/// Noise-free exponential Euler solve, the pseudo-reference for `E[U(T)]` with
/// a linear reaction.
pub fn solve_deterministic(model: &ModelSpec, n_modes: usize, steps: usize) -> Result<SpectralField> {
    let mut solver = LevelSolver::new(model, SchemeKind::ExpEuler, n_modes, steps)?;
    let mut ops = OpCounter::default();
    Ok(solver.solve_noiseless(&mut ops))
}

/// Resolutions of a coupled pair; `coarse` is `None` on level 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairResolution {
    pub n_fine: usize,
    pub j_fine: usize,
    pub coarse: Option<(usize, usize)>,
}

impl PairResolution {
    pub fn validate(&self) -> Result<()> {
        check_power_of_two(self.n_fine, "fine resolution")?;
        if let Some((n_c, j_c)) = self.coarse {
            check_power_of_two(n_c, "coarse resolution")?;
            if self.j_fine != 2 * j_c {
                return Err(Error::Usage(format!(
                    "fine level needs twice the coarse steps: J_fine = {}, J_coarse = {j_c}",
                    self.j_fine
                )));
            }
            if n_c > self.n_fine {
                return Err(Error::Usage(format!(
                    "coarse band {n_c} exceeds fine band {}",
                    self.n_fine
                )));
            }
        }
        Ok(())
    }
}

/// Hook called after every coarse step with the fine state at `2j`, the coarse
/// state at `j` and the coarse increment that produced it (empty at `j = 0`).
pub trait PairObserver {
    fn observe(&mut self, j: usize, fine: &[Complex64], coarse: &[Complex64], coarse_increment: &[Complex64]);
}

impl PairObserver for () {
    #[inline]
    fn observe(&mut self, _: usize, _: &[Complex64], _: &[Complex64], _: &[Complex64]) {}
}

/// Fine and coarse solvers of one MLMC level sharing driving noise.
#[derive(Debug, Clone)]
pub struct CoupledSolver {
    fine: LevelSolver,
    coarse: Option<LevelSolver>,
    work: PairWork,
}

/// Buffers reused from one sample to the next.
#[derive(Debug, Clone)]
struct PairWork {
    streams: ModeStreams,
    z0: Vec<Complex64>,
    z1: Vec<Complex64>,
    rc: Vec<Complex64>,
    uf: Vec<Complex64>,
    uc: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub fine: SpectralField,
    /// Zero field (fine band) on level 0.
    pub coarse: SpectralField,
    pub ops: OpCounter,
}

impl CoupledSolver {
    pub fn new(model: &ModelSpec, scheme: SchemeKind, res: PairResolution) -> Result<Self> {
        res.validate()?;
        let fine = LevelSolver::new(model, scheme, res.n_fine, res.j_fine)?;
        let coarse = res
            .coarse
            .map(|(n, j)| LevelSolver::new(model, scheme, n, j))
            .transpose()?;
        let zeros = |n: usize| vec![Complex64::new(0.0, 0.0); n];
        let slots_f = fine.slots();
        let slots_c = coarse.as_ref().map_or(0, LevelSolver::slots);
        let placeholder = NoiseStreamKey::new(0, crate::noise::StreamRole::Rates, 0, 0);
        let work = PairWork {
            streams: ModeStreams::new(&placeholder, slots_f),
            z0: zeros(slots_f),
            z1: zeros(slots_f),
            rc: zeros(slots_c),
            uf: zeros(slots_f),
            uc: zeros(slots_c),
        };
        Ok(Self { fine, coarse, work })
    }

    pub fn fine(&self) -> &LevelSolver {
        &self.fine
    }

    pub fn coarse(&self) -> Option<&LevelSolver> {
        self.coarse.as_ref()
    }

    pub fn solve(&mut self, key: &NoiseStreamKey, ops: &mut OpCounter) -> (SpectralField, SpectralField) {
        self.solve_observed(key, ops, &mut ())
    }

    pub fn solve_observed<O: PairObserver>(
        &mut self,
        key: &NoiseStreamKey,
        ops: &mut OpCounter,
        observer: &mut O,
    ) -> (SpectralField, SpectralField) {
        self.run(key, ops, observer);
        let (uf, uc) = self.final_modes();
        let fine = SpectralField::from_half_spectrum(self.fine.n_modes, uf.to_vec()).expect("layout fixed");
        let coarse = match &self.coarse {
            Some(c) => SpectralField::from_half_spectrum(c.n_modes, uc.to_vec()).expect("layout fixed"),
            None => SpectralField::zeros(self.fine.n_modes).expect("valid size"),
        };
        (fine, coarse)
    }

    /// Final half spectra of the last [`run`](Self::run); the coarse slice is
    /// empty on level 0.
    pub fn final_modes(&self) -> (&[Complex64], &[Complex64]) {
        (&self.work.uf, &self.work.uc)
    }

    /// Solves one coupled sample into the internal buffers without allocating.
    pub fn run<O: PairObserver>(&mut self, key: &NoiseStreamKey, ops: &mut OpCounter, observer: &mut O) {
        let fine = &mut self.fine;
        let w = &mut self.work;
        w.streams.reset(key);
        w.uf.copy_from_slice(fine.initial.half_spectrum());
        let Some(coarse) = self.coarse.as_mut() else {
            for _ in 0..fine.steps {
                w.streams.draw_step(&mut w.z0);
                fine.scales.apply(&mut w.z0);
                fine.advance(&mut w.uf, Some(&w.z0), ops);
            }
            return;
        };
        let slots_c = coarse.slots();
        let law = fine.scheme.increment_law();
        w.uc.copy_from_slice(coarse.initial.half_spectrum());
        observer.observe(0, &w.uf, &w.uc, &[]);

        for j in 0..coarse.steps {
            w.streams.draw_step(&mut w.z0);
            fine.scales.apply(&mut w.z0);
            w.streams.draw_step(&mut w.z1);
            fine.scales.apply(&mut w.z1);
            fine.advance(&mut w.uf, Some(&w.z0), ops);
            fine.advance(&mut w.uf, Some(&w.z1), ops);
            couple_into(law, &w.z0, &w.z1, &fine.decay, &mut w.rc).expect("validated bands");
            ops.add(slots_c as u64);
            coarse.advance(&mut w.uc, Some(&w.rc), ops);
            observer.observe(j + 1, &w.uf, &w.uc, &w.rc);
        }
    }
}

/// Fine and coarse final-time solutions of one coupled sample on level `level`.
pub fn solve_coupled_pair(
    model: &ModelSpec,
    scheme: SchemeKind,
    level: u32,
    res: PairResolution,
    key: &NoiseStreamKey,
) -> Result<CoupledPair> {
    if (level == 0) != res.coarse.is_none() {
        return Err(Error::Usage(format!(
            "level {level} {} a coarse resolution",
            if level == 0 { "must not have" } else { "needs" }
        )));
    }
    let mut solver = CoupledSolver::new(model, scheme, res)?;
    let mut ops = OpCounter::default();
    let (fine, coarse) = solver.solve(key, &mut ops);
    Ok(CoupledPair { fine, coarse, ops })
}
