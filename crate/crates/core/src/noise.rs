//! Driving-noise increments per Fourier mode, their fine→coarse coupling, and
//! reproducible stream derivation.
//!
//! Every half-spectrum slot `k` owns its own PCG stream whose state and
//! increment are derived from `(master_seed, role, level, replica, k)`. Each time step
//! consumes exactly two standard normals from it (real and imaginary part).
//! A draw is therefore a pure function of `(key, k, step)`: it does not depend
//! on the band size or on which thread runs the path, so two resolutions driven
//! by the same key share their increments on the common band.
//!
//! Real-field convention: slot 0 is real with the full mode variance `v`;
//! interior slots have independent real and imaginary parts of variance `v/2`
//! each (the mirror mode `-k` is the conjugate); the Nyquist slot is the real
//! part of what an interior slot would carry, variance `v/2`.

use num_complex::Complex64;
use rand::Rng;
use rand_pcg::Pcg64;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ModeTables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamRole {
    Estimator,
    Reference,
    Rates,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Estimator => 0x6573_7469_6d61_746f,
            StreamRole::Reference => 0x7265_6665_7265_6e63,
            StreamRole::Rates => 0x7261_7465_7300_0000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStreamKey {
    pub master_seed: u64,
    pub level: u32,
    pub replica: u64,
    pub role: StreamRole,
}

impl NoiseStreamKey {
    pub fn new(master_seed: u64, role: StreamRole, level: u32, replica: u64) -> Self {
        Self {
            master_seed,
            level,
            replica,
            role,
        }
    }

    /// Generator for half-spectrum slot `k`.
    ///
    /// The increment encodes `(role, level, k)` and the state mixes
    /// `(master_seed, replica, k)`, so distinct keys or slots never share a
    /// generator.
    pub fn mode_stream(&self, k: usize) -> Pcg64 {
        let slot = k as u64;
        let stream = (u128::from(mix64(self.role.tag() ^ u64::from(self.level))) << 64)
            | u128::from(slot);
        let hi = mix64(self.master_seed ^ mix64(u64::from(self.level).wrapping_add(self.role.tag())));
        let lo = mix64(self.replica ^ mix64(slot.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Pcg64::new((u128::from(hi) << 64) | u128::from(lo), stream)
    }
}

/// SplitMix64 finalizer, a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-slot standard-normal streams for one path.
#[derive(Debug, Clone)]
pub struct ModeStreams {
    streams: Vec<Pcg64>,
}

impl ModeStreams {
    /// Streams for slots `0..slots`.
    pub fn new(key: &NoiseStreamKey, slots: usize) -> Self {
        Self {
            streams: (0..slots).map(|k| key.mode_stream(k)).collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.streams.len()
    }

    /// Rekeys every slot in place, as if freshly built from `key`.
    pub fn reset(&mut self, key: &NoiseStreamKey) {
        for (k, rng) in self.streams.iter_mut().enumerate() {
            *rng = key.mode_stream(k);
        }
    }

    /// One step worth of `(re, im)` standard normals per slot.
    #[inline]
    pub fn draw_step(&mut self, out: &mut [Complex64]) {
        debug_assert!(out.len() <= self.streams.len());
        for (z, rng) in out.iter_mut().zip(self.streams.iter_mut()) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = Complex64::new(re, im);
        }
    }
}

/// How a scheme integrates the stochastic convolution over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementLaw {
    /// `R = √q ∫ e^{-λ(t_{k+1}-s)} dw`, exact Ornstein–Uhlenbeck increment.
    OrnsteinUhlenbeck,
    /// `R = √q e^{-λΔt} (w(t_{k+1}) - w(t_k))`.
    DampedBrownian,
}

impl IncrementLaw {
    /// Variance of the scalar increment of one mode over a step `dt`.
    pub fn variance(self, lambda: f64, q: f64, dt: f64) -> f64 {
        match self {
            IncrementLaw::OrnsteinUhlenbeck => q * (-(-2.0 * lambda * dt).exp_m1()) / (2.0 * lambda),
            IncrementLaw::DampedBrownian => q * (-2.0 * lambda * dt).exp() * dt,
        }
    }

    /// Coarse increment over `[t_{2j}, t_{2j+2}]` from the two fine increments.
    #[inline]
    pub fn couple(self, decay_fine: f64, first: Complex64, second: Complex64) -> Complex64 {
        match self {
            IncrementLaw::OrnsteinUhlenbeck => first * decay_fine + second,
            IncrementLaw::DampedBrownian => (first + second) * decay_fine,
        }
    }
}

fn check_increment_args(lambda: f64, q: f64, dt: f64) -> Result<()> {
    if q < 0.0 || !q.is_finite() {
        return Err(Error::Model(format!("noise weight q = {q} is negative")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Model(format!("eigenvalue λ = {lambda} is not positive")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// Two scalar Ornstein–Uhlenbeck increments (one per fine substep) of a mode
/// with eigenvalue `lambda` and weight `q`.
pub fn sample_ou_increment<R: Rng + ?Sized>(
    lambda: f64,
    q: f64,
    dt: f64,
    rng: &mut R,
) -> Result<[f64; 2]> {
    check_increment_args(lambda, q, dt)?;
    let sd = IncrementLaw::OrnsteinUhlenbeck.variance(lambda, q, dt).sqrt();
    Ok([
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    ])
}

/// Two scalar damped Brownian increments `√q e^{-λΔt} Δw`.
pub fn sample_brownian_increment<R: Rng + ?Sized>(
    lambda: f64,
    q: f64,
    dt: f64,
    rng: &mut R,
) -> Result<[f64; 2]> {
    check_increment_args(lambda, q, dt)?;
    let sd = IncrementLaw::DampedBrownian.variance(lambda, q, dt).sqrt();
    Ok([
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    ])
}

/// Coarse increment of one mode from its fine pair.
pub fn couple_coarse(
    fine: [Complex64; 2],
    lambda: f64,
    dt_fine: f64,
    law: IncrementLaw,
) -> Complex64 {
    law.couple((-lambda * dt_fine).exp(), fine[0], fine[1])
}

/// Per-slot standard deviations that turn standard normals into increments of
/// a given law at a given step.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementScales {
    pub law: IncrementLaw,
    pub dt: f64,
    /// `(sd_re, sd_im)` per half-spectrum slot.
    sd: Vec<(f64, f64)>,
}

impl IncrementScales {
    pub fn new(law: IncrementLaw, tables: &ModeTables, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let half = tables.lambda.len() - 1;
        let sd = tables
            .lambda
            .iter()
            .zip(&tables.q)
            .enumerate()
            .map(|(k, (&l, &q))| {
                let v = law.variance(l, q, dt);
                if k == 0 {
                    (v.sqrt(), 0.0)
                } else if k == half {
                    ((0.5 * v).sqrt(), 0.0)
                } else {
                    let s = (0.5 * v).sqrt();
                    (s, s)
                }
            })
            .collect();
        Ok(Self { law, dt, sd })
    }

    pub fn slots(&self) -> usize {
        self.sd.len()
    }

    /// Scales standard normals in place into increments.
    #[inline]
    pub fn apply(&self, z: &mut [Complex64]) {
        for (z, &(sr, si)) in z.iter_mut().zip(&self.sd) {
            z.re *= sr;
            z.im *= si;
        }
    }
}

/// Fine increments for one coarse step and the coarse increment derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledNoiseBlock {
    pub law: IncrementLaw,
    pub fine: [Vec<Complex64>; 2],
    pub coarse: Vec<Complex64>,
}

impl CoupledNoiseBlock {
    /// Derives the coarse increments on `coarse_slots` slots (`N_c/2 + 1`).
    /// `decay_fine[k] = e^{-λ_k Δt_fine}`. The coarse Nyquist slot keeps the
    /// real part of the coupled value.
    pub fn derive(
        law: IncrementLaw,
        fine: [Vec<Complex64>; 2],
        decay_fine: &[f64],
        coarse_slots: usize,
    ) -> Result<Self> {
        let mut coarse = vec![Complex64::new(0.0, 0.0); coarse_slots];
        couple_into(law, &fine[0], &fine[1], decay_fine, &mut coarse)?;
        Ok(Self { law, fine, coarse })
    }

    /// Coarse increments, checking that the caller expects the law the block was built with.
    pub fn coarse_for(&self, law: IncrementLaw) -> Result<&[Complex64]> {
        if law != self.law {
            return Err(Error::Usage(format!(
                "noise generated with {:?} cannot drive a {:?} coarse step",
                self.law, law
            )));
        }
        Ok(&self.coarse)
    }
}

/// Slot-wise coupling into `coarse` (length `N_c/2 + 1 <= fine length`).
pub(crate) fn couple_into(
    law: IncrementLaw,
    first: &[Complex64],
    second: &[Complex64],
    decay_fine: &[f64],
    coarse: &mut [Complex64],
) -> Result<()> {
    if coarse.len() > first.len() || first.len() != second.len() || decay_fine.len() < coarse.len()
    {
        return Err(Error::Usage(format!(
            "coarse band of {} slots does not fit fine band of {} slots",
            coarse.len(),
            first.len()
        )));
    }
    for (k, c) in coarse.iter_mut().enumerate() {
        *c = law.couple(decay_fine[k], first[k], second[k]);
    }
    let last = coarse.len() - 1;
    coarse[last].im = 0.0;
    coarse[0].im = 0.0;
    Ok(())
}
