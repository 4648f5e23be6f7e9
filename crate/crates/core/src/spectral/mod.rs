//! Truncated Fourier representation of real-valued periodic states on `[0, 1)`.
//!
//! A field with `N` modes carries the band `n ∈ {-N/2, …, N/2-1}` of the basis
//! `e_n(x) = exp(i 2π n x)`. Only the half spectrum `k = 0..=N/2` is stored:
//! slot `k < N/2` holds `c_k` (with `c_{-k} = conj(c_k)` implied) and slot `N/2`
//! holds the Nyquist coefficient `c_{-N/2}`. Slots `0` and `N/2` are real.
//! This is the same layout a real-to-complex FFT of `N` grid values produces, so
//! the grid transforms are a plain FFT pair.

mod model;
mod transform;

pub use model::{
    validate_model, InitialCondition, ModeLaw, ModeTables, ModelSpec, SummabilityCheck,
    ValidationReport,
};
pub use transform::{from_grid, to_grid, GridTransform};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn check_power_of_two(n: usize, what: &str) -> Result<()> {
    if n >= 2 && n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} must be a power of two >= 2, got {n}"
        )))
    }
}

/// Weight exponent `r` of the interpolation norm `‖v‖_{H_r}² = Σ λ_n^{2r} |c_n|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationWeight {
    pub r: f64,
}

impl InterpolationWeight {
    pub const L2: InterpolationWeight = InterpolationWeight { r: 0.0 };

    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && r >= 0.0 {
            Ok(Self { r })
        } else {
            Err(Error::Config(format!("interpolation exponent must be >= 0, got {r}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    n_modes: usize,
    modes: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(n_modes: usize) -> Result<Self> {
        check_power_of_two(n_modes, "mode count")?;
        Ok(Self {
            n_modes,
            modes: vec![Complex64::new(0.0, 0.0); n_modes / 2 + 1],
        })
    }

    /// Builds a field from its half spectrum (`N/2 + 1` values). The imaginary
    /// parts of the mean and Nyquist slots are dropped.
    pub fn from_half_spectrum(n_modes: usize, mut modes: Vec<Complex64>) -> Result<Self> {
        check_power_of_two(n_modes, "mode count")?;
        if modes.len() != n_modes / 2 + 1 {
            return Err(Error::Usage(format!(
                "half spectrum of a {n_modes}-mode field needs {} values, got {}",
                n_modes / 2 + 1,
                modes.len()
            )));
        }
        let last = modes.len() - 1;
        modes[0].im = 0.0;
        modes[last].im = 0.0;
        Ok(Self { n_modes, modes })
    }

    /// Band size `N` (number of complex modes, counting both signs).
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Number of positive-frequency basis functions `1..N/2`, i.e. the
    /// "first N eigenfunctions" count used when the band is read as `n ∈ ℕ`.
    pub fn n_basis_functions(&self) -> usize {
        self.n_modes / 2
    }

    pub fn half_spectrum(&self) -> &[Complex64] {
        &self.modes
    }

    pub(crate) fn half_spectrum_mut(&mut self) -> &mut [Complex64] {
        &mut self.modes
    }

    pub fn into_half_spectrum(self) -> Vec<Complex64> {
        self.modes
    }

    /// Coefficient `c_n` for `n` in the band; zero outside it.
    pub fn coefficient(&self, n: i64) -> Complex64 {
        let half = (self.n_modes / 2) as i64;
        if n == -half {
            self.modes[half as usize]
        } else if n >= 0 && n < half {
            self.modes[n as usize]
        } else if n < 0 && n > -half {
            self.modes[(-n) as usize].conj()
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Sets the pair `(c_k, c_{-k})` for `0 < k < N/2`, or the real slots `k = 0`
    /// and `k = N/2` (only the real part is kept there).
    pub fn set_mode(&mut self, k: usize, value: Complex64) -> Result<()> {
        let half = self.n_modes / 2;
        if k > half {
            return Err(Error::Usage(format!(
                "mode {k} outside the half spectrum 0..={half}"
            )));
        }
        self.modes[k] = if k == 0 || k == half {
            Complex64::new(value.re, 0.0)
        } else {
            value
        };
        Ok(())
    }

    /// Multiplicity of half-spectrum slot `k` in the full band.
    #[inline]
    pub(crate) fn slot_weight(k: usize, half: usize) -> f64 {
        if k == 0 || k == half {
            1.0
        } else {
            2.0
        }
    }

    pub fn norm_squared(&self) -> f64 {
        let half = self.n_modes / 2;
        self.modes
            .iter()
            .enumerate()
            .map(|(k, c)| Self::slot_weight(k, half) * c.norm_sqr())
            .sum()
    }

    /// Plain `H = L²(0,1)` norm.
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `(Σ_n λ_n^{2r} |c_n|²)^{1/2}` with the eigenvalues of `model`.
    pub fn h_norm(&self, weight: InterpolationWeight, model: &ModelSpec) -> f64 {
        if weight.r == 0.0 {
            return self.norm();
        }
        let half = self.n_modes / 2;
        self.modes
            .iter()
            .enumerate()
            .map(|(k, c)| {
                Self::slot_weight(k, half) * model.lambda(k as u64).powf(2.0 * weight.r) * c.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Orthogonal projection onto the real fields of the `n_modes` band.
    ///
    /// The Nyquist slot of the result keeps the real part of the input's
    /// coefficient at `|n| = n_modes/2`.
    pub fn project(&self, n_modes: usize) -> Result<SpectralField> {
        check_power_of_two(n_modes, "projection size")?;
        if n_modes > self.n_modes {
            return Err(Error::Resolution {
                requested: n_modes,
                available: self.n_modes,
            });
        }
        let half = n_modes / 2;
        let mut modes = self.modes[..=half].to_vec();
        modes[half].im = 0.0;
        Ok(SpectralField { n_modes, modes })
    }

    /// Zero-pads into a larger band. The Nyquist coefficient `r` becomes the
    /// pair `c_{±N/2} = r`, so that `embed(M).project(N)` is the identity.
    pub fn embed(&self, n_modes: usize) -> Result<SpectralField> {
        check_power_of_two(n_modes, "embedding size")?;
        if n_modes < self.n_modes {
            return Err(Error::Usage(format!(
                "cannot embed a {}-mode field into {n_modes} modes",
                self.n_modes
            )));
        }
        let mut modes = vec![Complex64::new(0.0, 0.0); n_modes / 2 + 1];
        modes[..self.modes.len()].copy_from_slice(&self.modes);
        Ok(SpectralField { n_modes, modes })
    }

    /// Projects or embeds, whichever `n_modes` requires.
    pub fn resize(&self, n_modes: usize) -> Result<SpectralField> {
        if n_modes <= self.n_modes {
            self.project(n_modes)
        } else {
            self.embed(n_modes)
        }
    }

    /// `self += alpha * other` on a common band (`other` no larger than `self`).
    pub fn add_scaled(&mut self, alpha: f64, other: &SpectralField) -> Result<()> {
        if other.n_modes > self.n_modes {
            return Err(Error::Usage(format!(
                "cannot accumulate a {}-mode field into {} modes",
                other.n_modes, self.n_modes
            )));
        }
        for (a, b) in self.modes.iter_mut().zip(&other.modes) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in &mut self.modes {
            *c *= alpha;
        }
    }

    /// `‖self - other‖_H` after bringing both onto the larger band.
    pub fn distance(&self, other: &SpectralField) -> f64 {
        let n = self.n_modes.max(other.n_modes);
        let a = self.resize(n).expect("valid size");
        let b = other.resize(n).expect("valid size");
        let half = n / 2;
        a.modes
            .iter()
            .zip(&b.modes)
            .enumerate()
            .map(|(k, (x, y))| Self::slot_weight(k, half) * (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Coefficients of the triangular wave `u₀(x) = 2x` on `[0, 1/2]`, `2(1-x)` on
/// `(1/2, 1]`, truncated to the `n_modes` band:
/// `c_0 = 1/2`, `c_n = -2/(π² n²)` for odd `n`, zero for even `n ≠ 0`.
pub fn triangular_wave_coefficients(n_modes: usize) -> Result<SpectralField> {
    let mut field = SpectralField::zeros(n_modes)?;
    let half = n_modes / 2;
    let modes = field.half_spectrum_mut();
    modes[0] = Complex64::new(0.5, 0.0);
    for (k, c) in modes.iter_mut().enumerate().take(half + 1).skip(1) {
        if k % 2 == 1 {
            let kf = k as f64;
            *c = Complex64::new(-2.0 / (std::f64::consts::PI * std::f64::consts::PI * kf * kf), 0.0);
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_field_projects_to_zero() {
        let v = SpectralField::zeros(16).unwrap();
        let p = v.project(4).unwrap();
        assert_eq!(p.n_modes(), 4);
        assert!(p.half_spectrum().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn projection_to_two_modes_keeps_the_nyquist_slot() {
        // v = e_1 + e_{-1}; the 2-mode band is {-1, 0} and keeps c_{-1} = 1.
        let mut v = SpectralField::zeros(8).unwrap();
        v.set_mode(1, c(1.0, 0.0)).unwrap();
        let p = v.project(2).unwrap();
        assert_eq!(p.coefficient(-1), c(1.0, 0.0));
        assert_eq!(p.coefficient(0), c(0.0, 0.0));
        assert_eq!(p.coefficient(1), c(0.0, 0.0));
    }

    #[test]
    fn projection_errors() {
        let v = SpectralField::zeros(8).unwrap();
        assert!(matches!(v.project(16), Err(Error::Resolution { .. })));
        assert!(matches!(v.project(6), Err(Error::Config(_))));
        assert!(matches!(SpectralField::zeros(12), Err(Error::Config(_))));
    }

    #[test]
    fn projection_norm_equality_when_truncated_modes_vanish() {
        let mut v = SpectralField::zeros(16).unwrap();
        v.set_mode(0, c(0.3, 0.0)).unwrap();
        v.set_mode(2, c(-0.1, 0.7)).unwrap();
        v.set_mode(3, c(0.2, -0.2)).unwrap();
        assert_relative_eq!(v.project(8).unwrap().norm(), v.norm(), max_relative = 1e-15);
        v.set_mode(5, c(0.01, 0.0)).unwrap();
        assert!(v.project(8).unwrap().norm() < v.norm());
    }

    #[test]
    fn embed_then_project_is_identity() {
        let mut v = SpectralField::zeros(4).unwrap();
        v.set_mode(1, c(0.5, -0.25)).unwrap();
        v.set_mode(2, c(0.75, 0.0)).unwrap();
        let back = v.embed(32).unwrap().project(4).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn h_norm_values() {
        let model = ModelSpec::default();
        let zero = SpectralField::zeros(8).unwrap();
        assert_eq!(zero.h_norm(InterpolationWeight::new(0.5).unwrap(), &model), 0.0);

        let mut e1 = SpectralField::zeros(8).unwrap();
        e1.set_mode(1, c(1.0, 0.0)).unwrap();
        let lambda1 = (2.0 * std::f64::consts::PI).powi(2) / 5.0;
        assert_relative_eq!(
            e1.h_norm(InterpolationWeight::new(0.5).unwrap(), &model),
            (2.0 * lambda1).sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            e1.h_norm(InterpolationWeight::L2, &model),
            2f64.sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn triangular_wave_coefficients_match_direct_integration() {
        let u = triangular_wave_coefficients(1024).unwrap();
        assert_relative_eq!(u.coefficient(0).re, 0.5, max_relative = 1e-15);
        assert_relative_eq!(u.coefficient(1).re, -0.202_642_367_284_675_5, max_relative = 1e-12);
        assert_relative_eq!(u.coefficient(-1).re, u.coefficient(1).re);
        assert_eq!(u.coefficient(2), c(0.0, 0.0));

        // Quadrature oracle for ∫ u₀(x) e^{-i2πnx} dx, independent of the closed form.
        let quad = |n: i64| {
            let m = 20_000;
            let h = 1.0 / m as f64;
            let mut acc = c(0.0, 0.0);
            for j in 0..m {
                let x = (j as f64 + 0.5) * h;
                let u0 = if x <= 0.5 { 2.0 * x } else { 2.0 * (1.0 - x) };
                let phase = -2.0 * std::f64::consts::PI * n as f64 * x;
                acc += c(phase.cos(), phase.sin()) * (u0 * h);
            }
            acc
        };
        for n in [0, 1, 2, 3, 5, 6] {
            let q = quad(n);
            assert!((q - u.coefficient(n)).norm() < 1e-8, "mode {n}: {q} vs {}", u.coefficient(n));
        }
    }

    #[test]
    fn triangular_wave_norm_converges_upward() {
        let target = (1.0f64 / 3.0).sqrt();
        let mut prev = 0.0;
        for n in [8, 32, 128, 1024] {
            let norm = triangular_wave_coefficients(n).unwrap().norm();
            assert!(norm >= prev && norm <= target);
            prev = norm;
        }
        assert!((prev - target).abs() < 1e-4);
    }

    fn hermitian_field(n: usize) -> impl Strategy<Value = SpectralField> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n / 2 + 1).prop_map(move |v| {
            SpectralField::from_half_spectrum(n, v.into_iter().map(|(a, b)| c(a, b)).collect())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn projection_is_contractive_and_idempotent(v in hermitian_field(32), p in 1u32..5) {
            let n = 1usize << p;
            let once = v.project(n).unwrap();
            prop_assert!(once.norm() <= v.norm() + 1e-15);
            prop_assert_eq!(once.project(n).unwrap(), once.clone());
            for k in 0..n / 2 {
                prop_assert_eq!(once.half_spectrum()[k], v.half_spectrum()[k]);
            }
        }
    }
}
