use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{check_power_of_two, SpectralField};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Grids up to this size use direct sums, which beat the FFT's fixed overhead.
const DIRECT_MAX: usize = 8;

/// FFT pair between the half spectrum of an `N`-mode field and its values at
/// the grid points `x_k = k/N`, with owned scratch buffers.
///
/// Not `Sync`; each worker keeps its own (clone is cheap, plans are shared).
#[derive(Clone)]
pub struct GridTransform {
    n: usize,
    plan: Plan,
}

#[derive(Clone)]
enum Plan {
    Fft {
        forward: Arc<dyn RealToComplex<f64>>,
        inverse: Arc<dyn ComplexToReal<f64>>,
        spectrum: Vec<Complex64>,
        scratch: Vec<Complex64>,
    },
    /// `cos`/`sin` of `2πjk/N`, row `j` holding slots `k = 0..=N/2`.
    Direct { cos: Vec<f64>, sin: Vec<f64> },
}

impl fmt::Debug for GridTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.plan {
            Plan::Fft { .. } => "fft",
            Plan::Direct { .. } => "direct",
        };
        f.debug_struct("GridTransform")
            .field("n", &self.n)
            .field("plan", &kind)
            .finish()
    }
}

impl GridTransform {
    pub fn new(n: usize) -> Result<Self> {
        check_power_of_two(n, "grid length")?;
        if n <= DIRECT_MAX {
            Ok(Self::direct(n))
        } else {
            Ok(Self::fft(n))
        }
    }

    fn fft(n: usize) -> Self {
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        let scratch_len = forward
            .get_scratch_len()
            .max(inverse.get_scratch_len());
        Self {
            n,
            plan: Plan::Fft {
                forward,
                inverse,
                spectrum: vec![Complex64::new(0.0, 0.0); n / 2 + 1],
                scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            },
        }
    }

    fn direct(n: usize) -> Self {
        let slots = n / 2 + 1;
        let mut cos = Vec::with_capacity(n * slots);
        let mut sin = Vec::with_capacity(n * slots);
        for j in 0..n {
            for k in 0..slots {
                // reduce jk mod N first so the tables are exact at the quarter points
                let r = (j * k) % n;
                let (s, c) = if r == 0 {
                    (0.0, 1.0)
                } else if 4 * r == n {
                    (1.0, 0.0)
                } else if 2 * r == n {
                    (0.0, -1.0)
                } else if 4 * r == 3 * n {
                    (-1.0, 0.0)
                } else {
                    (2.0 * std::f64::consts::PI * r as f64 / n as f64).sin_cos()
                };
                cos.push(c);
                sin.push(s);
            }
        }
        Self {
            n,
            plan: Plan::Direct { cos, sin },
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid values `Σ_n c_n e^{i2πnk/N}` written into `grid` (length `N`).
    pub fn synthesize(&mut self, half_spectrum: &[Complex64], grid: &mut [f64]) {
        debug_assert_eq!(half_spectrum.len(), self.n / 2 + 1);
        debug_assert_eq!(grid.len(), self.n);
        let last = self.n / 2;
        match &mut self.plan {
            Plan::Fft {
                inverse,
                spectrum,
                scratch,
                ..
            } => {
                spectrum.copy_from_slice(half_spectrum);
                spectrum[0].im = 0.0;
                spectrum[last].im = 0.0;
                inverse
                    .process_with_scratch(spectrum, grid, scratch)
                    .expect("buffer sizes fixed at construction");
            }
            Plan::Direct { cos, sin } => {
                let slots = last + 1;
                for (j, g) in grid.iter_mut().enumerate() {
                    let (cr, sr) = (&cos[j * slots..][..slots], &sin[j * slots..][..slots]);
                    let mut acc = 0.0;
                    for k in 1..last {
                        acc += half_spectrum[k].re * cr[k] - half_spectrum[k].im * sr[k];
                    }
                    *g = half_spectrum[0].re + 2.0 * acc + half_spectrum[last].re * cr[last];
                }
            }
        }
    }

    /// Half spectrum of the real grid values; `grid` is used as scratch.
    pub fn analyze(&mut self, grid: &mut [f64], half_spectrum: &mut [Complex64]) {
        debug_assert_eq!(grid.len(), self.n);
        let inv_n = 1.0 / self.n as f64;
        let last = half_spectrum.len() - 1;
        match &mut self.plan {
            Plan::Fft {
                forward, scratch, ..
            } => {
                forward
                    .process_with_scratch(grid, half_spectrum, scratch)
                    .expect("buffer sizes fixed at construction");
                for c in half_spectrum.iter_mut() {
                    *c *= inv_n;
                }
            }
            Plan::Direct { cos, sin } => {
                let slots = last + 1;
                for (k, c) in half_spectrum.iter_mut().enumerate() {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, &g) in grid.iter().enumerate() {
                        re += g * cos[j * slots + k];
                        im -= g * sin[j * slots + k];
                    }
                    *c = Complex64::new(re * inv_n, im * inv_n);
                }
            }
        }
        half_spectrum[0].im = 0.0;
        half_spectrum[last].im = 0.0;
    }
}

/// Evaluates the field at `x = k/N`, `k = 0..N`.
pub fn to_grid(v: &SpectralField) -> Vec<f64> {
    let n = v.n_modes();
    let mut transform = GridTransform::new(n).expect("field sizes are powers of two");
    let mut grid = vec![0.0; n];
    transform.synthesize(v.half_spectrum(), &mut grid);
    grid
}

/// Inverse of [`to_grid`]: the band coefficients interpolating `grid`.
pub fn from_grid(grid: &[f64]) -> Result<SpectralField> {
    let n = grid.len();
    check_power_of_two(n, "grid length")?;
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Usage("grid values must be finite".into()));
    }
    let mut transform = GridTransform::new(n)?;
    let mut buf = grid.to_vec();
    let mut modes = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
    transform.analyze(&mut buf, &mut modes);
    SpectralField::from_half_spectrum(n, modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_field_gives_constant_grid() {
        let mut v = SpectralField::zeros(8).unwrap();
        v.set_mode(0, Complex64::new(3.0, 0.0)).unwrap();
        assert!(to_grid(&v).iter().all(|&x| (x - 3.0).abs() < 1e-15));
    }

    #[test]
    fn alternating_grid_is_the_nyquist_mode() {
        let v = from_grid(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        // Direct DFT oracle: c_n = (1/N) Σ_k g_k e^{-i2πnk/N}.
        let g = [1.0, -1.0, 1.0, -1.0];
        for n in -2i64..2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, gk) in g.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (n * k as i64) as f64 / 4.0;
                acc += Complex64::new(phase.cos(), phase.sin()) * (gk / 4.0);
            }
            assert!((acc - v.coefficient(n)).norm() < 1e-15, "n = {n}");
        }
        assert_eq!(v.coefficient(-2), Complex64::new(1.0, 0.0));
        assert_eq!(v.coefficient(1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn synthesis_matches_direct_sum() {
        let mut v = SpectralField::zeros(8).unwrap();
        v.set_mode(1, Complex64::new(0.3, -0.2)).unwrap();
        v.set_mode(3, Complex64::new(-0.1, 0.4)).unwrap();
        v.set_mode(4, Complex64::new(0.25, 0.0)).unwrap();
        let grid = to_grid(&v);
        for (k, gk) in grid.iter().enumerate() {
            let x = k as f64 / 8.0;
            let mut acc = Complex64::new(0.0, 0.0);
            for n in -4i64..4 {
                let phase = 2.0 * std::f64::consts::PI * n as f64 * x;
                acc += v.coefficient(n) * Complex64::new(phase.cos(), phase.sin());
            }
            assert!((acc.re - gk).abs() < 1e-14 && acc.im.abs() < 1e-14);
        }
    }

    #[test]
    fn direct_sums_agree_with_the_fft() {
        for n in [2usize, 4, 8, 16] {
            let mut direct = GridTransform::direct(n);
            let mut fft = GridTransform::fft(n);
            let modes: Vec<Complex64> = (0..=n / 2)
                .map(|k| Complex64::new(0.3 - 0.1 * k as f64, 0.05 * k as f64 - 0.2))
                .collect();
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            direct.synthesize(&modes, &mut a);
            fft.synthesize(&modes, &mut b);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14), "n = {n}");
            let (mut ca, mut cb) = (modes.clone(), modes.clone());
            direct.analyze(&mut a, &mut ca);
            fft.analyze(&mut b, &mut cb);
            assert!(ca.iter().zip(&cb).all(|(x, y)| (x - y).norm() < 1e-14), "n = {n}");
        }
    }

    #[test]
    fn non_power_of_two_grid_is_rejected() {
        assert!(matches!(from_grid(&[1.0, 2.0, 3.0]), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn grid_round_trip(p in 1u32..10, seed in any::<u64>()) {
            let n = 1usize << p;
            let mut state = seed;
            let grid: Vec<f64> = (0..n).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            }).collect();
            let back = to_grid(&from_grid(&grid).unwrap());
            let scale = grid.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let err = grid.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-12 * scale);
        }

        #[test]
        fn parseval(p in 1u32..10, coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 513)) {
            let n = 1usize << p;
            let modes = coeffs[..n / 2 + 1].iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let v = SpectralField::from_half_spectrum(n, modes).unwrap();
            let grid = to_grid(&v);
            let mean_sq = grid.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let h2 = v.norm_squared();
            prop_assert!((h2 - mean_sq).abs() <= 1e-12 * h2.max(1e-300));
        }
    }
}
