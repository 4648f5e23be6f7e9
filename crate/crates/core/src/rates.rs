//! Empirical strong-rate studies in time and space, and log-log slope fits.
//!
//! Time axis: `E[‖V^{N*,2J} - V^{N*,J}‖²]^{1/2}` from coupled pairs.
//! Space axis: `E[‖V^{2N,J*} - V^{N,J*}‖²]^{1/2}` where both resolutions read
//! the same per-mode increment streams, so the common band sees identical noise
//! and the extra fine modes get their own draws.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlmc::sample_level;
use crate::noise::{NoiseStreamKey, StreamRole};
use crate::reaction::OpCounter;
use crate::solver::{CoupledSolver, LevelSolver, PairResolution, SchemeKind};
use crate::spectral::{ModelSpec, SpectralField};

/// Stream level tag for space-axis samples; time-axis points use `log₂ J`.
const SPACE_LEVEL_TAG: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Time,
    Space,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Time => "time",
            Axis::Space => "space",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    /// `J` on the time axis, `N` on the space axis (the coarser member).
    pub resolution: usize,
    pub rmse: f64,
    pub stderr: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Slope of `-log₂ rmse` against `log₂ resolution`.
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub used: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub scheme: SchemeKind,
    pub axis: Axis,
    /// `N*` on the time axis, `J*` on the space axis.
    pub fixed: usize,
    pub samples: u64,
    pub seed: u64,
    pub points: Vec<RatePoint>,
    pub fit: Option<RateFit>,
    pub warnings: Vec<String>,
    pub ops: u64,
}

/// OLS fit of `-log₂ rmse` on `log₂ resolution`. Non-positive or non-finite
/// values and repeated resolutions are dropped with a warning.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let mut warnings = Vec::new();
    let mut used: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &(res, rmse) in points {
        if !(res > 0.0 && res.is_finite() && rmse > 0.0 && rmse.is_finite()) {
            warnings.push(format!("excluded point ({res}, {rmse}): not positive and finite"));
        } else if used.iter().any(|&(x, _)| x == res.log2()) {
            warnings.push(format!("excluded repeated resolution {res}"));
        } else {
            used.push((res.log2(), -rmse.log2()));
        }
    }
    let n = used.len();
    if n < 3 {
        return Err(Error::Statistics(format!(
            "need at least 3 usable points for a rate fit, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = used.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = used
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = if n > 2 { (ssr / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(RateFit {
        slope,
        stderr,
        intercept,
        used: n,
        warnings,
    })
}

fn rmse_point(resolution: usize, sq_sum: f64, sq_sq_sum: f64, samples: u64) -> RatePoint {
    let m = samples as f64;
    let mse = sq_sum / m;
    let var = (sq_sq_sum / m - mse * mse).max(0.0) * m / (m - 1.0);
    let rmse = mse.sqrt();
    // delta method: sd(√X̄) ≈ sd(X̄)/(2√X̄)
    let stderr = if rmse > 0.0 {
        (var / m).sqrt() / (2.0 * rmse)
    } else {
        0.0
    };
    RatePoint {
        resolution,
        rmse,
        stderr,
        samples,
    }
}

/// Monte Carlo RMSE at each grid resolution with `samples` paths, plus a slope fit.
pub fn rmse_study(
    model: &ModelSpec,
    scheme: SchemeKind,
    axis: Axis,
    grid: &[usize],
    fixed: usize,
    samples: u64,
    seed: u64,
) -> Result<RateStudy> {
    if grid.len() < 4 {
        return Err(Error::Config(format!(
            "a rate study needs at least 4 grid points, got {}",
            grid.len()
        )));
    }
    if samples < 2 {
        return Err(Error::Config("a rate study needs at least 2 samples".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != grid.len() {
        return Err(Error::Config("rate grid has repeated resolutions".into()));
    }
    let (points, ops) = match axis {
        Axis::Time => time_axis(model, scheme, grid, fixed, samples, seed)?,
        Axis::Space => space_axis(model, scheme, grid, fixed, samples, seed)?,
    };
    let mut warnings = Vec::new();
    let fit = match fit_rate(
        &points
            .iter()
            .map(|p| (p.resolution as f64, p.rmse))
            .collect::<Vec<_>>(),
    ) {
        Ok(fit) => Some(fit),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    Ok(RateStudy {
        scheme,
        axis,
        fixed,
        samples,
        seed,
        points,
        fit,
        warnings,
        ops,
    })
}

fn time_axis(
    model: &ModelSpec,
    scheme: SchemeKind,
    grid: &[usize],
    n_star: usize,
    samples: u64,
    seed: u64,
) -> Result<(Vec<RatePoint>, u64)> {
    let mut ops = 0;
    let mut points = Vec::with_capacity(grid.len());
    for &j in grid {
        if j == 0 {
            return Err(Error::Config("time steps must be positive".into()));
        }
        let solver = CoupledSolver::new(
            model,
            scheme,
            PairResolution {
                n_fine: n_star,
                j_fine: 2 * j,
                coarse: Some((n_star, j)),
            },
        )?;
        let level = j.ilog2();
        let sums = sample_level(&solver, seed, StreamRole::Rates, level, 0..samples);
        ops += sums.ops.get();
        points.push(rmse_point(j, sums.sq_norm_sum, sums.sq_norm_sq_sum, samples));
    }
    Ok((points, ops))
}

fn space_axis(
    model: &ModelSpec,
    scheme: SchemeKind,
    grid: &[usize],
    j_star: usize,
    samples: u64,
    seed: u64,
) -> Result<(Vec<RatePoint>, u64)> {
    // every band is solved once per sample and reused by neighbouring grid points
    let mut bands: Vec<usize> = grid.iter().flat_map(|&n| [n, 2 * n]).collect();
    bands.sort_unstable();
    bands.dedup();
    let solvers: Vec<LevelSolver> = bands
        .iter()
        .map(|&n| LevelSolver::new(model, scheme, n, j_star))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = grid
        .iter()
        .map(|&n| {
            let lo = bands.binary_search(&n).expect("band listed");
            let hi = bands.binary_search(&(2 * n)).expect("band listed");
            (lo, hi)
        })
        .collect();

    let chunk = samples.div_ceil(1024).max(1);
    let n_chunks = samples.div_ceil(chunk);
    let partials: Vec<(Vec<(f64, f64)>, OpCounter)> = (0..n_chunks)
        .into_par_iter()
        .map_init(
            || solvers.clone(),
            |solvers, c| {
                let mut ops = OpCounter::default();
                let mut acc = vec![(0.0, 0.0); pairs.len()];
                let lo = c * chunk;
                let hi = (lo + chunk).min(samples);
                for r in lo..hi {
                    let key = NoiseStreamKey::new(seed, StreamRole::Rates, SPACE_LEVEL_TAG, r);
                    let fields: Vec<SpectralField> =
                        solvers.iter_mut().map(|s| s.solve(&key, &mut ops)).collect();
                    for (a, &(i, k)) in acc.iter_mut().zip(&pairs) {
                        let d = band_difference_sq(&fields[k], &fields[i]);
                        a.0 += d;
                        a.1 += d * d;
                    }
                }
                (acc, ops)
            },
        )
        .collect();
    let mut acc = vec![(0.0, 0.0); pairs.len()];
    let mut ops = OpCounter::default();
    for (p, o) in &partials {
        for (a, b) in acc.iter_mut().zip(p) {
            a.0 += b.0;
            a.1 += b.1;
        }
        ops.merge(*o);
    }
    let points = grid
        .iter()
        .zip(&acc)
        .map(|(&n, &(s, s2))| rmse_point(n, s, s2, samples))
        .collect();
    Ok((points, ops.get()))
}

/// `‖fine - embed(coarse)‖²_H` without allocating.
fn band_difference_sq(fine: &SpectralField, coarse: &SpectralField) -> f64 {
    let f = fine.half_spectrum();
    let c = coarse.half_spectrum();
    let half = f.len() - 1;
    f.iter()
        .enumerate()
        .map(|(k, &fk)| {
            let d = if k < c.len() { fk - c[k] } else { fk - Complex64::new(0.0, 0.0) };
            SpectralField::slot_weight(k, half) * d.norm_sqr()
        })
        .sum()
}
