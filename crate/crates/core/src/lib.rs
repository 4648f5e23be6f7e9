//! Spectral-Galerkin simulation of semilinear reaction–diffusion SPDE with
//! additive colored noise, and multilevel Monte Carlo estimation of the mean
//! final-time field with pathwise-coupled exponential Euler, drift-exponential
//! Euler and Milstein schemes.

pub mod error;
pub mod harness;
pub mod mlmc;
pub mod noise;
pub mod rates;
pub mod reaction;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
