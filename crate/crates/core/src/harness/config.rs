//! Experiment configuration: TOML files, named presets and scale-dependent defaults.
//!
//! A config may name a `preset`; the preset's table is loaded first and the
//! file's own keys are merged over it (tables recursively, everything else
//! replaced). Sizes left unset fall back to the defaults of the active scale.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlmc::{LevelRule, LevelSchedule, MlmcConfig, VarianceMode};
use crate::rates::Axis;
use crate::reaction::ReactionKind;
use crate::solver::SchemeKind;
use crate::spectral::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale {other:?}, expected desk | paper"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rates,
    Mlmc,
    Reference,
    Compare,
    CouplingDemo,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Rates => "rates",
            Mode::Mlmc => "mlmc",
            Mode::Reference => "reference",
            Mode::Compare => "compare",
            Mode::CouplingDemo => "coupling-demo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub b: f64,
    pub reaction: ReactionKind,
    #[serde(default = "default_final_time")]
    pub final_time: f64,
    /// Only `"default"` (`λ_0 = 1`, `λ_n = (2nπ)²/5`).
    #[serde(default = "default_law")]
    pub eigenvalues: String,
    /// `"default"` (`q_n = λ_n^{-2b}/4`) or `"zero"`.
    #[serde(default = "default_law")]
    pub noise: String,
}

fn default_final_time() -> f64 {
    0.5
}

fn default_law() -> String {
    "default".into()
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return Err(Error::Config(format!("final_time must be positive, got {}", self.final_time)));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::Config(format!("b must be non-negative, got {}", self.b)));
        }
        if self.eigenvalues != "default" {
            return Err(Error::Config(format!(
                "unknown eigenvalue law {:?}, expected \"default\"",
                self.eigenvalues
            )));
        }
        let model = ModelSpec::new(self.b, self.reaction).with_final_time(self.final_time);
        match self.noise.as_str() {
            "default" => Ok(model),
            "zero" => Ok(model.deterministic()),
            other => Err(Error::Config(format!(
                "unknown noise law {other:?}, expected \"default\" | \"zero\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleChoice {
    /// The resolutions used in the experiments.
    Experimental,
    /// `J_ℓ = J₀ 2^ℓ` with the cost-optimal spatial growth of the scheme.
    Asymptotic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmcSection {
    /// Scheme of the `mlmc` command (default: first entry of `schemes`).
    pub scheme: Option<SchemeKind>,
    pub epsilon: Option<f64>,
    pub level_rule: Option<String>,
    pub schedule: Option<ScheduleChoice>,
    pub j0: Option<usize>,
    pub n0: Option<usize>,
    pub multipliers: Option<[u64; 2]>,
    pub allocation_factor: Option<f64>,
    /// `"model"` or `"measured"`.
    pub variance_mode: Option<String>,
    pub pilot: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub axes: Option<Vec<Axis>>,
    pub n_star: Option<usize>,
    pub time_grid: Option<Vec<usize>>,
    pub time_samples: Option<u64>,
    pub j_star: Option<usize>,
    pub space_grid: Option<Vec<usize>>,
    pub space_samples: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Tolerances `ε = 2^{-k}` for each listed `k`.
    pub eps_exponents: Option<Vec<i32>>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Deterministic solve for linear or zero reaction, overkill MLMC otherwise.
    Auto,
    Deterministic,
    Mlmc,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub kind: Option<ReferenceKind>,
    pub n: Option<usize>,
    pub j: Option<usize>,
    pub eps_exponent: Option<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub n: Option<usize>,
    pub steps: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset the file was layered on, if any.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub model: ModelConfig,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeKind>,
    #[serde(default)]
    pub mlmc: MlmcSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub coupling: CouplingSection,
}

fn default_scale() -> Scale {
    Scale::Desk
}

fn default_seed() -> u64 {
    20240101
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_schemes() -> Vec<SchemeKind> {
    SchemeKind::ALL.to_vec()
}

fn pow2_range(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

/// Names accepted by `preset = "..."`.
pub const PRESETS: [&str; 8] = [
    "paper-linear-b025",
    "paper-linear-b05",
    "paper-trig-b025",
    "paper-trig-b05",
    "desk-linear-b025",
    "desk-linear-b05",
    "desk-trig-b025",
    "desk-trig-b05",
];

/// TOML text of a named preset.
pub fn preset_toml(name: &str) -> Option<String> {
    if !PRESETS.contains(&name) {
        return None;
    }
    let mut parts = name.split('-');
    let scale = parts.next()?;
    let reaction = parts.next()?;
    let b = match parts.next()? {
        "b025" => "0.25",
        _ => "0.5",
    };
    Some(format!(
        "scale = \"{scale}\"\n\n[model]\nb = {b}\nreaction = \"{reaction}\"\nfinal_time = 0.5\n"
    ))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, layering it over its preset when one is named.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let merged = match table.get("preset") {
            Some(toml::Value::String(name)) => {
                let base_text = preset_toml(name).ok_or_else(|| {
                    Error::Config(format!("unknown preset {name:?}, expected one of {}", PRESETS.join(", ")))
                })?;
                let mut base: toml::Table = base_text.parse().expect("presets are valid TOML");
                merge(&mut base, table);
                base
            }
            Some(_) => return Err(parse_err("preset must be a string".into())),
            None => table,
        };
        let config: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// A preset with no overrides.
    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_toml(name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        let mut config = Self::from_toml_str(&text, Path::new(name))?;
        config.preset = Some(name.to_string());
        Ok(config)
    }

    fn check(&self) -> Result<()> {
        self.model.build()?;
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        self.mlmc_config(self.mlmc_scheme(), self.mlmc_epsilon())?;
        if let Some(k) = &self.compare.eps_exponents {
            if k.is_empty() || k.iter().any(|&k| k < 1) {
                return Err(Error::Config("eps_exponents must be positive integers".into()));
            }
        }
        if self.compare.runs == Some(0) {
            return Err(Error::Config("compare.runs must be >= 1".into()));
        }
        Ok(())
    }

    /// Checks that the command being run matches a `mode` set in the file.
    pub fn check_mode(&self, mode: Mode) -> Result<()> {
        match self.mode {
            Some(m) if m != mode => Err(Error::Usage(format!(
                "config is for mode {m}, but command {mode} was requested"
            ))),
            _ => Ok(()),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.build()
    }

    pub fn phi(&self) -> f64 {
        (0.25 + self.model.b).min(1.0 - 1e-6)
    }

    pub fn mlmc_scheme(&self) -> SchemeKind {
        self.mlmc.scheme.unwrap_or(self.schemes[0])
    }

    pub fn mlmc_epsilon(&self) -> f64 {
        self.mlmc.epsilon.unwrap_or(2f64.powi(-5))
    }

    /// Estimator settings for `scheme` at tolerance `epsilon`.
    pub fn mlmc_config(&self, scheme: SchemeKind, epsilon: f64) -> Result<MlmcConfig> {
        let phi = self.phi();
        let mut config = MlmcConfig::experimental(scheme, phi, epsilon);
        let s = &self.mlmc;
        if let Some(rule) = &s.level_rule {
            if rule != "default" {
                config.level_rule = rule.parse::<LevelRule>()?;
            }
        }
        if s.schedule == Some(ScheduleChoice::Asymptotic) {
            config.schedule = LevelSchedule::asymptotic(scheme, phi, s.j0.unwrap_or(4), s.n0.unwrap_or(4));
        } else if s.j0.is_some() || s.n0.is_some() {
            return Err(Error::Config("j0 and n0 only apply to the asymptotic schedule".into()));
        }
        if let Some([m0, m1]) = s.multipliers {
            config.multipliers = (m0, m1);
        }
        if let Some(a) = s.allocation_factor {
            config.allocation_factor = a;
        }
        config.variance_mode = match s.variance_mode.as_deref() {
            None | Some("model") => VarianceMode::Model,
            Some("measured") => VarianceMode::Measured {
                pilot: s.pilot.unwrap_or(64),
            },
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown variance_mode {other:?}, expected model | measured"
                )))
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn rate_axes(&self) -> Vec<Axis> {
        self.rates.axes.clone().unwrap_or_else(|| vec![Axis::Time, Axis::Space])
    }

    /// `(N*, J grid, samples)` of the time-axis study.
    pub fn time_study(&self) -> (usize, Vec<usize>, u64) {
        let r = &self.rates;
        match self.scale {
            Scale::Desk => (
                r.n_star.unwrap_or(256),
                r.time_grid.clone().unwrap_or_else(|| pow2_range(4, 10)),
                r.time_samples.unwrap_or(2000),
            ),
            Scale::Paper => (
                r.n_star.unwrap_or(1024),
                r.time_grid.clone().unwrap_or_else(|| pow2_range(4, 12)),
                r.time_samples.unwrap_or(10_000),
            ),
        }
    }

    /// `(J*, N grid, samples)` of the space-axis study; each grid entry is compared with twice itself.
    pub fn space_study(&self) -> (usize, Vec<usize>, u64) {
        let r = &self.rates;
        match self.scale {
            Scale::Desk => (
                r.j_star.unwrap_or(1 << 14),
                r.space_grid.clone().unwrap_or_else(|| pow2_range(3, 8)),
                r.space_samples.unwrap_or(128),
            ),
            Scale::Paper => (
                r.j_star.unwrap_or(1 << 18),
                r.space_grid.clone().unwrap_or_else(|| pow2_range(3, 10)),
                r.space_samples.unwrap_or(250),
            ),
        }
    }

    pub fn compare_exponents(&self) -> Vec<i32> {
        self.compare.eps_exponents.clone().unwrap_or_else(|| match self.scale {
            Scale::Desk => (4..=7).collect(),
            Scale::Paper => (4..=9).collect(),
        })
    }

    pub fn compare_runs(&self) -> usize {
        self.compare.runs.unwrap_or(32)
    }

    pub fn reference_kind(&self) -> ReferenceKind {
        match self.reference.kind.unwrap_or(ReferenceKind::Auto) {
            ReferenceKind::Auto => match self.model.reaction {
                ReactionKind::Zero | ReactionKind::Linear => ReferenceKind::Deterministic,
                ReactionKind::Trigonometric => ReferenceKind::Mlmc,
            },
            k => k,
        }
    }

    /// Resolutions of the deterministic reference.
    pub fn reference_resolution(&self) -> (usize, usize) {
        let (n, j) = match self.scale {
            Scale::Desk => (1 << 10, 1 << 14),
            Scale::Paper => (1 << 13, 1 << 18),
        };
        (self.reference.n.unwrap_or(n), self.reference.j.unwrap_or(j))
    }

    /// `k` of the overkill tolerance `2^{-k}`: two past the finest compared tolerance.
    pub fn reference_eps_exponent(&self) -> i32 {
        self.reference
            .eps_exponent
            .unwrap_or_else(|| self.compare_exponents().into_iter().max().unwrap_or(7) + 2)
    }

    pub fn coupling_resolution(&self) -> (usize, Vec<usize>) {
        (
            self.coupling.n.unwrap_or(1 << 8),
            self.coupling.steps.clone().unwrap_or_else(|| vec![1 << 6, 1 << 8, 1 << 10]),
        )
    }
}
