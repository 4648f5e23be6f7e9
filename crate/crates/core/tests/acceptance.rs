//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Positional arguments select criteria by substring, e.g.
//! `cargo test --release --test acceptance -- allocation telescoping`.
//! The cost-separation criterion runs for hours on a single core.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use spde_mlmc::harness::{self, ExperimentConfig};
use spde_mlmc::mlmc::{
    allocate_samples, level_resolutions, measure_level_variances, model_cost, model_variance, run_estimator,
    LevelSchedule, MlmcConfig,
};
use spde_mlmc::noise::{ModeStreams, NoiseStreamKey, StreamRole};
use spde_mlmc::rates::{fit_rate, Axis};
use spde_mlmc::reaction::{OpCounter, ReactionKind};
use spde_mlmc::solver::{
    solve_coupled_pair, CoupledSolver, LevelSolver, PairObserver, PairResolution, SchemeKind,
};
use spde_mlmc::spectral::{ModelSpec, SpectralField};

const SCHEMES: [SchemeKind; 3] = [SchemeKind::ExpEuler, SchemeKind::DriftExpEuler, SchemeKind::Milstein];
const BS: [f64; 2] = [0.25, 0.5];
const REACTIONS: [ReactionKind; 2] = [ReactionKind::Linear, ReactionKind::Trigonometric];
const SEED: u64 = 20240101;

/// Collects sub-check lines; the criterion passes when every check does.
#[derive(Default)]
struct Checks {
    lines: Vec<String>,
    failed: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, line: String) {
        if !ok {
            self.failed += 1;
        }
        self.lines.push(format!("    [{}] {line}", if ok { "ok" } else { "MISS" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("    {line}"));
    }
}

fn artifact_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn name(scheme: SchemeKind) -> &'static str {
    scheme.config_name()
}

fn phi(b: f64) -> f64 {
    ModelSpec::new(b, ReactionKind::Zero).phi_nominal()
}

// ---------------------------------------------------------------- allocation

fn allocation(c: &mut Checks) {
    let eps = 2f64.powi(-11);
    let config = MlmcConfig::experimental(SchemeKind::ExpEuler, 0.5, eps);
    let top = config.num_levels().expect("valid config");
    c.check(
        top == 11 && config.rates.beta == 2.0 && config.rates.gamma == 2.0,
        format!("L = {top}, β = {}, γ = {}", config.rates.beta, config.rates.gamma),
    );
    let start = Instant::now();
    let v: Vec<f64> = (0..=top).map(|l| model_variance(l, config.rates.beta)).collect();
    let cost: Vec<f64> = (0..=top).map(|l| model_cost(l, config.rates.gamma)).collect();
    let m = allocate_samples(&config, &v, &cost).expect("positive inputs");
    let elapsed = start.elapsed();

    // Oracle: V_ℓ/C_ℓ = 2^{-4ℓ}/(ℓ+1) and V_jC_j = j+1 when β = γ = 2.
    let total: f64 = (1..=12).map(|j| f64::from(j).sqrt()).sum();
    let oracle: Vec<u64> = (0..12)
        .map(|l| {
            let mult = if l == 0 { 20 } else { 5 };
            let pre = 2.0 * 2f64.powi(22) * 2f64.powi(-2 * l) / f64::from(l + 1).sqrt() * total;
            mult * pre.ceil() as u64
        })
        .collect();
    let published = [(0usize, 4_907_168_680u64), (1, 216_868_270), (2, 44_268_050), (10, 355), (11, 85)];
    for (l, want) in published {
        let mult = if l == 0 { 20 } else { 5 };
        c.check(
            m.get(l).is_some_and(|&got| got.abs_diff(want) <= mult),
            format!("M_{l} = {:?}, published {want}", m.get(l)),
        );
    }
    c.check(m == oracle, format!("full sequence {m:?} matches the direct formula"));
    c.check(elapsed.as_secs_f64() < 1e-3, format!("runtime {:.1} µs < 1 ms", elapsed.as_secs_f64() * 1e6));
}

// ---------------------------------------------------------------- SDC

/// Largest coarse-band gap `‖P_{N_c} U^F_{2j} - U^C_j‖` seen along a path.
struct GapTracker {
    n_fine: usize,
    n_coarse: usize,
    max_gap: f64,
}

impl PairObserver for GapTracker {
    fn observe(&mut self, _: usize, fine: &[Complex64], coarse: &[Complex64], _: &[Complex64]) {
        let f = SpectralField::from_half_spectrum(self.n_fine, fine.to_vec()).expect("fine layout");
        let c = SpectralField::from_half_spectrum(self.n_coarse, coarse.to_vec()).expect("coarse layout");
        let gap = f.project(self.n_coarse).expect("coarse band fits").distance(&c);
        self.max_gap = self.max_gap.max(gap);
    }
}

fn pair_resolution(level: u32, schedule: &LevelSchedule) -> PairResolution {
    let f = level_resolutions(level, schedule);
    let coarse = (level > 0).then(|| {
        let c = level_resolutions(level - 1, schedule);
        (c.n_modes, c.steps)
    });
    PairResolution {
        n_fine: f.n_modes,
        j_fine: f.steps,
        coarse,
    }
}

fn sdc(c: &mut Checks) {
    for b in BS {
        let model = ModelSpec::new(b, ReactionKind::Zero);
        let u0 = model.initial.project(1024).expect("valid band").norm();
        for scheme in SCHEMES {
            let schedule = LevelSchedule::experimental(scheme, phi(b));
            let mut worst: f64 = 0.0;
            for level in 1..=6 {
                let res = pair_resolution(level, &schedule);
                let (n_c, _) = res.coarse.expect("level > 0");
                let mut solver = CoupledSolver::new(&model, scheme, res).expect("valid pair");
                for r in 0..4 {
                    let mut tracker = GapTracker {
                        n_fine: res.n_fine,
                        n_coarse: n_c,
                        max_gap: 0.0,
                    };
                    let key = NoiseStreamKey::new(SEED, StreamRole::Rates, level, r);
                    solver.solve_observed(&key, &mut OpCounter::default(), &mut tracker);
                    worst = worst.max(tracker.max_gap);
                }
            }
            let rel = worst / u0;
            if scheme == SchemeKind::ExpEuler {
                c.check(rel <= 1e-12, format!("b = {b}, {}: max gap / ‖u0‖ = {rel:.2e} ≤ 1e-12", name(scheme)));
            } else {
                c.check(rel > 0.0, format!("b = {b}, {}: max gap / ‖u0‖ = {rel:.2e} > 0", name(scheme)));
            }
        }
    }
}

// ---------------------------------------------------------------- pathwise

fn pathwise(c: &mut Checks) {
    for b in BS {
        let model = ModelSpec::new(b, ReactionKind::Trigonometric);
        for scheme in SCHEMES {
            let schedule = LevelSchedule::experimental(scheme, phi(b));
            let law = scheme.increment_law();
            let mut worst: f64 = 0.0;
            for level in 1..=5 {
                let res = pair_resolution(level, &schedule);
                let (n_c, j_c) = res.coarse.expect("level > 0");
                for r in 0..3 {
                    let key = NoiseStreamKey::new(SEED, StreamRole::Estimator, level, r);
                    let pair = solve_coupled_pair(&model, scheme, level, res, &key).expect("valid pair");

                    // Rebuild the coarse noise from the fine draws by hand.
                    let fine = LevelSolver::new(&model, scheme, res.n_fine, res.j_fine).expect("fine");
                    let mut streams = ModeStreams::new(&key, fine.slots());
                    let slots_c = n_c / 2 + 1;
                    let mut coarse_noise = Vec::with_capacity(j_c);
                    for _ in 0..j_c {
                        let mut z0 = vec![Complex64::new(0.0, 0.0); fine.slots()];
                        let mut z1 = z0.clone();
                        streams.draw_step(&mut z0);
                        fine.scale_normals(&mut z0);
                        streams.draw_step(&mut z1);
                        fine.scale_normals(&mut z1);
                        let inc: Vec<Complex64> =
                            (0..slots_c).map(|k| law.couple(fine.decay()[k], z0[k], z1[k])).collect();
                        coarse_noise.push(inc);
                    }
                    let mut coarse = LevelSolver::new(&model, scheme, n_c, j_c).expect("coarse");
                    let direct = coarse.solve_with(
                        |j, buf| buf.copy_from_slice(&coarse_noise[j]),
                        &mut OpCounter::default(),
                    );
                    worst = worst.max(direct.distance(&pair.coarse));

                    let mut alone = LevelSolver::new(&model, scheme, res.n_fine, res.j_fine).expect("fine");
                    worst = worst.max(alone.solve(&key, &mut OpCounter::default()).distance(&pair.fine));
                }
            }
            c.check(
                worst <= 1e-12,
                format!("b = {b}, {}: max ‖direct - coupled‖ = {worst:.2e} ≤ 1e-12", name(scheme)),
            );
        }
    }
}

// ---------------------------------------------------------------- exact OU law

fn exact_law(c: &mut Checks) {
    const PATHS: u64 = 10_000;
    const N: usize = 8;
    for b in BS {
        let model = ModelSpec::new(b, ReactionKind::Zero);
        let tables = model.mode_tables(N).expect("valid band");
        let u0 = model.initial.project(N).expect("valid band");
        let t = model.final_time;
        for steps in [1usize, 8, 64] {
            let mut solver = LevelSolver::new(&model, SchemeKind::ExpEuler, N, steps).expect("solver");
            let slots = N / 2 + 1;
            // per slot and part: Σx, Σx², Σx⁴ of the centred-on-oracle values
            let mut sums = vec![[[0.0f64; 3]; 2]; slots];
            let mut means = vec![[0.0f64; 2]; slots];
            let mut samples = Vec::with_capacity(PATHS as usize);
            for r in 0..PATHS {
                let key = NoiseStreamKey::new(SEED, StreamRole::Rates, steps as u32, r);
                let f = solver.solve(&key, &mut OpCounter::default());
                samples.push(f.into_half_spectrum());
            }
            for s in &samples {
                for k in 0..slots {
                    means[k][0] += s[k].re / PATHS as f64;
                    means[k][1] += s[k].im / PATHS as f64;
                }
            }
            for s in &samples {
                for k in 0..slots {
                    for (p, x) in [s[k].re, s[k].im].into_iter().enumerate() {
                        let d = x - means[k][p];
                        sums[k][p][0] += d;
                        sums[k][p][1] += d * d;
                        sums[k][p][2] += d * d * d * d;
                    }
                }
            }
            let m = PATHS as f64;
            let mut worst_z: f64 = 0.0;
            for k in 0..slots {
                let (lambda, q) = (tables.lambda[k], tables.q[k]);
                let decay = (-lambda * t).exp();
                let full = q * -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda);
                let c0 = u0.half_spectrum()[k];
                let parts = if k == 0 {
                    [(c0.re * decay, full), (0.0, 0.0)]
                } else if k == slots - 1 {
                    [(c0.re * decay, full / 2.0), (0.0, 0.0)]
                } else {
                    [(c0.re * decay, full / 2.0), (c0.im * decay, full / 2.0)]
                };
                for (p, (mean_want, var_want)) in parts.into_iter().enumerate() {
                    let var = sums[k][p][1] / (m - 1.0);
                    if var_want == 0.0 {
                        worst_z = worst_z.max(if var == 0.0 && means[k][p] == 0.0 { 0.0 } else { f64::INFINITY });
                        continue;
                    }
                    let z_mean = (means[k][p] - mean_want).abs() / (var / m).sqrt();
                    let m4 = sums[k][p][2] / m;
                    let var_se = ((m4 - var * var).max(0.0) / m).sqrt();
                    let z_var = (var - var_want).abs() / var_se;
                    worst_z = worst_z.max(z_mean).max(z_var);
                }
            }
            c.check(worst_z <= 4.0, format!("b = {b}, J = {steps}: worst |z| over slot means/variances = {worst_z:.2}"));
        }
    }
}

// ---------------------------------------------------------------- rates

fn desk_config(preset: &str, mode: &str, out: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "preset = \"{preset}\"\nmode = \"{mode}\"\nseed = {SEED}\nout = {:?}\n{extra}",
        out.display().to_string()
    );
    ExperimentConfig::from_toml_str(&text, Path::new("acceptance.toml")).expect("valid acceptance config")
}

fn preset_name(reaction: ReactionKind, b: f64) -> String {
    format!("desk-{}-{}", reaction.config_name(), if b == 0.25 { "b025" } else { "b05" })
}

fn rates(c: &mut Checks) {
    for reaction in REACTIONS {
        for b in BS {
            let preset = preset_name(reaction, b);
            let config = desk_config(&preset, "rates", &artifact_dir("rates").join(&preset), "");
            let studies = harness::cmd_rates(&config).expect("rate studies run");
            for study in studies {
                let (want, tol) = match (study.axis, study.scheme) {
                    (Axis::Time, SchemeKind::ExpEuler) => (1.0, 0.15),
                    (Axis::Time, _) => (phi(b), 0.15),
                    (Axis::Space, _) => (2.0 * phi(b), 0.2),
                };
                let slope = study.fit.as_ref().map_or(f64::NAN, |f| f.slope);
                let ok = (slope - want).abs() <= tol;
                c.check(
                    ok,
                    format!(
                        "{preset} {} {}: slope {slope:.3}, want {want:.3} ± {tol}",
                        study.axis,
                        name(study.scheme)
                    ),
                );
                if !ok && study.axis == Axis::Space {
                    // Not gated: refit on bands whose top mode the fixed step still resolves.
                    let model = ModelSpec::new(b, reaction);
                    let dt = model.final_time / study.fixed as f64;
                    let pts: Vec<(f64, f64)> = study
                        .points
                        .iter()
                        .filter(|p| model.lambda(p.resolution as u64) * dt <= 1.0)
                        .map(|p| (p.resolution as f64, p.rmse))
                        .collect();
                    let refit = fit_rate(&pts).map_or(f64::NAN, |f| f.slope);
                    c.note(format!(
                        "diagnostic: slope {refit:.3} over the {} bands with λ_N·T/J* ≤ 1",
                        pts.len()
                    ));
                }
            }
        }
    }
}

// ---------------------------------------------------------------- variance decay

fn variance_decay(c: &mut Checks) {
    for reaction in REACTIONS {
        for b in BS {
            let model = ModelSpec::new(b, reaction);
            for scheme in SCHEMES {
                let schedule = LevelSchedule::experimental(scheme, phi(b));
                let vs = measure_level_variances(&model, scheme, &schedule, 2..=6, 2000, SEED).expect("levels run");
                let pts: Vec<(f64, f64)> = vs.iter().map(|v| (2f64.powi(v.level as i32), v.v_measured)).collect();
                let slope = fit_rate(&pts).map_or(f64::NAN, |f| f.slope);
                let beta = if scheme == SchemeKind::ExpEuler { 2.0 } else { 2.0 * phi(b) };
                let ok = (slope - beta).abs() <= 0.3;
                c.check(
                    ok,
                    format!(
                        "{} b = {b} {}: decay {slope:.3}, want {beta:.3} ± 0.3",
                        reaction.config_name(),
                        name(scheme)
                    ),
                );
                if !ok {
                    // Not gated: the same fit further out, to separate a wrong rate from a late one.
                    let deep = measure_level_variances(&model, scheme, &schedule, 7..=11, 400, SEED)
                        .expect("levels run");
                    let pts: Vec<(f64, f64)> =
                        deep.iter().map(|v| (2f64.powi(v.level as i32), v.v_measured)).collect();
                    let refit = fit_rate(&pts).map_or(f64::NAN, |f| f.slope);
                    c.note(format!("diagnostic: decay {refit:.3} over levels 7..=11 with 400 pairs each"));
                }
            }
        }
    }
}

// ---------------------------------------------------------------- cost separation

fn compare_run(c: &mut Checks, reaction: ReactionKind, b: f64, runs: usize) -> Option<harness::CompareOutcome> {
    let preset = preset_name(reaction, b);
    let extra = format!("\n[compare]\neps_exponents = [4, 5, 6, 7]\nruns = {runs}\n");
    let config = desk_config(&preset, "compare", &artifact_dir("compare").join(&preset), &extra);
    let start = Instant::now();
    if let Err(e) = harness::cmd_reference(&config) {
        c.check(false, format!("{preset}: reference failed: {e}"));
        return None;
    }
    match harness::cmd_compare(&config) {
        Ok(outcome) => {
            c.note(format!("{preset}: {runs} runs per tolerance in {:.0} s", start.elapsed().as_secs_f64()));
            Some(outcome)
        }
        Err(e) => {
            c.check(false, format!("{preset}: compare failed: {e}"));
            None
        }
    }
}

fn slope_of(outcome: &harness::CompareOutcome, scheme: SchemeKind) -> (f64, f64) {
    outcome
        .slopes
        .iter()
        .find(|s| s.scheme == scheme)
        .map_or((f64::NAN, f64::NAN), |s| (s.ops_slope, s.model_cost_slope))
}

fn cost_separation(c: &mut Checks) {
    for reaction in REACTIONS {
        let label = reaction.config_name();
        let Some(outcome) = compare_run(c, reaction, 0.25, 32) else { continue };
        for a in &outcome.aggregates {
            let ratio = a.mse / (a.epsilon * a.epsilon);
            c.check(
                ratio <= 10.0,
                format!(
                    "{label} b = 0.25 {} ε = 2^{}: MSE/ε² = {ratio:.2} ± {:.2} ≤ 10",
                    name(a.scheme),
                    a.epsilon.log2(),
                    a.mse_stderr / (a.epsilon * a.epsilon)
                ),
            );
        }
        let steady = outcome.rows.iter().all(|r| {
            outcome
                .rows
                .iter()
                .filter(|o| o.scheme == r.scheme && o.epsilon == r.epsilon)
                .all(|o| o.ops == r.ops)
        });
        c.check(steady, format!("{label} b = 0.25: operation counts identical across runs"));
        let (exp_ops, exp_model) = slope_of(&outcome, SchemeKind::ExpEuler);
        c.check(
            (exp_ops - 2.0).abs() <= 0.6,
            format!("{label} b = 0.25 exp-euler: cost slope {exp_ops:.3} (model {exp_model:.3}), want 2 ± 0.6"),
        );
        for scheme in [SchemeKind::DriftExpEuler, SchemeKind::Milstein] {
            let (ops, model) = slope_of(&outcome, scheme);
            c.check(
                (ops - 3.0).abs() <= 0.6,
                format!("{label} b = 0.25 {}: cost slope {ops:.3} (model {model:.3}), want 3 ± 0.6", name(scheme)),
            );
            c.check(
                ops - exp_ops >= 0.6,
                format!("{label} b = 0.25 {}: separation {:.3} ≥ 0.6", name(scheme), ops - exp_ops),
            );
        }
    }
    // Operation counts do not depend on the run, so one run per tolerance fixes the slopes.
    for reaction in REACTIONS {
        let label = reaction.config_name();
        let Some(outcome) = compare_run(c, reaction, 0.5, 1) else { continue };
        let slopes: Vec<(f64, f64)> = SCHEMES.iter().map(|&s| slope_of(&outcome, s)).collect();
        let ops: Vec<f64> = slopes.iter().map(|s| s.0).collect();
        let spread = ops.iter().cloned().fold(f64::MIN, f64::max) - ops.iter().cloned().fold(f64::MAX, f64::min);
        let model: Vec<f64> = slopes.iter().map(|s| s.1).collect();
        let model_spread =
            model.iter().cloned().fold(f64::MIN, f64::max) - model.iter().cloned().fold(f64::MAX, f64::min);
        c.check(
            spread <= 0.3,
            format!(
                "{label} b = 0.5: cost slopes {ops:.3?} spread {spread:.3} ≤ 0.3 (model {model:.3?} spread {model_spread:.3})"
            ),
        );
    }
}

// ---------------------------------------------------------------- telescoping

fn telescoping(c: &mut Checks) {
    const RUNS: usize = 32;
    let b = 0.25;
    let model = ModelSpec::new(b, ReactionKind::Linear);
    let eps = 2f64.powi(-5);
    for scheme in SCHEMES {
        let config = MlmcConfig::experimental(scheme, phi(b), eps);
        let top = config.num_levels().expect("valid config");
        let finest = level_resolutions(top, &config.schedule);
        let reference = LevelSolver::new(&model, scheme, finest.n_modes, finest.steps)
            .expect("finest solver")
            .solve_noiseless(&mut OpCounter::default());
        let means: Vec<Vec<Complex64>> = (0..RUNS)
            .map(|run| {
                let report = run_estimator(&model, &config, harness::run_seed(SEED, run as u64)).expect("estimator");
                report.mean.resize(finest.n_modes).expect("same band").into_half_spectrum()
            })
            .collect();
        let slots = finest.n_modes / 2 + 1;
        let r = RUNS as f64;
        let mut avg = vec![Complex64::new(0.0, 0.0); slots];
        for m in &means {
            for (a, x) in avg.iter_mut().zip(m) {
                *a += x / r;
            }
        }
        // Standard error of the averaged field, slot by slot, as a field of its own.
        let se: Vec<Complex64> = (0..slots)
            .map(|k| {
                let (mut vr, mut vi) = (0.0, 0.0);
                for m in &means {
                    vr += (m[k].re - avg[k].re).powi(2);
                    vi += (m[k].im - avg[k].im).powi(2);
                }
                Complex64::new((vr / (r - 1.0) / r).sqrt(), (vi / (r - 1.0) / r).sqrt())
            })
            .collect();
        let se_norm = SpectralField::from_half_spectrum(finest.n_modes, se).expect("layout").norm();
        let avg = SpectralField::from_half_spectrum(finest.n_modes, avg).expect("layout");
        let err = avg.distance(&reference);
        c.check(
            err <= 3.0 * se_norm,
            format!(
                "{} (L = {top}, N = {}, J = {}): ‖mean - reference‖ = {err:.3e} ≤ 3 × {se_norm:.3e}",
                name(scheme),
                finest.n_modes,
                finest.steps
            ),
        );
    }
}

// ---------------------------------------------------------------- driver

type Criterion = (&'static str, fn(&mut Checks));

const CRITERIA: [Criterion; 8] = [
    ("allocation", allocation),
    ("sdc", sdc),
    ("pathwise", pathwise),
    ("exact-law", exact_law),
    ("rates", rates),
    ("variance-decay", variance_decay),
    ("cost-separation", cost_separation),
    ("telescoping", telescoping),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = Vec::new();
    let mut ran = 0;
    for (label, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut checks = Checks::default();
        let result = panic::catch_unwind(AssertUnwindSafe(|| run(&mut checks)));
        let secs = start.elapsed().as_secs_f64();
        let pass = result.is_ok() && checks.failed == 0;
        if result.is_err() {
            checks.lines.push("    [MISS] panicked".into());
        }
        println!(
            "{} {label} ({secs:.1} s, {} of {} checks missed)",
            if pass { "PASS" } else { "FAIL" },
            checks.failed + usize::from(result.is_err()),
            checks.lines.iter().filter(|l| l.trim_start().starts_with('[')).count()
        );
        for line in &checks.lines {
            println!("{line}");
        }
        if !pass {
            failures.push(label);
        }
    }
    println!("acceptance: {} criteria run, {} failed {:?}", ran, failures.len(), failures);
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
