//! Projected gradient descent on the factored Hankel objective.
//!
//! The iteration is spectral initialization by one-step hard thresholding,
//! then repeated gradient steps followed by row-norm trimming. Step sizes
//! come from an Armijo backtracking search rather than a fixed constant.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::factor::{procrustes, project_feasible, truncated_svd, FactorPair, LanczosOptions, ProjectionParams};
use crate::hankel::{d_scale, g_apply, Direction, HankelShape};
use crate::objective::{evaluate, gradient_at, norm_sqr, Evaluation, ObjectiveContext};
use crate::sampling::SampleSet;

/// How the incoherence parameter of the feasible set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuPolicy {
    /// Bound set to `1.05 x` the largest row norm of the unprojected initial factors.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepPolicy {
    /// First trial step; `None` uses `1 / (2 sigma_1(L0) max(1, c_s r))`.
    pub initial: Option<f64>,
    pub shrink: f64,
    pub c_ls: f64,
    pub max_trials: usize,
    /// Start each search at the previous accepted step divided by `shrink`.
    pub grow: bool,
    /// When false every trial step is accepted as is.
    pub backtracking: bool,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            initial: None,
            shrink: 0.5,
            c_ls: 1e-3,
            max_trials: 30,
            grow: true,
            backtracking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    /// Relative change of the reconstructed signal; 0 disables the test.
    pub tol_x: f64,
    /// Relative change of the objective; 0 disables the test.
    pub tol_f: f64,
    pub max_iters: usize,
    /// Consecutive failed line searches before giving up.
    pub max_stalls: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            tol_x: 1e-7,
            tol_f: 1e-5,
            max_iters: 5000,
            max_stalls: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub rank: usize,
    pub lambda: f64,
    pub eps0: f64,
    pub mu: MuPolicy,
    pub step: StepPolicy,
    pub stop: StopRule,
    /// Seeds the Lanczos start vector.
    pub seed: u64,
    pub svd_tol: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            lambda: 0.25,
            eps0: 1.0 / 11.0,
            mu: MuPolicy::Auto,
            step: StepPolicy::default(),
            stop: StopRule::default(),
            seed: 0,
            svd_tol: 1e-10,
        }
    }
}

impl PgdConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return bad(format!("eps0 must lie in (0, 1), got {}", self.eps0));
        }
        if !(self.step.shrink > 0.0 && self.step.shrink < 1.0) {
            return bad(format!("shrink factor must lie in (0, 1), got {}", self.step.shrink));
        }
        if let Some(eta) = self.step.initial {
            if !(eta > 0.0) {
                return bad(format!("initial step must be positive, got {eta}"));
            }
        }
        if let MuPolicy::Fixed(mu) = self.mu {
            if !(mu > 0.0) {
                return bad(format!("mu must be positive, got {mu}"));
            }
        }
        if !(self.stop.tol_x >= 0.0 && self.stop.tol_f >= 0.0) {
            return bad("stopping tolerances must be nonnegative".into());
        }
        if self.step.max_trials == 0 || self.stop.max_stalls == 0 {
            return bad("max_trials and max_stalls must be positive".into());
        }
        Ok(())
    }

    fn lanczos(&self) -> LanczosOptions {
        LanczosOptions {
            tol: self.svd_tol,
            seed: self.seed,
            ..LanczosOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TolX,
    TolF,
    MaxIters,
    Diverged,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::TolX => "tol_x",
            Termination::TolF => "tol_f",
            Termination::MaxIters => "max_iters",
            Termination::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub step: f64,
    pub rel_x_change: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Reconstructed signal, flattened row-major over the shape's dims.
    pub x_rec: Vec<Complex64>,
    pub z_final: FactorPair,
    pub params: ProjectionParams,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub z: FactorPair,
    pub params: ProjectionParams,
    /// `sigma_1(L0)`
    pub sigma1: f64,
}

/// Balanced factors `[U Sigma^1/2; V Sigma^1/2]` of the rank-`r` truncation of `G D x`.
pub fn balanced_factors(shape: &HankelShape, x: &[Complex64], r: usize) -> Result<FactorPair> {
    let y = d_scale(shape, x, Direction::Forward)?;
    let lift = g_apply(shape, &y)?;
    let svd = truncated_svd(&lift, r, &LanczosOptions::default())?;
    Ok(scale_by_root(&svd.u, &svd.v, &svd.s))
}

fn scale_by_root(u: &DMatrix<Complex64>, v: &DMatrix<Complex64>, s: &[f64]) -> FactorPair {
    let mut u = u.clone();
    let mut v = v.clone();
    for (k, &sk) in s.iter().enumerate() {
        let root = sk.sqrt();
        u.column_mut(k).scale_mut(root);
        v.column_mut(k).scale_mut(root);
    }
    FactorPair { u, v }
}

/// Spectral initialization `L0 = p^-1 T_r(G P_Omega(y))` followed by projection.
pub fn initialize(
    shape: &HankelShape,
    samples: &SampleSet,
    x_obs: &[Complex64],
    config: &PgdConfig,
) -> Result<Initialization> {
    config.validate()?;
    check_len("sample universe", shape.len(), samples.n())?;
    check_len("observed signal", shape.len(), x_obs.len())?;
    let r = config.rank;
    let max_rank = shape.rows().min(shape.cols());
    if r > max_rank {
        return Err(Error::Validation(format!(
            "rank {r} exceeds the lifted matrix limit {max_rank}"
        )));
    }
    let y = d_scale(shape, x_obs, Direction::Forward)?;
    let py = samples.project(&samples.mask(&y)?)?;
    if py.iter().all(|v| *v == Complex64::default()) {
        return Err(Error::DegenerateInput("all observed values are zero".into()));
    }
    let lift = g_apply(shape, &py)?;
    let svd = truncated_svd(&lift, r, &config.lanczos())?;
    let inv_p = 1.0 / samples.ratio();
    let s: Vec<f64> = svd.s.iter().map(|v| v * inv_p).collect();
    let sigma1 = s[0];
    if !(sigma1 > 0.0) {
        return Err(Error::DegenerateInput("initial spectral estimate is zero".into()));
    }
    let raw = scale_by_root(&svd.u, &svd.v, &s);
    let sigma = sigma1 / (1.0 - config.eps0);
    let (n, c_s) = (shape.len(), shape.c_s());
    let params = match config.mu {
        MuPolicy::Auto => ProjectionParams::with_bound(1.05 * raw.max_row_norm(), sigma, c_s, r, n),
        MuPolicy::Fixed(mu) => ProjectionParams { mu, sigma, c_s, r, n },
    };
    Ok(Initialization {
        z: project_feasible(&raw, &params),
        params,
        sigma1,
    })
}

/// Default first trial step.
pub fn default_step(sigma1: f64, c_s: f64, r: usize) -> f64 {
    1.0 / (2.0 * sigma1 * (c_s * r as f64).max(1.0))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub z: FactorPair,
    pub eval: Evaluation,
    /// Step length tried last (the accepted one when `accepted`).
    pub eta: f64,
    pub trials: usize,
    pub accepted: bool,
}

/// One projected gradient step with backtracking from `eta_start`.
pub fn step(
    ctx: &ObjectiveContext,
    z: &FactorPair,
    current: &Evaluation,
    params: &ProjectionParams,
    policy: &StepPolicy,
    eta_start: f64,
) -> Result<StepOutcome> {
    let grad = gradient_at(ctx, z, &current.y_rec)?;
    let gnorm2 = grad.norm_sqr();
    if gnorm2.sqrt() <= 1e-14 * (1.0 + current.value) {
        return Ok(StepOutcome {
            z: z.clone(),
            eval: current.clone(),
            eta: eta_start,
            trials: 0,
            accepted: true,
        });
    }
    let mut eta = eta_start;
    let mut last = None;
    for trial in 1..=policy.max_trials {
        let candidate = project_feasible(&z.axpy(-eta, &grad), params);
        let eval = evaluate(ctx, &candidate)?;
        let sufficient = eval.value <= current.value - policy.c_ls * eta * gnorm2;
        if !policy.backtracking || sufficient {
            return Ok(StepOutcome {
                z: candidate,
                eval,
                eta,
                trials: trial,
                accepted: true,
            });
        }
        last = Some((candidate, eval));
        eta *= policy.shrink;
    }
    let (z_last, eval_last) = last.expect("at least one trial");
    Ok(StepOutcome {
        z: z_last,
        eval: eval_last,
        eta: eta / policy.shrink,
        trials: policy.max_trials,
        accepted: false,
    })
}

/// Ground truth for per-iteration distance tracking.
#[derive(Debug, Clone)]
pub struct Truth {
    factors: DMatrix<Complex64>,
}

impl Truth {
    /// Balanced rank-`r` factors of the lifted true signal.
    pub fn from_signal(shape: &HankelShape, x_true: &[Complex64], r: usize) -> Result<Self> {
        Ok(Self {
            factors: balanced_factors(shape, x_true, r)?.stacked(),
        })
    }

    pub fn dist(&self, z: &FactorPair) -> Result<f64> {
        Ok(procrustes(&z.stacked(), &self.factors)?.dist)
    }
}

fn rel_change(new: &[Complex64], old: &[Complex64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b).norm_sqr()).sum();
    let base = norm_sqr(old);
    if base == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / base).sqrt()
    }
}

/// Runs the full reconstruction.
pub fn solve(
    shape: &HankelShape,
    samples: &SampleSet,
    x_obs: &[Complex64],
    config: &PgdConfig,
    truth: Option<&Truth>,
) -> Result<SolveResult> {
    let init = initialize(shape, samples, x_obs, config)?;
    let ctx = ObjectiveContext::new(shape.clone(), samples.clone(), x_obs, config.lambda)?;
    iterate(&ctx, init, config, truth)
}

/// Gradient iterations from a given starting point.
pub fn iterate(
    ctx: &ObjectiveContext,
    init: Initialization,
    config: &PgdConfig,
    truth: Option<&Truth>,
) -> Result<SolveResult> {
    let shape = ctx.shape();
    let eta0 = config
        .step
        .initial
        .unwrap_or_else(|| default_step(init.sigma1, shape.c_s(), config.rank));
    let params = init.params;
    let mut z = init.z;
    let mut eval = evaluate(ctx, &z)?;
    let mut x_prev = d_scale(shape, &eval.y_rec, Direction::Inverse)?;
    let mut eta = eta0;
    let mut history = Vec::new();
    let mut stalls = 0;
    let mut termination = Termination::MaxIters;

    for _ in 0..config.stop.max_iters {
        let start = if config.step.grow {
            eta / config.step.shrink
        } else {
            eta0
        };
        let out = step(ctx, &z, &eval, &params, &config.step, start)?;
        if !out.accepted {
            stalls += 1;
            if stalls >= config.stop.max_stalls {
                termination = Termination::Diverged;
                break;
            }
            eta = eta0 * config.step.shrink;
            continue;
        }
        stalls = 0;
        eta = out.eta;
        let x_new = d_scale(shape, &out.eval.y_rec, Direction::Inverse)?;
        let rel_x = rel_change(&x_new, &x_prev);
        let rel_f = if eval.value > 0.0 {
            (out.eval.value - eval.value).abs() / eval.value
        } else {
            0.0
        };
        z = out.z;
        eval = out.eval;
        x_prev = x_new;
        history.push(IterationRecord {
            objective: eval.value,
            step: eta,
            rel_x_change: rel_x,
            dist: truth.map(|t| t.dist(&z)).transpose()?,
        });
        if config.stop.tol_x > 0.0 && rel_x <= config.stop.tol_x {
            termination = Termination::TolX;
            break;
        }
        if config.stop.tol_f > 0.0 && rel_f <= config.stop.tol_f {
            termination = Termination::TolF;
            break;
        }
    }

    Ok(SolveResult {
        x_rec: x_prev,
        z_final: z,
        params,
        iterations: history.len(),
        history,
        termination,
    })
}

/// Relative residual `||P_Omega(x_rec - x_obs)|| / ||P_Omega(x_obs)||`.
pub fn observed_residual(samples: &SampleSet, x_rec: &[Complex64], x_obs: &[Complex64]) -> Result<f64> {
    let diff: Vec<Complex64> = x_rec.iter().zip(x_obs).map(|(a, b)| a - b).collect();
    let num = norm_sqr(&samples.project(&diff)?).sqrt();
    let den = norm_sqr(&samples.project(x_obs)?).sqrt();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("observed signal is zero"));
    }
    Ok(num / den)
}

#[derive(Debug, Clone)]
pub struct RankSweep {
    pub chosen: usize,
    /// `(r, relative residual)` for every rank tried.
    pub residuals: Vec<(usize, f64)>,
    pub result: SolveResult,
}

/// Index of the last rank in `residuals` reached while every successive
/// improvement ratio stays at or above `improvement_threshold`.
/// Residuals below `residual_floor` are treated as equal to it.
pub fn choose_rank(residuals: &[(usize, f64)], improvement_threshold: f64, residual_floor: f64) -> usize {
    let mut chosen = 0;
    for k in 1..residuals.len() {
        let ratio = residuals[k - 1].1.max(residual_floor) / residuals[k].1.max(residual_floor);
        if ratio < improvement_threshold {
            break;
        }
        chosen = k;
    }
    chosen
}

/// Rank-increasing heuristic: raise `r` while the observed-entry residual keeps
/// improving by at least `improvement_threshold` (ratio of successive residuals).
pub fn rank_sweep(
    shape: &HankelShape,
    samples: &SampleSet,
    x_obs: &[Complex64],
    base: &PgdConfig,
    r_max: usize,
    improvement_threshold: f64,
    residual_floor: f64,
) -> Result<RankSweep> {
    if r_max == 0 {
        return Err(Error::Validation("r_max must be at least 1".into()));
    }
    let mut residuals = Vec::new();
    let mut results = Vec::new();
    for r in 1..=r_max {
        let config = PgdConfig { rank: r, ..*base };
        let result = solve(shape, samples, x_obs, &config, None)?;
        residuals.push((r, observed_residual(samples, &result.x_rec, x_obs)?));
        results.push(result);
        if choose_rank(&residuals, improvement_threshold, residual_floor) + 1 < residuals.len() {
            break;
        }
    }
    let k = choose_rank(&residuals, improvement_threshold, residual_floor);
    Ok(RankSweep {
        chosen: residuals[k].0,
        residuals,
        result: results.swap_remove(k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SampleMode;
    use crate::signal::{synthesize, SpectralModel};

    fn tone(n: usize, f: f64) -> Vec<Complex64> {
        (0..n)
            .map(|t| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f * t as f64))
            .collect()
    }

    fn three_tone(n: usize) -> Vec<Complex64> {
        let model = SpectralModel::undamped(
            vec![0.1, 0.37, 0.72],
            vec![Complex64::new(2.0, 0.5), Complex64::new(-1.5, 2.0), Complex64::new(3.0, -1.0)],
        );
        synthesize(&model, &[n]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PgdConfig::default().validate().is_ok());
        assert!(PgdConfig { rank: 0, ..Default::default() }.validate().is_err());
        assert!(PgdConfig { eps0: 1.0, ..Default::default() }.validate().is_err());
        assert!(PgdConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        let mut c = PgdConfig::default();
        c.step.shrink = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_observations_are_degenerate() {
        let shape = HankelShape::new(&[15], None).unwrap();
        let samples = SampleSet::draw(15, 8, SampleMode::WithoutReplacement, 1).unwrap();
        let zeros = vec![Complex64::default(); 15];
        assert!(matches!(
            initialize(&shape, &samples, &zeros, &PgdConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn initialization_feasible_with_auto_mu() {
        let n = 41;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::draw(n, 25, SampleMode::WithoutReplacement, 3).unwrap();
        let init = initialize(&shape, &samples, &samples.mask(&x).unwrap(), &PgdConfig::with_rank(3)).unwrap();
        assert!(init.z.max_row_norm() <= init.params.bound() * (1.0 + 1e-12));
        assert!((init.params.sigma - init.sigma1 * 11.0 / 10.0).abs() < 1e-12 * init.sigma1);
    }

    #[test]
    fn fixed_point_at_truth() {
        let n = 31;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::draw(n, 18, SampleMode::WithoutReplacement, 2).unwrap();
        let ctx = ObjectiveContext::new(shape.clone(), samples, &x, 0.25).unwrap();
        let truth = balanced_factors(&shape, &x, 3).unwrap();
        let params = ProjectionParams::with_bound(2.0 * truth.max_row_norm(), 10.0, shape.c_s(), 3, n);
        let eval = evaluate(&ctx, &truth).unwrap();
        let out = step(&ctx, &truth, &eval, &params, &StepPolicy::default(), 0.01).unwrap();
        assert!(out.z.axpy(-1.0, &truth).norm() <= 1e-12 * truth.norm());
    }

    #[test]
    fn step_decreases_objective() {
        let n = 31;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::draw(n, 18, SampleMode::WithoutReplacement, 2).unwrap();
        let obs = samples.mask(&x).unwrap();
        let config = PgdConfig::with_rank(3);
        let init = initialize(&shape, &samples, &obs, &config).unwrap();
        let ctx = ObjectiveContext::new(shape.clone(), samples, &obs, 0.25).unwrap();
        let eval = evaluate(&ctx, &init.z).unwrap();
        assert!(eval.value > 0.0);
        let eta = default_step(init.sigma1, shape.c_s(), 3);
        let out = step(&ctx, &init.z, &eval, &init.params, &config.step, eta).unwrap();
        assert!(out.accepted);
        assert!(out.eval.value < eval.value);
    }

    #[test]
    fn backtracking_rescues_oversized_step() {
        let n = 31;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::draw(n, 18, SampleMode::WithoutReplacement, 2).unwrap();
        let obs = samples.mask(&x).unwrap();
        let config = PgdConfig::with_rank(3);
        let init = initialize(&shape, &samples, &obs, &config).unwrap();
        let ctx = ObjectiveContext::new(shape, samples, &obs, 0.25).unwrap();
        let eval = evaluate(&ctx, &init.z).unwrap();
        let huge = 100.0 / init.sigma1;
        let blind = StepPolicy {
            backtracking: false,
            ..StepPolicy::default()
        };
        let reckless = step(&ctx, &init.z, &eval, &init.params, &blind, huge).unwrap();
        assert!(reckless.eval.value > eval.value);
        let careful = step(&ctx, &init.z, &eval, &init.params, &StepPolicy::default(), huge).unwrap();
        assert!(careful.accepted && careful.eval.value < eval.value);
    }

    #[test]
    fn full_observation_converges_fast() {
        let n = 63;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::full(n);
        let res = solve(&shape, &samples, &x, &PgdConfig::with_rank(3), None).unwrap();
        assert!(res.iterations <= 50, "{} iterations", res.iterations);
        let err = rel_change(&res.x_rec, &x);
        assert!(err <= 1e-6, "rmse {err}");
    }

    #[test]
    fn deterministic_trace() {
        let n = 15;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = tone(n, 0.3);
        let samples = SampleSet::draw(n, 8, SampleMode::WithoutReplacement, 5).unwrap();
        let obs = samples.mask(&x).unwrap();
        let config = PgdConfig::with_rank(1);
        let a = solve(&shape, &samples, &obs, &config, None).unwrap();
        let b = solve(&shape, &samples, &obs, &config, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.x_rec, b.x_rec);
    }

    #[test]
    fn history_monotone_and_feasible() {
        let n = 63;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::draw(n, 35, SampleMode::WithoutReplacement, 8).unwrap();
        let obs = samples.mask(&x).unwrap();
        let res = solve(&shape, &samples, &obs, &PgdConfig::with_rank(3), None).unwrap();
        assert!(res.history.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert!(res.z_final.max_row_norm() <= res.params.bound() + 1e-12);
        assert_eq!(res.history.len(), res.iterations);
    }

    #[test]
    fn rank_sweep_single_rank() {
        let n = 31;
        let shape = HankelShape::new(&[n], None).unwrap();
        let x = three_tone(n);
        let samples = SampleSet::draw(n, 20, SampleMode::WithoutReplacement, 1).unwrap();
        let obs = samples.mask(&x).unwrap();
        let sweep = rank_sweep(&shape, &samples, &obs, &PgdConfig::default(), 1, 2.0, 1e-6).unwrap();
        assert_eq!(sweep.chosen, 1);
        assert_eq!(sweep.residuals.len(), 1);
    }

    #[test]
    fn residual_of_zero_observations_is_undefined() {
        let samples = SampleSet::full(4);
        let zeros = vec![Complex64::default(); 4];
        assert!(observed_residual(&samples, &zeros, &zeros).is_err());
    }
}
