//! Seeded Monte Carlo experiments: phase transition, noise robustness,
//! model-order sensitivity and the rank-increasing heuristic.
//!
//! Every trial draws its randomness from `derive_seed(master, [trial])`
//! split into independent streams keyed by the cell coordinates, so rows
//! do not depend on which worker ran them or in which order.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::HankelShape;
use crate::rng::{derive_seed, seeded};
use crate::sampling::{SampleMode, SampleSet};
use crate::signal::{add_noise, random_model, rmse, snr_db, synthesize, ModelOptions, SpectralModel, SUCCESS_RMSE};
use crate::solver::{choose_rank, observed_residual, solve, PgdConfig, StopRule, Termination};

/// Iteration cap used by phase-transition runs unless the spec overrides it.
pub const MODEL_ORDER_MAX_ITERS: usize = 20_000;
pub const PHASE_TRANSITION_MAX_ITERS: usize = 2500;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "HANKEL_PGD_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PhaseTransition,
    Noise,
    ModelOrder,
    RankHeuristic,
    SingleRecover,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PhaseTransition => "phase-transition",
            ExperimentKind::Noise => "noise",
            ExperimentKind::ModelOrder => "model-order",
            ExperimentKind::RankHeuristic => "rank-heuristic",
            ExperimentKind::SingleRecover => "recover",
        }
    }
}

/// A complete experiment description, loadable from a JSON or TOML profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dims: Vec<usize>,
    /// Sampling ratios; `m = floor(p n)`.
    pub p_grid: Vec<f64>,
    /// Absolute measurement counts; takes precedence over `p_grid` when nonempty.
    pub m_grid: Vec<usize>,
    /// Model orders to test (phase transition: upper sweep list; model order: tested ranks).
    pub r_grid: Vec<usize>,
    pub theta_grid: Vec<f64>,
    /// Order of the generated signals where the experiment fixes it.
    pub r_true: usize,
    /// Noise level for model-order and rank-heuristic runs.
    pub theta: f64,
    pub trials: usize,
    /// Minimum frequency spacing in units of `1 / N_i` on each axis.
    pub separation: Option<f64>,
    /// Per-axis `[lo, hi]` range for `1 / tau`.
    pub damping: Option<Vec<(f64, f64)>>,
    pub sample_mode: SampleMode,
    pub solver: PgdConfig,
    /// Overrides the solver iteration cap (phase transition defaults to 2500).
    pub max_iters: Option<usize>,
    /// Upper end of open-ended rank sweeps.
    pub r_max: Option<usize>,
    pub improvement_threshold: f64,
    pub residual_floor: f64,
    pub master_seed: u64,
    pub success_threshold: f64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SingleRecover,
            dims: vec![127],
            p_grid: vec![0.5],
            m_grid: Vec::new(),
            r_grid: Vec::new(),
            theta_grid: Vec::new(),
            r_true: 4,
            theta: 0.0,
            trials: 20,
            separation: Some(1.5),
            damping: None,
            sample_mode: SampleMode::WithoutReplacement,
            solver: PgdConfig::default(),
            max_iters: None,
            r_max: None,
            improvement_threshold: 2.0,
            residual_floor: 1e-4,
            master_seed: 0,
            success_threshold: SUCCESS_RMSE,
            output: None,
        }
    }
}

/// Solver defaults with only the relative x-change stopping test.
fn x_change_only(tol_x: f64) -> PgdConfig {
    PgdConfig {
        stop: StopRule {
            tol_x,
            tol_f: 0.0,
            ..StopRule::default()
        },
        ..PgdConfig::default()
    }
}

impl ExperimentSpec {
    /// Profile defaults for each experiment family.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            ..Self::default()
        };
        match kind {
            ExperimentKind::PhaseTransition => Self {
                dims: vec![63],
                p_grid: (0..18).map(|k| 0.1 + 0.05 * k as f64).collect(),
                separation: None,
                ..base
            },
            ExperimentKind::Noise => Self {
                m_grid: vec![63, 95],
                theta_grid: (0..7).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect(),
                solver: x_change_only(1e-5),
                ..base
            },
            ExperimentKind::ModelOrder => Self {
                dims: vec![63],
                p_grid: vec![0.8],
                r_true: 3,
                r_grid: vec![1, 2, 3, 4, 6],
                // over-estimated orders converge sublinearly
                max_iters: Some(MODEL_ORDER_MAX_ITERS),
                solver: x_change_only(1e-5),
                ..base
            },
            ExperimentKind::RankHeuristic => Self {
                dims: vec![63],
                r_true: 3,
                p_grid: vec![0.6],
                r_max: Some(6),
                improvement_threshold: 1.25,
                solver: x_change_only(1e-5),
                ..base
            },
            ExperimentKind::SingleRecover => Self { trials: 1, ..base },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a profile; `.toml` files are parsed as TOML, anything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > 3 || self.dims.contains(&0) {
            return Err(Error::Validation(format!("dims must have 1 to 3 positive entries, got {:?}", self.dims)));
        }
        if self.trials == 0 {
            return Err(Error::Validation("trials must be at least 1".into()));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::Validation("success threshold must be positive".into()));
        }
        if self.p_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Validation(format!("sampling ratios must lie in (0, 1], got {:?}", self.p_grid)));
        }
        if self.theta_grid.iter().chain([&self.theta]).any(|&t| !(t >= 0.0)) {
            return Err(Error::Validation("noise levels must be nonnegative".into()));
        }
        if self.separation.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Validation("separation must be positive".into()));
        }
        let needs_m = !matches!(self.kind, ExperimentKind::PhaseTransition);
        if self.m_grid.is_empty() && self.p_grid.is_empty() {
            return Err(Error::Validation("empty sampling grid".into()));
        }
        if needs_m && self.measurement_counts().iter().any(|&m| m == 0 || m > self.len()) {
            return Err(Error::Validation(format!("measurement counts must lie in [1, {}]", self.len())));
        }
        match self.kind {
            ExperimentKind::PhaseTransition => {
                if self.p_grid.is_empty() {
                    return Err(Error::Validation("phase transition needs a nonempty p grid".into()));
                }
                if self.dims.len() != 1 {
                    return Err(Error::Validation("phase transition runs on 1D signals".into()));
                }
            }
            ExperimentKind::Noise if self.theta_grid.is_empty() => {
                return Err(Error::Validation("noise experiment needs a nonempty theta grid".into()));
            }
            ExperimentKind::ModelOrder if self.r_grid.is_empty() => {
                return Err(Error::Validation("model-order experiment needs a nonempty r grid".into()));
            }
            _ => {}
        }
        if self.r_true == 0 || self.r_grid.contains(&0) {
            return Err(Error::Validation("model orders must be positive".into()));
        }
        Ok(())
    }

    fn measurement_counts(&self) -> Vec<usize> {
        if self.m_grid.is_empty() {
            self.p_grid.iter().map(|&p| ((p * self.len() as f64).floor() as usize).max(1)).collect()
        } else {
            self.m_grid.clone()
        }
    }

    fn model_options(&self) -> ModelOptions {
        ModelOptions {
            separation: self.separation.map(|s| self.dims.iter().map(|&n| s / n as f64).collect()),
            damping: self.damping.clone(),
        }
    }

    fn solver_config(&self, rank: usize, seed: u64) -> PgdConfig {
        let mut config = PgdConfig {
            rank,
            seed,
            ..self.solver
        };
        if let Some(cap) = self.max_iters {
            config.stop.max_iters = cap;
        } else if self.kind == ExperimentKind::PhaseTransition {
            config.stop.max_iters = PHASE_TRANSITION_MAX_ITERS;
        }
        config
    }
}

/// One generated problem: ground truth, sample set and (noisy) observations.
#[derive(Debug, Clone)]
pub struct Instance {
    pub trial_seed: u64,
    pub model: SpectralModel,
    pub x_true: Vec<Complex64>,
    pub samples: SampleSet,
    pub x_obs: Vec<Complex64>,
}

const STREAM_MODEL: u64 = 0;
const STREAM_SAMPLES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SOLVER: u64 = 3;

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[trial as u64])
}

/// Rebuilds the problem of one trial. The signal depends only on `(trial, r)`,
/// the sample set on `(trial, m)`, and the noise on `(trial, m, theta)`, so
/// cells that share coordinates see identical draws.
pub fn trial_instance(spec: &ExperimentSpec, trial: usize, r: usize, m: usize, theta: f64) -> Result<Instance> {
    let seed = trial_seed(spec.master_seed, trial);
    let mut rng = seeded(derive_seed(seed, &[STREAM_MODEL, r as u64]));
    let model = random_model(spec.dims.len(), r, &spec.model_options(), &mut rng)?;
    let x_true = synthesize(&model, &spec.dims)?;
    let samples = SampleSet::draw(
        spec.len(),
        m,
        spec.sample_mode,
        derive_seed(seed, &[STREAM_SAMPLES, m as u64]),
    )?;
    let mut noise_rng = seeded(derive_seed(seed, &[STREAM_NOISE, m as u64, theta.to_bits()]));
    let x_obs = add_noise(&samples.project(&x_true)?, &samples, theta, &mut noise_rng)?;
    Ok(Instance {
        trial_seed: seed,
        model,
        x_true,
        samples,
        x_obs,
    })
}

/// Per-trial outcome; every row carries the seed and coordinates needed to replay it.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub r_true: usize,
    pub r: usize,
    pub m: usize,
    pub p: f64,
    pub theta: f64,
    pub rmse: f64,
    pub success: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCell {
    pub p: f64,
    pub m: usize,
    pub r: usize,
    pub successes: usize,
    pub trials: usize,
    pub success_rate: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub p: f64,
    pub m: usize,
    /// Largest `r` whose success rate is at least 0.8 (0 if none).
    pub r80: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseRow {
    pub theta: f64,
    pub snr_db_in: f64,
    pub rmse_db_out: f64,
    pub mean_rmse: f64,
    pub m: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelOrderRow {
    pub r_test: usize,
    pub iterations_median: f64,
    pub snr_out_median: f64,
    pub successes: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankRow {
    pub r: usize,
    /// Median relative residual on the observed entries.
    pub relative_residual: f64,
    /// Median of `residual(r - 1) - residual(r)` (empty for the first rank).
    pub delta_residual: Option<f64>,
    /// Median of `residual(r - 1) / residual(r)`.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankChoice {
    pub trial: usize,
    pub seed: u64,
    pub chosen: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "table", rename_all = "kebab-case")]
pub enum Summary {
    PhaseTransition { cells: Vec<PhaseCell>, curve: Vec<CurvePoint> },
    Noise { rows: Vec<NoiseRow> },
    ModelOrder { rows: Vec<ModelOrderRow> },
    RankHeuristic { curve: Vec<RankRow>, chosen: Vec<RankChoice> },
    SingleRecover,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub spec: ExperimentSpec,
    pub notes: Vec<String>,
    pub summary: Summary,
    pub trials: Vec<TrialRow>,
}

/// Runs `spec` on a pool of `threads` workers (`None`: rayon's default).
pub fn run(spec: &ExperimentSpec, threads: Option<usize>) -> Result<Report> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Runtime(e.to_string()))?;
    let mut report = pool.install(|| match spec.kind {
        ExperimentKind::PhaseTransition => run_phase_transition(spec),
        ExperimentKind::Noise => run_noise(spec),
        ExperimentKind::ModelOrder => run_model_order(spec),
        ExperimentKind::RankHeuristic => run_rank_heuristic(spec),
        ExperimentKind::SingleRecover => run_single(spec),
    })?;
    if spec.dims.len() == 3 {
        report.notes.push(format!(
            "scaling note: 3D run at reduced size {:?}; larger grids exceed the desk budget",
            spec.dims
        ));
    }
    if spec.success_threshold != SUCCESS_RMSE {
        report
            .notes
            .push(format!("success threshold changed to {:e}", spec.success_threshold));
    }
    Ok(report)
}

struct Job {
    trial: usize,
    r: usize,
    m: usize,
    theta: f64,
}

/// Solver settings used for rank `r` on the given instance.
pub fn trial_config(spec: &ExperimentSpec, inst: &Instance, r: usize) -> PgdConfig {
    spec.solver_config(r, derive_seed(inst.trial_seed, &[STREAM_SOLVER, r as u64]))
}

fn run_job(spec: &ExperimentSpec, shape: &HankelShape, job: &Job, r_true: usize) -> Result<TrialRow> {
    let inst = trial_instance(spec, job.trial, r_true, job.m, job.theta)?;
    let config = trial_config(spec, &inst, job.r);
    let result = solve(shape, &inst.samples, &inst.x_obs, &config, None)?;
    let err = rmse(&result.x_rec, &inst.x_true)?;
    Ok(TrialRow {
        trial: job.trial,
        seed: inst.trial_seed,
        r_true,
        r: job.r,
        m: job.m,
        p: job.m as f64 / spec.len() as f64,
        theta: job.theta,
        rmse: err,
        success: err <= spec.success_threshold * (1.0 + 1e-12),
        iterations: result.iterations,
        termination: result.termination,
        residual: observed_residual(&inst.samples, &result.x_rec, &inst.x_obs)?,
    })
}

fn shape_of(spec: &ExperimentSpec) -> Result<HankelShape> {
    HankelShape::new(&spec.dims, None)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn run_phase_transition(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let shape = shape_of(spec)?;
    let n = spec.len();
    let max_rank = shape.rows().min(shape.cols());
    let ranks: Vec<usize> = if spec.r_grid.is_empty() {
        (1..=spec.r_max.unwrap_or(max_rank).min(max_rank)).collect()
    } else {
        spec.r_grid.clone()
    };
    let ms: Vec<usize> = spec.p_grid.iter().map(|&p| ((p * n as f64).floor() as usize).max(1)).collect();
    let mut notes = vec![format!("iteration cap {}", spec.solver_config(1, 0).stop.max_iters)];
    let mut active: Vec<usize> = (0..ms.len()).collect();
    let mut cells: Vec<PhaseCell> = Vec::new();
    let mut rows = Vec::new();
    for &r in &ranks {
        if active.is_empty() {
            break;
        }
        if let Some(sep) = spec.separation {
            if r as f64 * sep / n as f64 >= 1.0 {
                notes.push(format!("sweep stopped at r = {r}: separation infeasible"));
                break;
            }
        }
        let jobs: Vec<Job> = active
            .iter()
            .flat_map(|&i| {
                let m = ms[i];
                (0..spec.trials).map(move |trial| Job {
                    trial,
                    r,
                    m,
                    theta: 0.0,
                })
            })
            .collect();
        let out: Vec<TrialRow> = jobs
            .par_iter()
            .map(|job| run_job(spec, &shape, job, job.r))
            .collect::<Result<_>>()?;
        let mut still = Vec::new();
        for (slot, &i) in active.iter().enumerate() {
            let chunk = &out[slot * spec.trials..(slot + 1) * spec.trials];
            let successes = chunk.iter().filter(|row| row.success).count();
            cells.push(PhaseCell {
                p: spec.p_grid[i],
                m: ms[i],
                r,
                successes,
                trials: spec.trials,
                success_rate: successes as f64 / spec.trials as f64,
                max_iters: spec.solver_config(r, 0).stop.max_iters,
            });
            if successes > 0 {
                still.push(i);
            }
        }
        rows.extend(out);
        active = still;
    }
    cells.sort_by(|a, b| a.p.total_cmp(&b.p).then(a.r.cmp(&b.r)));
    rows.sort_by(|a, b| a.m.cmp(&b.m).then(a.r.cmp(&b.r)).then(a.trial.cmp(&b.trial)));

    let mut curve = Vec::new();
    for (i, &m) in ms.iter().enumerate() {
        let p = spec.p_grid[i];
        let mine: Vec<&PhaseCell> = cells.iter().filter(|c| c.m == m).collect();
        for w in mine.windows(2) {
            if w[1].success_rate > w[0].success_rate {
                notes.push(format!(
                    "monotonicity: p = {p}, success rate rises from r = {} to r = {}",
                    w[0].r, w[1].r
                ));
            }
        }
        let r80 = mine.iter().filter(|c| c.success_rate >= 0.8).map(|c| c.r).max().unwrap_or(0);
        curve.push(CurvePoint { p, m, r80 });
    }
    Ok(Report {
        spec: spec.clone(),
        notes,
        summary: Summary::PhaseTransition { cells, curve },
        trials: rows,
    })
}

pub fn run_noise(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let shape = shape_of(spec)?;
    let ms = spec.measurement_counts();
    let jobs: Vec<Job> = ms
        .iter()
        .flat_map(|&m| {
            spec.theta_grid.iter().flat_map(move |&theta| {
                (0..spec.trials).map(move |trial| Job {
                    trial,
                    r: spec.r_true,
                    m,
                    theta,
                })
            })
        })
        .collect();
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|job| run_job(spec, &shape, job, spec.r_true))
        .collect::<Result<_>>()?;
    let summary = rows
        .chunks(spec.trials)
        .map(|chunk| {
            let mean = chunk.iter().map(|row| row.rmse).sum::<f64>() / chunk.len() as f64;
            NoiseRow {
                theta: chunk[0].theta,
                snr_db_in: snr_db(chunk[0].theta),
                rmse_db_out: snr_db(mean),
                mean_rmse: mean,
                m: chunk[0].m,
                trials: chunk.len(),
            }
        })
        .collect();
    Ok(Report {
        spec: spec.clone(),
        notes: Vec::new(),
        summary: Summary::Noise { rows: summary },
        trials: rows,
    })
}

pub fn run_model_order(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let shape = shape_of(spec)?;
    let m = spec.measurement_counts()[0];
    let jobs: Vec<Job> = spec
        .r_grid
        .iter()
        .flat_map(|&r| {
            (0..spec.trials).map(move |trial| Job {
                trial,
                r,
                m,
                theta: spec.theta,
            })
        })
        .collect();
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|job| run_job(spec, &shape, job, spec.r_true))
        .collect::<Result<_>>()?;
    let summary = rows
        .chunks(spec.trials)
        .map(|chunk| {
            let mut iters: Vec<f64> = chunk.iter().map(|row| row.iterations as f64).collect();
            let mut snr: Vec<f64> = chunk.iter().map(|row| snr_db(row.rmse)).collect();
            ModelOrderRow {
                r_test: chunk[0].r,
                iterations_median: median(&mut iters),
                snr_out_median: median(&mut snr),
                successes: chunk.iter().filter(|row| row.success).count(),
                trials: chunk.len(),
            }
        })
        .collect();
    Ok(Report {
        spec: spec.clone(),
        notes: Vec::new(),
        summary: Summary::ModelOrder { rows: summary },
        trials: rows,
    })
}

pub fn run_rank_heuristic(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let shape = shape_of(spec)?;
    let m = spec.measurement_counts()[0];
    let ranks: Vec<usize> = if spec.r_grid.is_empty() {
        (1..=spec.r_max.unwrap_or(2 * spec.r_true)).collect()
    } else {
        spec.r_grid.clone()
    };
    // The full curve is computed for every trial; the stopping rule is then
    // applied to it exactly as the sequential sweep would.
    let jobs: Vec<Job> = (0..spec.trials)
        .flat_map(|trial| {
            ranks.iter().map(move |&r| Job {
                trial,
                r,
                m,
                theta: spec.theta,
            })
        })
        .collect();
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|job| run_job(spec, &shape, job, spec.r_true))
        .collect::<Result<_>>()?;
    let per_trial: Vec<&[TrialRow]> = rows.chunks(ranks.len()).collect();
    let chosen = per_trial
        .iter()
        .map(|chunk| {
            let curve: Vec<(usize, f64)> = chunk.iter().map(|row| (row.r, row.residual)).collect();
            RankChoice {
                trial: chunk[0].trial,
                seed: chunk[0].seed,
                chosen: curve[choose_rank(&curve, spec.improvement_threshold, spec.residual_floor)].0,
            }
        })
        .collect();
    let curve = (0..ranks.len())
        .map(|k| {
            let mut res: Vec<f64> = per_trial.iter().map(|c| c[k].residual).collect();
            let (delta, improvement) = if k == 0 {
                (None, None)
            } else {
                let mut d: Vec<f64> = per_trial.iter().map(|c| c[k - 1].residual - c[k].residual).collect();
                let mut q: Vec<f64> = per_trial.iter().map(|c| c[k - 1].residual / c[k].residual).collect();
                (Some(median(&mut d)), Some(median(&mut q)))
            };
            RankRow {
                r: ranks[k],
                relative_residual: median(&mut res),
                delta_residual: delta,
                improvement,
            }
        })
        .collect();
    Ok(Report {
        spec: spec.clone(),
        notes: Vec::new(),
        summary: Summary::RankHeuristic { curve, chosen },
        trials: rows,
    })
}

pub fn run_single(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let shape = shape_of(spec)?;
    let m = spec.measurement_counts()[0];
    let jobs: Vec<Job> = (0..spec.trials)
        .map(|trial| Job {
            trial,
            r: spec.r_true,
            m,
            theta: spec.theta,
        })
        .collect();
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|job| run_job(spec, &shape, job, spec.r_true))
        .collect::<Result<_>>()?;
    Ok(Report {
        spec: spec.clone(),
        notes: Vec::new(),
        summary: Summary::SingleRecover,
        trials: rows,
    })
}

/// Shortest form that still carries 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table: header plus formatted records.
pub struct Table {
    pub header: Vec<&'static str>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for rec in &self.records {
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Runtime(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Runtime(e.to_string()))
    }
}

pub fn trials_table(rows: &[TrialRow]) -> Table {
    Table {
        header: vec![
            "trial", "seed", "r_true", "r", "m", "p", "theta", "rmse", "success", "iterations", "termination", "residual",
        ],
        records: rows
            .iter()
            .map(|row| {
                vec![
                    row.trial.to_string(),
                    row.seed.to_string(),
                    row.r_true.to_string(),
                    row.r.to_string(),
                    row.m.to_string(),
                    fmt_f64(row.p),
                    fmt_f64(row.theta),
                    fmt_f64(row.rmse),
                    row.success.to_string(),
                    row.iterations.to_string(),
                    row.termination.name().to_string(),
                    fmt_f64(row.residual),
                ]
            })
            .collect(),
    }
}

/// Summary tables keyed by a short name (used as a file suffix).
pub fn summary_tables(summary: &Summary) -> Vec<(&'static str, Table)> {
    match summary {
        Summary::PhaseTransition { cells, curve } => vec![
            (
                "summary",
                Table {
                    header: vec!["p", "m", "r", "successes", "trials", "success_rate", "max_iters"],
                    records: cells
                        .iter()
                        .map(|c| {
                            vec![
                                fmt_f64(c.p),
                                c.m.to_string(),
                                c.r.to_string(),
                                c.successes.to_string(),
                                c.trials.to_string(),
                                fmt_f64(c.success_rate),
                                c.max_iters.to_string(),
                            ]
                        })
                        .collect(),
                },
            ),
            (
                "curve",
                Table {
                    header: vec!["p", "m", "r80"],
                    records: curve
                        .iter()
                        .map(|c| vec![fmt_f64(c.p), c.m.to_string(), c.r80.to_string()])
                        .collect(),
                },
            ),
        ],
        Summary::Noise { rows } => vec![(
            "summary",
            Table {
                header: vec!["theta", "snr_db_in", "rmse_db_out", "mean_rmse", "m", "trials"],
                records: rows
                    .iter()
                    .map(|r| {
                        vec![
                            fmt_f64(r.theta),
                            fmt_f64(r.snr_db_in),
                            fmt_f64(r.rmse_db_out),
                            fmt_f64(r.mean_rmse),
                            r.m.to_string(),
                            r.trials.to_string(),
                        ]
                    })
                    .collect(),
            },
        )],
        Summary::ModelOrder { rows } => vec![(
            "summary",
            Table {
                header: vec!["r_test", "iterations_median", "snr_out_median", "successes", "trials"],
                records: rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.r_test.to_string(),
                            fmt_f64(r.iterations_median),
                            fmt_f64(r.snr_out_median),
                            r.successes.to_string(),
                            r.trials.to_string(),
                        ]
                    })
                    .collect(),
            },
        )],
        Summary::RankHeuristic { curve, chosen } => vec![
            (
                "summary",
                Table {
                    header: vec!["r", "relative_residual", "delta_residual", "improvement"],
                    records: curve
                        .iter()
                        .map(|c| {
                            vec![
                                c.r.to_string(),
                                fmt_f64(c.relative_residual),
                                opt(c.delta_residual),
                                opt(c.improvement),
                            ]
                        })
                        .collect(),
                },
            ),
            (
                "chosen",
                Table {
                    header: vec!["trial", "seed", "chosen"],
                    records: chosen
                        .iter()
                        .map(|c| vec![c.trial.to_string(), c.seed.to_string(), c.chosen.to_string()])
                        .collect(),
                },
            ),
        ],
        Summary::SingleRecover => Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// `runs/pt.csv` + `summary` -> `runs/pt.summary.csv`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

/// Writes the report. CSV: trial rows to `path`, each summary table to a
/// sibling file. JSON: one document. Returns the files written.
pub fn write_report(report: &Report, path: &Path, format: Format) -> Result<Vec<PathBuf>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    match format {
        Format::Json => {
            let mut file = std::fs::File::create(path)?;
            serde_json::to_writer_pretty(&mut file, report)?;
            file.write_all(b"\n")?;
            Ok(vec![path.to_path_buf()])
        }
        Format::Csv => {
            let mut written = vec![path.to_path_buf()];
            std::fs::write(path, trials_table(&report.trials).to_csv()?)?;
            for (name, table) in summary_tables(&report.summary) {
                let p = sibling_path(path, name);
                std::fs::write(&p, table.to_csv()?)?;
                written.push(p);
            }
            if !report.notes.is_empty() {
                let p = path.with_file_name(format!(
                    "{}.notes.txt",
                    path.file_stem().and_then(|s| s.to_str()).unwrap_or("out")
                ));
                std::fs::write(&p, report.notes.join("\n") + "\n")?;
                written.push(p);
            }
            Ok(written)
        }
    }
}

/// Human-oriented rendering for stdout: notes as comments, then the summary
/// tables (or the trial rows when there is no summary).
pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => {
            let mut out = String::new();
            for note in &report.notes {
                let _ = writeln!(out, "# {note}");
            }
            let tables = summary_tables(&report.summary);
            if tables.is_empty() {
                out.push_str(&trials_table(&report.trials).to_csv()?);
            }
            for (k, (name, table)) in tables.iter().enumerate() {
                if k > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {name}");
                out.push_str(&table.to_csv()?);
            }
            Ok(out)
        }
    }
}

/// Resolves the worker count from the flag, then the environment.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
