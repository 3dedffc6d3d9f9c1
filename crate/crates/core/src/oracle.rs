//! Dense reference implementations.
//!
//! Everything here materializes the lifted matrix and is only meant for
//! cross-checking the fast paths at small sizes (tests and `selftest`).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dense;
use crate::error::{check_len, Error, Result};
use crate::factor::{truncated_svd, FactorPair, LanczosOptions};
use crate::hankel::{d_scale, g_apply, g_vector_times_factor, gstar_factored, Direction, HankelShape, Side, DENSE_LIMIT};
use crate::objective::{eval_F, grad_F, ObjectiveContext};
use crate::rng::{complex_normal, seeded, SimRng};
use crate::sampling::{SampleMode, SampleSet};

/// A materialized `G z`.
#[derive(Debug, Clone)]
pub struct DenseLift {
    pub matrix: DMatrix<Complex64>,
    pub shape: HankelShape,
}

fn guard(shape: &HankelShape) -> Result<()> {
    let size = shape.rows() * shape.cols();
    if size > DENSE_LIMIT {
        Err(Error::SizeGuard {
            size,
            limit: DENSE_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// Entry `(i, j)` is `z[i + j] / sqrt(w[i + j])` by direct indexing.
pub fn dense_g(shape: &HankelShape, z: &[Complex64]) -> Result<DenseLift> {
    guard(shape)?;
    check_len("signal", shape.len(), z.len())?;
    let sw = shape.sqrt_weights();
    let matrix = DMatrix::from_fn(shape.rows(), shape.cols(), |i, j| {
        let a = shape.lifted_index(i, j);
        z[a] / sw[a]
    });
    Ok(DenseLift {
        matrix,
        shape: shape.clone(),
    })
}

/// Unweighted Hankel lifting `H z`.
pub fn dense_h(shape: &HankelShape, z: &[Complex64]) -> Result<DMatrix<Complex64>> {
    guard(shape)?;
    check_len("signal", shape.len(), z.len())?;
    Ok(DMatrix::from_fn(shape.rows(), shape.cols(), |i, j| z[shape.lifted_index(i, j)]))
}

/// `G^* A` by summing each skew-diagonal.
pub fn dense_gstar(shape: &HankelShape, a: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    guard(shape)?;
    check_len("lifted rows", shape.rows(), a.nrows())?;
    check_len("lifted cols", shape.cols(), a.ncols())?;
    let mut out = vec![Complex64::default(); shape.len()];
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[shape.lifted_index(i, j)] += a[(i, j)];
        }
    }
    for (v, s) in out.iter_mut().zip(shape.sqrt_weights()) {
        *v /= s;
    }
    Ok(out)
}

/// Singular values (descending) and vectors from a dense decomposition.
#[derive(Debug, Clone)]
pub struct DenseSvd {
    pub u: DMatrix<Complex64>,
    pub s: Vec<f64>,
    pub v: DMatrix<Complex64>,
}

pub fn dense_svd(a: &DMatrix<Complex64>) -> Result<DenseSvd> {
    let size = a.nrows() * a.ncols();
    if size > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: DENSE_LIMIT,
        });
    }
    let svd = dense::svd(a)?;
    Ok(DenseSvd {
        u: svd.u,
        s: svd.s,
        v: svd.v,
    })
}

/// Best rank-`r` approximation from the dense SVD.
pub fn dense_truncate(a: &DMatrix<Complex64>, r: usize) -> Result<DMatrix<Complex64>> {
    let svd = dense_svd(a)?;
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for k in 0..r.min(svd.s.len()) {
        out += svd.u.column(k) * svd.v.column(k).adjoint() * Complex64::new(svd.s[k], 0.0);
    }
    Ok(out)
}

fn data_weights(ctx: &ObjectiveContext) -> Vec<f64> {
    ctx.samples().multiplicity().iter().map(|&c| c as f64).collect()
}

/// `F` with the lifted product formed explicitly.
#[allow(non_snake_case)]
pub fn naive_F(ctx: &ObjectiveContext, z: &FactorPair) -> Result<f64> {
    let shape = ctx.shape();
    let a = &z.u * z.v.adjoint();
    let ga = dense_gstar(shape, &a)?;
    let off_hankel = &a - dense_g(shape, &ga)?.matrix;
    let c = data_weights(ctx);
    let misfit: f64 = ga
        .iter()
        .zip(ctx.y_obs())
        .zip(&c)
        .map(|((s, y), c)| c * (s - y).norm_sqr())
        .sum::<f64>()
        / ctx.p();
    let gap = z.u.adjoint() * &z.u - z.v.adjoint() * &z.v;
    let g = 0.5 * gap.iter().map(|v| v.norm_sqr()).sum::<f64>();
    Ok(off_hankel.iter().map(|v| v.norm_sqr()).sum::<f64>() + misfit + ctx.lambda() * g)
}

/// The four gradient blocks assembled densely.
pub fn dense_grad(ctx: &ObjectiveContext, z: &FactorPair) -> Result<FactorPair> {
    let shape = ctx.shape();
    let a = &z.u * z.v.adjoint();
    let ga = dense_gstar(shape, &a)?;
    let off_hankel = &a - dense_g(shape, &ga)?.matrix;
    let c = data_weights(ctx);
    let inv_p = 1.0 / ctx.p();
    let resid: Vec<Complex64> = ga
        .iter()
        .zip(ctx.y_obs())
        .zip(&c)
        .map(|((s, y), c)| (s - y) * (c * inv_p))
        .collect();
    let data = dense_g(shape, &resid)?.matrix;
    let lam = Complex64::new(ctx.lambda(), 0.0);
    let gap = z.u.adjoint() * &z.u - z.v.adjoint() * &z.v;
    let u = &off_hankel * &z.v + &data * &z.v + &z.u * &gap * lam;
    let v = off_hankel.adjoint() * &z.u + data.adjoint() * &z.u - &z.v * &gap * lam;
    Ok(FactorPair { u, v })
}

/// Central differences of `eval_F` over every real and imaginary coordinate,
/// scaled to the Wirtinger convention: `(dF/dRe + i dF/dIm) / 2`.
pub fn naive_grad(ctx: &ObjectiveContext, z: &FactorPair, h: f64) -> Result<FactorPair> {
    let mut out = FactorPair::zeros(z.u.nrows(), z.v.nrows(), z.rank());
    let eval = |zz: &FactorPair| eval_F(ctx, zz);
    for block in 0..2 {
        let (rows, cols) = if block == 0 { z.u.shape() } else { z.v.shape() };
        for i in 0..rows {
            for j in 0..cols {
                let mut parts = [0.0; 2];
                for (slot, dir) in parts.iter_mut().zip([Complex64::new(h, 0.0), Complex64::new(0.0, h)]) {
                    let mut plus = z.clone();
                    let mut minus = z.clone();
                    if block == 0 {
                        plus.u[(i, j)] += dir;
                        minus.u[(i, j)] -= dir;
                    } else {
                        plus.v[(i, j)] += dir;
                        minus.v[(i, j)] -= dir;
                    }
                    *slot = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
                }
                let g = Complex64::new(parts[0], parts[1]) * 0.5;
                if block == 0 {
                    out.u[(i, j)] = g;
                } else {
                    out.v[(i, j)] = g;
                }
            }
        }
    }
    Ok(out)
}

/// Left side of the key sampling inequality: `p^-1 sum_k sum_{i+j=a_k} z_i w_j`.
pub fn sampling_bound_lhs(samples: &SampleSet, z: &[f64], w: &[f64]) -> f64 {
    let total: f64 = samples
        .indices()
        .iter()
        .map(|&a| {
            let lo = a.saturating_sub(w.len() - 1);
            let hi = a.min(z.len() - 1);
            (lo..=hi).map(|i| z[i] * w[a - i]).sum::<f64>()
        })
        .sum();
    total / samples.ratio()
}

/// Right side: `||z||_1 ||w||_1 + sqrt(24 n log n / p) ||z||_2 ||w||_2`.
pub fn sampling_bound_rhs(n: usize, p: f64, z: &[f64], w: &[f64]) -> f64 {
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nf = n as f64;
    l1(z) * l1(w) + (24.0 * nf * nf.ln() / p).sqrt() * l2(z) * l2(w)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplingBoundCheck {
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
}

/// Monte Carlo frequency of the key sampling inequality failing for random
/// real `z, w` and with-replacement index draws.
pub fn sampling_bound_check(n: usize, m: usize, trials: usize, seed: u64) -> Result<SamplingBoundCheck> {
    let min_m = (8.0 / 3.0 * (n as f64).ln()).ceil() as usize;
    if m < min_m {
        return Err(Error::Validation(format!("m = {m} below the hypothesis bound {min_m}")));
    }
    let shape = HankelShape::new(&[n], None)?;
    let (n1, n2) = (shape.rows(), shape.cols());
    let mut rng = seeded(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let samples = SampleSet::draw(n, m, SampleMode::WithReplacement, rng.random())?;
        let z: Vec<f64> = (0..n1).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..n2).map(|_| rng.sample(StandardNormal)).collect();
        if sampling_bound_lhs(&samples, &z, &w) > sampling_bound_rhs(n, samples.ratio(), &z, &w) {
            violations += 1;
        }
    }
    Ok(SamplingBoundCheck {
        trials,
        violations,
        violation_rate: violations as f64 / trials.max(1) as f64,
    })
}

/// One fast-vs-reference comparison.
#[derive(Debug, Clone, Serialize)]
pub struct SelfTestCase {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn rel_m(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn rand_vec(rng: &mut SimRng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}

fn rand_mat(rng: &mut SimRng, rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

fn random_shape(rng: &mut SimRng, two_dim: bool, max_1d: usize) -> Result<HankelShape> {
    if two_dim {
        let dims = [rng.random_range(2..=16), rng.random_range(2..=16)];
        let pencil = [rng.random_range(1..=dims[0]), rng.random_range(1..=dims[1])];
        HankelShape::new(&dims, Some(&pencil))
    } else {
        let n = rng.random_range(2..=max_1d);
        HankelShape::new(&[n], Some(&[rng.random_range(1..=n)]))
    }
}

/// Random objective context on a small 1D instance.
fn random_context(rng: &mut SimRng, n: usize) -> Result<ObjectiveContext> {
    let shape = HankelShape::new(&[n], Some(&[rng.random_range(1..=n)]))?;
    let m = rng.random_range(1..=n);
    let mode = if rng.random_bool(0.5) {
        SampleMode::WithReplacement
    } else {
        SampleMode::WithoutReplacement
    };
    let samples = SampleSet::draw(n, m, mode, rng.random())?;
    let x = rand_vec(rng, n);
    let lambda = rng.random_range(0.0..1.0);
    ObjectiveContext::new(shape, samples, &x, lambda)
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }

    fn finish(self) -> SelfTestCase {
        SelfTestCase {
            name: self.name.to_string(),
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
            passed: self.worst <= self.tolerance,
        }
    }
}

/// Operator identities: isometry and adjointness, 1D (n up to 512) and 2D (up to 16x16).
pub fn check_operator_identities(cases: usize, seed: u64) -> Result<Vec<SelfTestCase>> {
    let mut rng = seeded(seed);
    let mut iso = Tally::new("isometry G*G = I", 1e-12);
    let mut adj = Tally::new("adjointness <Gz, W> = <z, G*W>", 1e-12);
    for two_dim in [false, true] {
        for _ in 0..cases {
            let shape = random_shape(&mut rng, two_dim, 512)?;
            let z = rand_vec(&mut rng, shape.len());
            let lift = g_apply(&shape, &z)?;
            let dense = lift.to_dense()?;
            let eye = DMatrix::<Complex64>::identity(shape.cols(), shape.cols());
            iso.record(rel(&gstar_factored(&shape, &dense, &eye)?, &z));

            let w = rand_mat(&mut rng, shape.rows(), shape.cols());
            let lhs: Complex64 = dense.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
            let gw = dense_gstar(&shape, &w)?;
            let rhs: Complex64 = z.iter().zip(&gw).map(|(a, b)| a.conj() * b).sum();
            adj.record((lhs - rhs).norm() / (dense.norm() * w.norm()));
        }
    }
    Ok(vec![iso.finish(), adj.finish()])
}

/// Fast paths against dense references on small random instances.
pub fn check_fast_paths(cases: usize, seed: u64) -> Result<Vec<SelfTestCase>> {
    let mut rng = seeded(seed);
    let mut lift = Tally::new("g_apply vs dense_g", 1e-13);
    let mut gstar = Tally::new("gstar_factored vs dense", 1e-11);
    let mut left = Tally::new("(Gw)B vs dense", 1e-11);
    let mut right = Tally::new("(Gw)*A vs dense", 1e-11);
    let mut fval = Tally::new("eval_F vs naive_F", 1e-11);
    let mut grad = Tally::new("grad_F vs dense four-block gradient", 1e-11);
    let mut fd = Tally::new("grad_F vs finite differences (h=1e-6)", 1e-5);
    for _ in 0..cases {
        let n = rng.random_range(4..=64);
        let ctx = random_context(&mut rng, n)?;
        let shape = ctx.shape().clone();
        let r = rng.random_range(1..=4usize.min(shape.rows()).min(shape.cols()));
        let z = rand_vec(&mut rng, n);
        lift.record(rel_m(&g_apply(&shape, &z)?.to_dense()?, &dense_g(&shape, &z)?.matrix));

        let zu = rand_mat(&mut rng, shape.rows(), r);
        let zv = rand_mat(&mut rng, shape.cols(), r);
        gstar.record(rel(&gstar_factored(&shape, &zu, &zv)?, &dense_gstar(&shape, &(&zu * zv.adjoint()))?));

        let dense = dense_g(&shape, &z)?.matrix;
        left.record(rel_m(&g_vector_times_factor(&shape, &z, &zv, Side::Left)?, &(&dense * &zv)));
        right.record(rel_m(&g_vector_times_factor(&shape, &z, &zu, Side::Right)?, &dense.ad_mul(&zu)));

        let pair = FactorPair::new(zu, zv)?;
        let naive = naive_F(&ctx, &pair)?;
        fval.record((eval_F(&ctx, &pair)? - naive).abs() / naive);
        let fast = grad_F(&ctx, &pair)?;
        let reference = dense_grad(&ctx, &pair)?;
        grad.record(fast.axpy(-1.0, &reference).norm() / reference.norm());
        let numeric = naive_grad(&ctx, &pair, 1e-6)?;
        fd.record(fast.axpy(-1.0, &numeric).norm() / fast.norm());
    }
    Ok(vec![
        lift.finish(),
        gstar.finish(),
        left.finish(),
        right.finish(),
        fval.finish(),
        grad.finish(),
        fd.finish(),
    ])
}

/// Lanczos partial SVD against the dense decomposition on lifted random signals.
pub fn check_partial_svd(cases: usize, seed: u64) -> Result<Vec<SelfTestCase>> {
    let mut rng = seeded(seed);
    let mut values = Tally::new("truncated_svd vs dense singular values", 1e-8);
    let mut residual = Tally::new("truncated_svd spectral residual vs sigma_{r+1}", 1e-8);
    for _ in 0..cases {
        let n = rng.random_range(8..=256);
        let shape = HankelShape::new(&[n], None)?;
        let z = rand_vec(&mut rng, n);
        let lift = g_apply(&shape, &z)?;
        let dense = lift.to_dense()?;
        let r = rng.random_range(1..=4usize.min(shape.rows().min(shape.cols()) - 1).max(1));
        let fast = truncated_svd(&lift, r, &LanczosOptions::default())?;
        let reference = dense_svd(&dense)?;
        let err = (0..r)
            .map(|k| (fast.s[k] - reference.s[k]).abs() / reference.s[k])
            .fold(0.0, f64::max);
        values.record(err);
        let remainder = &dense - fast.reconstruct();
        let spectral = dense_svd(&remainder)?.s[0];
        let next = reference.s.get(r).copied().unwrap_or(0.0);
        residual.record((spectral - next).max(0.0) / reference.s[0]);
    }
    Ok(vec![values.finish(), residual.finish()])
}

/// Runs every oracle comparison; used by the `selftest` subcommand.
pub fn selftest(seed: u64) -> Result<Vec<SelfTestCase>> {
    let mut out = check_operator_identities(50, seed)?;
    out.extend(check_fast_paths(25, seed.wrapping_add(1))?);
    out.extend(check_partial_svd(20, seed.wrapping_add(2))?);
    let bound = sampling_bound_check(101, 64, 200, seed.wrapping_add(3))?;
    out.push(SelfTestCase {
        name: "key sampling inequality violation rate (n=101, m=64)".into(),
        cases: bound.trials,
        worst: bound.violation_rate,
        tolerance: 0.01,
        passed: bound.violation_rate <= 0.01,
    });
    Ok(out)
}

/// `D^-1 G^* T_r(G D x)`: the best the lifted rank-`r` model can do with full data.
pub fn best_rank_reconstruction(shape: &HankelShape, x: &[Complex64], r: usize) -> Result<Vec<Complex64>> {
    let y = d_scale(shape, x, Direction::Forward)?;
    let lifted = dense_g(shape, &y)?.matrix;
    let truncated = dense_truncate(&lifted, r)?;
    d_scale(shape, &dense_gstar(shape, &truncated)?, Direction::Inverse)
}
