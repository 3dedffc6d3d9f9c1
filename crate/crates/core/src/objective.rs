//! The factored objective `F(Z) = f(Z) + lambda g(Z)` and its gradient.
//!
//! `f` penalizes both the departure of `Z_U Z_V^*` from Hankel structure and
//! the (reweighted) misfit on observed entries:
//!
//! ```text
//! f(Z) = ||(I - G G^*)(Z_U Z_V^*)||_F^2 + p^-1 <P_Omega(G^*(Z_U Z_V^*) - y), G^*(Z_U Z_V^*) - y>
//! g(Z) = 1/2 ||Z_U^* Z_U - Z_V^* Z_V||_F^2
//! ```
//!
//! The first term is evaluated as `||Z_U Z_V^*||_F^2 - ||G^*(Z_U Z_V^*)||^2`
//! with the Frobenius norm taken from the `r x r` Gram matrices, so no
//! lifted matrix is formed. That identity cancels catastrophically once
//! `f` falls below roughly `1e-16 ||Z||^4`; use the dense oracle when a
//! tighter absolute value is needed.
//!
//! Gradients follow the Wirtinger convention `dF/d(conj Z)`, so the
//! directional derivative of `F` along a real perturbation `E` is
//! `2 Re <grad F, E>`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{check_len, Error, Result};
use crate::factor::FactorPair;
use crate::hankel::{d_scale, g_apply, gstar_factored, Direction, HankelShape};
use crate::sampling::SampleSet;

/// Everything `F` depends on besides the factors.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    shape: HankelShape,
    samples: SampleSet,
    /// `y = D x` on observed entries, zero elsewhere.
    y_obs: Vec<Complex64>,
    lambda: f64,
}

impl ObjectiveContext {
    /// Builds the context from raw observed signal values `x_obs` (entries off the sample support are ignored).
    pub fn new(shape: HankelShape, samples: SampleSet, x_obs: &[Complex64], lambda: f64) -> Result<Self> {
        check_len("sample universe", shape.len(), samples.n())?;
        check_len("observed signal", shape.len(), x_obs.len())?;
        if !(lambda >= 0.0) {
            return Err(Error::Validation(format!("lambda must be nonnegative, got {lambda}")));
        }
        let y_obs = samples.mask(&d_scale(&shape, x_obs, Direction::Forward)?)?;
        Ok(Self {
            shape,
            samples,
            y_obs,
            lambda,
        })
    }

    pub fn shape(&self) -> &HankelShape {
        &self.shape
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn y_obs(&self) -> &[Complex64] {
        &self.y_obs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Sampling ratio `p = m / n`.
    pub fn p(&self) -> f64 {
        self.samples.ratio()
    }

    fn check_factors(&self, z: &FactorPair) -> Result<()> {
        check_len("left factor rows", self.shape.rows(), z.u.nrows())?;
        check_len("right factor rows", self.shape.cols(), z.v.nrows())?;
        check_len("factor rank", z.u.ncols(), z.v.ncols())
    }
}

/// Objective terms at one point, plus the reconstructed `y = G^*(Z_U Z_V^*)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f: f64,
    pub g: f64,
    pub value: f64,
    pub y_rec: Vec<Complex64>,
}

struct Grams {
    uu: DMatrix<Complex64>,
    vv: DMatrix<Complex64>,
}

impl Grams {
    fn of(z: &FactorPair) -> Self {
        Self {
            uu: z.u.ad_mul(&z.u),
            vv: z.v.ad_mul(&z.v),
        }
    }

    /// `||Z_U Z_V^*||_F^2 = tr((Z_U^* Z_U)(Z_V^* Z_V))`.
    fn product_frobenius_sqr(&self) -> f64 {
        self.uu.component_mul(&self.vv.transpose()).sum().re
    }

    fn imbalance(&self) -> f64 {
        0.5 * (&self.uu - &self.vv).norm_squared()
    }
}

fn data_misfit(ctx: &ObjectiveContext, y_rec: &[Complex64]) -> f64 {
    let mult = ctx.samples.multiplicity();
    let sum: f64 = y_rec
        .iter()
        .zip(&ctx.y_obs)
        .zip(mult)
        .filter(|(_, &c)| c > 0)
        .map(|((s, y), &c)| c as f64 * (s - y).norm_sqr())
        .sum();
    sum / ctx.p()
}

pub fn evaluate(ctx: &ObjectiveContext, z: &FactorPair) -> Result<Evaluation> {
    ctx.check_factors(z)?;
    let grams = Grams::of(z);
    let y_rec = gstar_factored(&ctx.shape, &z.u, &z.v)?;
    let hankel_gap = (grams.product_frobenius_sqr() - norm_sqr(&y_rec)).max(0.0);
    let f = hankel_gap + data_misfit(ctx, &y_rec);
    let g = grams.imbalance();
    Ok(Evaluation {
        f,
        g,
        value: f + ctx.lambda * g,
        y_rec,
    })
}

pub fn eval_f(ctx: &ObjectiveContext, z: &FactorPair) -> Result<f64> {
    evaluate(ctx, z).map(|e| e.f)
}

pub fn eval_g(z: &FactorPair) -> Result<f64> {
    check_len("factor rank", z.u.ncols(), z.v.ncols())?;
    Ok(Grams::of(z).imbalance())
}

#[allow(non_snake_case)]
pub fn eval_F(ctx: &ObjectiveContext, z: &FactorPair) -> Result<f64> {
    evaluate(ctx, z).map(|e| e.value)
}

/// Wirtinger gradient `[grad_U F; grad_V F]` in `O(r^2 n + r n log n)`.
#[allow(non_snake_case)]
pub fn grad_F(ctx: &ObjectiveContext, z: &FactorPair) -> Result<FactorPair> {
    ctx.check_factors(z)?;
    let y_rec = gstar_factored(&ctx.shape, &z.u, &z.v)?;
    gradient_at(ctx, z, &y_rec)
}

/// Gradient reusing an already computed `G^*(Z_U Z_V^*)`.
pub(crate) fn gradient_at(ctx: &ObjectiveContext, z: &FactorPair, y_rec: &[Complex64]) -> Result<FactorPair> {
    let inv_p = 1.0 / ctx.p();
    let mult = ctx.samples.multiplicity();
    // w = p^-1 P_Omega(G^* A - y) - G^* A
    let w: Vec<Complex64> = y_rec
        .iter()
        .zip(&ctx.y_obs)
        .zip(mult)
        .map(|((s, y), &c)| (s - y) * (c as f64 * inv_p) - s)
        .collect();
    let lift = g_apply(&ctx.shape, &w)?;
    let grams = Grams::of(z);
    let lam = Complex64::new(ctx.lambda, 0.0);
    let one_minus = Complex64::new(1.0 - ctx.lambda, 0.0);
    let mix_u = &grams.uu * lam + &grams.vv * one_minus;
    let mix_v = &grams.vv * lam + &grams.uu * one_minus;
    let u = lift.mul(&z.v)? + &z.u * mix_u;
    let v = lift.adjoint_mul(&z.u)? + &z.v * mix_v;
    Ok(FactorPair { u, v })
}

pub(crate) fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}
