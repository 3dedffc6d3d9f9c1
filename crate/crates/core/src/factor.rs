//! Factor-space linear algebra: partial SVD, Procrustes alignment and
//! the row-norm feasible set.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{check_len, Error, Result};
use crate::hankel::HankelLift;
use crate::rng::{complex_normal, seeded};

/// A matrix known only through products with blocks of vectors.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A X`
    fn apply(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64>;
    /// `A^* Y`
    fn apply_adjoint(&self, y: &DMatrix<Complex64>) -> DMatrix<Complex64>;
}

impl LinearOperator for DMatrix<Complex64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self * x
    }

    fn apply_adjoint(&self, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.ad_mul(y)
    }
}

impl LinearOperator for HankelLift<'_> {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.mul(x).expect("operand sized by caller")
    }

    fn apply_adjoint(&self, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.adjoint_mul(y).expect("operand sized by caller")
    }
}

/// Stacked low-rank factors `Z = [Z_U; Z_V]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: DMatrix<Complex64>,
    pub v: DMatrix<Complex64>,
}

impl FactorPair {
    pub fn new(u: DMatrix<Complex64>, v: DMatrix<Complex64>) -> Result<Self> {
        check_len("factor rank", u.ncols(), v.ncols())?;
        Ok(Self { u, v })
    }

    pub fn zeros(rows: usize, cols: usize, rank: usize) -> Self {
        Self {
            u: DMatrix::zeros(rows, rank),
            v: DMatrix::zeros(cols, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn stacked(&self) -> DMatrix<Complex64> {
        let (ru, rv, r) = (self.u.nrows(), self.v.nrows(), self.rank());
        let mut z = DMatrix::zeros(ru + rv, r);
        z.rows_mut(0, ru).copy_from(&self.u);
        z.rows_mut(ru, rv).copy_from(&self.v);
        z
    }

    pub fn from_stacked(z: &DMatrix<Complex64>, u_rows: usize) -> Self {
        Self {
            u: z.rows(0, u_rows).into_owned(),
            v: z.rows(u_rows, z.nrows() - u_rows).into_owned(),
        }
    }

    /// `Z Q` for an `r x r` matrix `Q`.
    pub fn mul_right(&self, q: &DMatrix<Complex64>) -> Self {
        Self {
            u: &self.u * q,
            v: &self.v * q,
        }
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &FactorPair) -> Self {
        Self {
            u: &self.u + &other.u * Complex64::new(alpha, 0.0),
            v: &self.v + &other.v * Complex64::new(alpha, 0.0),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.u.norm_squared() + self.v.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Largest row norm over both blocks, `||Z||_{2,inf}`.
    pub fn max_row_norm(&self) -> f64 {
        row_norms(&self.u)
            .chain(row_norms(&self.v))
            .fold(0.0, f64::max)
    }
}

fn row_norms(m: &DMatrix<Complex64>) -> impl Iterator<Item = f64> + '_ {
    m.row_iter().map(|row| row.norm())
}

/// Parameters of the feasible set `{Z : ||Z||_{2,inf} <= sqrt(mu c_s r sigma / n)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub mu: f64,
    pub sigma: f64,
    pub c_s: f64,
    pub r: usize,
    pub n: usize,
}

impl ProjectionParams {
    pub fn bound(&self) -> f64 {
        (self.mu * self.c_s * self.r as f64 * self.sigma / self.n as f64).sqrt()
    }

    /// Chooses `mu` so that `bound() == bound`.
    pub fn with_bound(bound: f64, sigma: f64, c_s: f64, r: usize, n: usize) -> Self {
        let mu = bound * bound * n as f64 / (c_s * r as f64 * sigma);
        Self { mu, sigma, c_s, r, n }
    }
}

/// Row-wise trimming onto the feasible set.
pub fn project_feasible(z: &FactorPair, params: &ProjectionParams) -> FactorPair {
    let bound = params.bound();
    let trim = |m: &DMatrix<Complex64>| {
        let mut out = m.clone();
        for mut row in out.row_iter_mut() {
            let norm = row.norm();
            // A row already scaled onto the sphere may sit a few ulps above it.
            if norm > bound * (1.0 + 8.0 * f64::EPSILON) {
                row *= Complex64::new(bound / norm, 0.0);
            }
        }
        out
    };
    FactorPair {
        u: trim(&z.u),
        v: trim(&z.v),
    }
}

/// Optimal unitary alignment of `z` to `m` and the resulting distance.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub q: DMatrix<Complex64>,
    pub dist: f64,
}

/// `min_Q ||Z - M Q||_F` over unitary `Q`, attained at `Q = Q1 Q2^*` where `M^* Z = Q1 L Q2^*`.
pub fn procrustes(z: &DMatrix<Complex64>, m: &DMatrix<Complex64>) -> Result<Alignment> {
    check_len("stacked rows", m.nrows(), z.nrows())?;
    check_len("stacked rank", m.ncols(), z.ncols())?;
    let cross = m.ad_mul(z);
    let svd = dense::svd(&cross)?;
    let q = svd.u * svd.v.adjoint();
    let dist = (z - m * &q).norm();
    Ok(Alignment { q, dist })
}

/// Truncated SVD `A ~ U diag(s) V^*`.
#[derive(Debug, Clone)]
pub struct PartialSvd {
    pub u: DMatrix<Complex64>,
    pub s: Vec<f64>,
    pub v: DMatrix<Complex64>,
    /// Krylov dimension reached in the final cycle.
    pub steps: usize,
}

impl PartialSvd {
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let mut us = self.u.clone();
        for (k, &s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(s);
        }
        us * self.v.adjoint()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Relative residual `||A^* u_i - s_i v_i|| / s_1` required for each kept triplet.
    pub tol: f64,
    /// Krylov dimension per cycle; `None` means `30 r`.
    pub max_steps: Option<usize>,
    pub max_restarts: usize,
    /// Seeds the random start vector.
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_steps: None,
            max_restarts: 8,
            seed: 0x1A2C_205,
        }
    }
}

/// Best rank-`r` approximation via Golub-Kahan-Lanczos bidiagonalization
/// with full reorthogonalization and explicit restarts.
pub fn truncated_svd<A: LinearOperator + ?Sized>(a: &A, r: usize, opts: &LanczosOptions) -> Result<PartialSvd> {
    let (rows, cols) = (a.nrows(), a.ncols());
    let full = rows.min(cols);
    if r == 0 || r > full {
        return Err(Error::Validation(format!("rank {r} outside [1, {full}]")));
    }
    let kmax = opts.max_steps.unwrap_or(30 * r).max(r + 1).min(full);

    let mut rng = seeded(opts.seed);
    let mut start: DVector<Complex64> = DVector::from_fn(cols, |_, _| complex_normal(&mut rng));
    let mut last_residual = f64::INFINITY;

    for _cycle in 0..=opts.max_restarts {
        let run = bidiagonalize(a, &start, kmax, &mut rng);
        let k = run.alpha.len();
        let mut b = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            b[(i, i)] = run.alpha[i];
            if i + 1 < k {
                b[(i, i + 1)] = run.beta[i];
            }
        }
        let svd = dense::svd(&b)?;
        let s1 = svd.s[0];
        let tail = run.beta[k - 1];
        let residual = (0..r)
            .map(|i| (tail * svd.u[(k - 1, i)]).abs())
            .fold(0.0, f64::max)
            / s1.max(f64::MIN_POSITIVE);
        let exhausted = k == full;
        // Left Ritz vectors U_k P, right Ritz vectors V_k Q.
        let to_complex = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
        let mut u = &run.u * to_complex(&svd.u.columns(0, r).into_owned());
        let mut v = &run.v * to_complex(&svd.v.columns(0, r).into_owned());
        let s = svd.s[..r].to_vec();

        if residual <= opts.tol || s1 == 0.0 {
            fix_phase(&mut u, &mut v);
            return Ok(PartialSvd { u, s, v, steps: k });
        }
        if exhausted {
            return dense_fallback(a, r);
        }
        last_residual = residual;
        // Restart from the sum of the wanted right Ritz vectors.
        start = v.column_sum();
        if start.norm() == 0.0 {
            start = DVector::from_fn(cols, |_, _| complex_normal(&mut rng));
        }
    }
    Err(Error::SvdNotConverged {
        residual: last_residual,
        iterations: kmax * (opts.max_restarts + 1),
    })
}

struct Bidiagonal {
    u: DMatrix<Complex64>,
    v: DMatrix<Complex64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn bidiagonalize<A: LinearOperator + ?Sized, R: Rng>(
    a: &A,
    start: &DVector<Complex64>,
    kmax: usize,
    rng: &mut R,
) -> Bidiagonal {
    let (rows, cols) = (a.nrows(), a.ncols());
    let mut us: Vec<DVector<Complex64>> = Vec::with_capacity(kmax);
    let mut vs: Vec<DVector<Complex64>> = Vec::with_capacity(kmax + 1);
    let mut alpha = Vec::with_capacity(kmax);
    let mut beta = Vec::with_capacity(kmax);
    vs.push(start / Complex64::new(start.norm(), 0.0));
    let mut scale = 0.0f64;

    for j in 0..kmax {
        let vj = DMatrix::from_column_slice(cols, 1, vs[j].as_slice());
        let mut u = DVector::from_column_slice(a.apply(&vj).as_slice());
        if j > 0 {
            u -= &us[j - 1] * Complex64::new(beta[j - 1], 0.0);
        }
        reorthogonalize(&mut u, &us);
        let mut a_j = u.norm();
        scale = scale.max(a_j);
        if a_j <= BREAKDOWN * scale {
            u = fresh_direction(rows, &us, rng);
            a_j = 0.0;
        } else {
            u /= Complex64::new(a_j, 0.0);
        }
        alpha.push(a_j);
        us.push(u);

        let uj = DMatrix::from_column_slice(rows, 1, us[j].as_slice());
        let mut v = DVector::from_column_slice(a.apply_adjoint(&uj).as_slice());
        v -= &vs[j] * Complex64::new(a_j, 0.0);
        reorthogonalize(&mut v, &vs);
        let mut b_j = v.norm();
        scale = scale.max(b_j);
        if j + 1 < cols && b_j <= BREAKDOWN * scale {
            v = fresh_direction(cols, &vs, rng);
            b_j = 0.0;
        } else if b_j > 0.0 {
            v /= Complex64::new(b_j, 0.0);
        }
        beta.push(b_j);
        vs.push(v);
    }
    vs.truncate(kmax);
    Bidiagonal {
        u: DMatrix::from_columns(&us),
        v: DMatrix::from_columns(&vs),
        alpha,
        beta,
    }
}

/// Relative size below which a Lanczos vector is treated as an exact invariant-subspace breakdown.
const BREAKDOWN: f64 = 1e-13;

fn reorthogonalize(x: &mut DVector<Complex64>, basis: &[DVector<Complex64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for b in basis {
            let c = b.dotc(x);
            *x -= b * c;
        }
    }
}

fn fresh_direction<R: Rng>(dim: usize, basis: &[DVector<Complex64>], rng: &mut R) -> DVector<Complex64> {
    loop {
        let mut x = DVector::from_fn(dim, |_, _| complex_normal(rng));
        reorthogonalize(&mut x, basis);
        let norm = x.norm();
        if norm > 1e-8 {
            return x / Complex64::new(norm, 0.0);
        }
    }
}

fn dense_fallback<A: LinearOperator + ?Sized>(a: &A, r: usize) -> Result<PartialSvd> {
    let cols = a.ncols();
    let dense = a.apply(&DMatrix::identity(cols, cols));
    let svd = dense::svd(&dense)?;
    let mut u = svd.u.columns(0, r).into_owned();
    let mut v = svd.v.columns(0, r).into_owned();
    fix_phase(&mut u, &mut v);
    Ok(PartialSvd {
        u,
        s: svd.s[..r].to_vec(),
        v,
        steps: cols.min(a.nrows()),
    })
}

/// Rotates each singular pair so the first non-negligible entry of the left vector is real positive.
pub fn fix_phase(u: &mut DMatrix<Complex64>, v: &mut DMatrix<Complex64>) {
    for k in 0..u.ncols() {
        let col_norm = u.column(k).norm();
        let Some(pivot) = u.column(k).iter().copied().find(|x| x.norm() > 1e-8 * col_norm) else {
            continue;
        };
        let phase = pivot.conj() / pivot.norm();
        u.column_mut(k).scale_mut_complex(phase);
        v.column_mut(k).scale_mut_complex(phase);
    }
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, s: Complex64);
}

impl<S> ScaleComplex for nalgebra::Matrix<Complex64, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<Complex64, nalgebra::Dyn, nalgebra::U1>,
{
    fn scale_mut_complex(&mut self, s: Complex64) {
        for x in self.iter_mut() {
            *x *= s;
        }
    }
}
