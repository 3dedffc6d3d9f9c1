//! Multi-fold Hankel lifting geometry and fast structured products.
//!
//! A signal of shape `N_1 x .. x N_d` (flattened row-major) is lifted to a
//! matrix whose rows are indexed by multi-indices `i < (n_1, .., n_d)` and
//! whose columns are indexed by `j < (N_1 - n_1 + 1, ..)`; entry `(i, j)`
//! holds the signal value at `i + j`. The weighted lifting `G = H D^-1`
//! divides each entry by the square root of its skew-diagonal population,
//! which makes `G` an isometry (`G* G = I`).
//!
//! All products with `G`, `G*` are evaluated as zero-padded d-dimensional
//! FFT convolutions, so the lifted matrix is never formed.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

/// Above this many lifted entries [`HankelLift::to_dense`] refuses to materialize.
pub const DENSE_LIMIT: usize = 1 << 22;

const MAX_DIMS: usize = 3;

/// Geometry of a (multi-fold) Hankel lifting.
#[derive(Clone)]
pub struct HankelShape {
    dims: Vec<usize>,
    pencil: Vec<usize>,
    col_dims: Vec<usize>,
    weights: Vec<Vec<u64>>,
    sqrt_weights: Vec<f64>,
    c_s: f64,
    maps: Arc<IndexMaps>,
    fft: Arc<NdFft>,
}

impl fmt::Debug for HankelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HankelShape")
            .field("dims", &self.dims)
            .field("pencil", &self.pencil)
            .field("c_s", &self.c_s)
            .finish()
    }
}

impl PartialEq for HankelShape {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.pencil == other.pencil
    }
}

/// Default pencil for one axis: the squarest split.
pub fn default_pencil(len: usize) -> usize {
    (len + 2) / 2
}

/// Number of lifted entries on skew-diagonal `a` of an `rows x (len - rows + 1)` Hankel matrix.
pub fn skew_weight(a: usize, rows: usize, len: usize) -> u64 {
    let cols = len - rows + 1;
    (a + 1).min(rows).min(cols).min(len - a) as u64
}

impl HankelShape {
    /// Builds the lifting geometry. `pencil` defaults to `ceil((N_i + 1) / 2)` per axis.
    pub fn new(dims: &[usize], pencil: Option<&[usize]>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(Error::InvalidShape(format!(
                "expected 1 to {MAX_DIMS} dimensions, got {}",
                dims.len()
            )));
        }
        if let Some(&bad) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidShape(format!("axis length {bad} must be positive")));
        }
        let pencil: Vec<usize> = match pencil {
            Some(p) => {
                if p.len() != dims.len() {
                    return Err(Error::InvalidShape(format!(
                        "pencil has {} entries but dims has {}",
                        p.len(),
                        dims.len()
                    )));
                }
                for (&ni, &len) in p.iter().zip(dims) {
                    if ni == 0 || ni > len {
                        return Err(Error::InvalidShape(format!(
                            "pencil {ni} outside [1, {len}]"
                        )));
                    }
                }
                p.to_vec()
            }
            None => dims.iter().map(|&d| default_pencil(d)).collect(),
        };
        let col_dims: Vec<usize> = dims.iter().zip(&pencil).map(|(&d, &p)| d - p + 1).collect();
        let weights: Vec<Vec<u64>> = dims
            .iter()
            .zip(&pencil)
            .map(|(&len, &rows)| (0..len).map(|a| skew_weight(a, rows, len)).collect())
            .collect();

        let n: usize = dims.iter().product();
        let mut sqrt_weights = vec![0.0; n];
        for (flat, slot) in sqrt_weights.iter_mut().enumerate() {
            let idx = unravel(flat, dims);
            let w: u64 = idx.iter().zip(&weights).map(|(&a, w)| w[a]).product();
            *slot = (w as f64).sqrt();
        }

        let rows: usize = pencil.iter().product();
        let cols: usize = col_dims.iter().product();
        let c_s = (n as f64 / rows as f64).max(n as f64 / cols as f64);

        let padded: Vec<usize> = dims.iter().map(|&d| d.next_power_of_two()).collect();
        let maps = IndexMaps::new(dims, &pencil, &col_dims, &padded);
        let fft = NdFft::new(&padded);

        Ok(Self {
            dims: dims.to_vec(),
            pencil,
            col_dims,
            weights,
            sqrt_weights,
            c_s,
            maps: Arc::new(maps),
            fft: Arc::new(fft),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn pencil(&self) -> &[usize] {
        &self.pencil
    }

    /// Per-axis column extents `N_i - n_i + 1`.
    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total signal length `n`.
    pub fn len(&self) -> usize {
        self.sqrt_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_weights.is_empty()
    }

    /// Lifted row count.
    pub fn rows(&self) -> usize {
        self.maps.row.len()
    }

    /// Lifted column count.
    pub fn cols(&self) -> usize {
        self.maps.col.len()
    }

    /// Per-axis skew-diagonal populations.
    pub fn axis_weights(&self, axis: usize) -> &[u64] {
        &self.weights[axis]
    }

    /// Joint weight of the flat (row-major) signal index.
    pub fn joint_weight(&self, flat: usize) -> u64 {
        let s = self.sqrt_weights[flat];
        (s * s).round() as u64
    }

    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_weights
    }

    pub fn c_s(&self) -> f64 {
        self.c_s
    }

    pub(crate) fn fft(&self) -> &NdFft {
        &self.fft
    }

    pub(crate) fn maps(&self) -> &IndexMaps {
        &self.maps
    }

    /// Flat signal index of lifted entry `(row, col)`.
    pub fn lifted_index(&self, row: usize, col: usize) -> usize {
        let ri = unravel(row, &self.pencil);
        let ci = unravel(col, &self.col_dims);
        let sum: Vec<usize> = ri.iter().zip(&ci).map(|(a, b)| a + b).collect();
        ravel(&sum, &self.dims)
    }
}

/// Applies `D` (forward) or `D^-1` (inverse) entrywise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn d_scale(shape: &HankelShape, z: &[Complex64], direction: Direction) -> Result<Vec<Complex64>> {
    check_len("signal", shape.len(), z.len())?;
    Ok(match direction {
        Direction::Forward => z.iter().zip(shape.sqrt_weights()).map(|(v, s)| v * s).collect(),
        Direction::Inverse => z.iter().zip(shape.sqrt_weights()).map(|(v, s)| v / s).collect(),
    })
}

/// Implicit handle for the lifted matrix `G z`.
#[derive(Debug, Clone)]
pub struct HankelLift<'a> {
    shape: &'a HankelShape,
    /// `D^-1 z`, i.e. the value carried by each skew-diagonal.
    diag: Vec<Complex64>,
    spectrum: Vec<Complex64>,
    conj_spectrum: Vec<Complex64>,
}

/// `G z` as an implicit operator.
pub fn g_apply<'a>(shape: &'a HankelShape, z: &[Complex64]) -> Result<HankelLift<'a>> {
    let diag = d_scale(shape, z, Direction::Inverse)?;
    let maps = shape.maps();
    let fft = shape.fft();
    let mut spectrum = fft.zeros();
    let mut conj_spectrum = fft.zeros();
    for (v, &pos) in diag.iter().zip(&maps.signal) {
        spectrum[pos] = *v;
        conj_spectrum[pos] = v.conj();
    }
    fft.forward(&mut spectrum);
    fft.forward(&mut conj_spectrum);
    Ok(HankelLift {
        shape,
        diag,
        spectrum,
        conj_spectrum,
    })
}

impl<'a> HankelLift<'a> {
    pub fn shape(&self) -> &HankelShape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows()
    }

    pub fn cols(&self) -> usize {
        self.shape.cols()
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.diag[self.shape.lifted_index(row, col)]
    }

    /// `(G z) B` for `B` with `cols()` rows.
    pub fn mul(&self, b: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        check_len("factor rows", self.cols(), b.nrows())?;
        let maps = self.shape.maps();
        Ok(correlate_columns(
            self.shape.fft(),
            &self.spectrum,
            b,
            &maps.col_rev,
            &maps.row_shifted,
        ))
    }

    /// `(G z)^* A` for `A` with `rows()` rows.
    pub fn adjoint_mul(&self, a: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        check_len("factor rows", self.rows(), a.nrows())?;
        let maps = self.shape.maps();
        Ok(correlate_columns(
            self.shape.fft(),
            &self.conj_spectrum,
            a,
            &maps.row_rev,
            &maps.col_shifted,
        ))
    }

    /// Materializes the lifted matrix; refuses above [`DENSE_LIMIT`] entries.
    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        let size = self.rows() * self.cols();
        if size > DENSE_LIMIT {
            return Err(Error::SizeGuard {
                size,
                limit: DENSE_LIMIT,
            });
        }
        Ok(DMatrix::from_fn(self.rows(), self.cols(), |i, j| self.entry(i, j)))
    }
}

/// Which side of the lifted matrix the factor multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(G w) B`
    Left,
    /// `(G w)^* A`
    Right,
}

pub fn g_vector_times_factor(
    shape: &HankelShape,
    w: &[Complex64],
    factor: &DMatrix<Complex64>,
    side: Side,
) -> Result<DMatrix<Complex64>> {
    let lift = g_apply(shape, w)?;
    match side {
        Side::Left => lift.mul(factor),
        Side::Right => lift.adjoint_mul(factor),
    }
}

/// `G^*(Z_U Z_V^*)` via one convolution per column pair.
pub fn gstar_factored(
    shape: &HankelShape,
    zu: &DMatrix<Complex64>,
    zv: &DMatrix<Complex64>,
) -> Result<Vec<Complex64>> {
    check_len("left factor rows", shape.rows(), zu.nrows())?;
    check_len("right factor rows", shape.cols(), zv.nrows())?;
    check_len("factor rank", zu.ncols(), zv.ncols())?;
    let maps = shape.maps();
    let fft = shape.fft();
    let mut acc = fft.zeros();
    let mut left = fft.zeros();
    let mut right = fft.zeros();
    for k in 0..zu.ncols() {
        left.iter_mut().for_each(|v| *v = Complex64::default());
        right.iter_mut().for_each(|v| *v = Complex64::default());
        for (v, &pos) in zu.column(k).iter().zip(&maps.row) {
            left[pos] = *v;
        }
        for (v, &pos) in zv.column(k).iter().zip(&maps.col) {
            right[pos] = v.conj();
        }
        fft.forward(&mut left);
        fft.forward(&mut right);
        for ((a, l), r) in acc.iter_mut().zip(&left).zip(&right) {
            *a += l * r;
        }
    }
    fft.inverse(&mut acc);
    Ok(maps
        .signal
        .iter()
        .zip(shape.sqrt_weights())
        .map(|(&pos, s)| acc[pos] / s)
        .collect())
}

fn correlate_columns(
    fft: &NdFft,
    spectrum: &[Complex64],
    factor: &DMatrix<Complex64>,
    place: &[usize],
    take: &[usize],
) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(take.len(), factor.ncols());
    let mut buf = fft.zeros();
    for k in 0..factor.ncols() {
        buf.iter_mut().for_each(|v| *v = Complex64::default());
        for (v, &pos) in factor.column(k).iter().zip(place) {
            buf[pos] = *v;
        }
        fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(spectrum) {
            *b *= s;
        }
        fft.inverse(&mut buf);
        for (o, &pos) in out.column_mut(k).iter_mut().zip(take) {
            *o = buf[pos];
        }
    }
    out
}

/// Row-major multi-index of `flat` within `dims`.
pub fn unravel(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for (slot, &d) in idx.iter_mut().zip(dims).rev() {
        *slot = flat % d;
        flat /= d;
    }
    idx
}

pub fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Positions in the padded FFT grid for every operand layout.
#[derive(Debug)]
pub(crate) struct IndexMaps {
    /// signal index `a` -> `a`
    pub signal: Vec<usize>,
    /// row index `i` -> `i`
    pub row: Vec<usize>,
    /// column index `j` -> `j`
    pub col: Vec<usize>,
    /// row index `i` -> `n - 1 - i` (axis-wise)
    pub row_rev: Vec<usize>,
    /// column index `j` -> `L - 1 - j`
    pub col_rev: Vec<usize>,
    /// row index `i` -> `i + L - 1`
    pub row_shifted: Vec<usize>,
    /// column index `j` -> `j + n - 1`
    pub col_shifted: Vec<usize>,
}

impl IndexMaps {
    fn new(dims: &[usize], pencil: &[usize], col_dims: &[usize], padded: &[usize]) -> Self {
        let layout = |extent: &[usize], f: &dyn Fn(usize, usize) -> usize| -> Vec<usize> {
            let count: usize = extent.iter().product();
            (0..count)
                .map(|flat| {
                    let idx = unravel(flat, extent);
                    let mapped: Vec<usize> = idx.iter().enumerate().map(|(ax, &i)| f(ax, i)).collect();
                    ravel(&mapped, padded)
                })
                .collect()
        };
        Self {
            signal: layout(dims, &|_, i| i),
            row: layout(pencil, &|_, i| i),
            col: layout(col_dims, &|_, j| j),
            row_rev: layout(pencil, &|ax, i| pencil[ax] - 1 - i),
            col_rev: layout(col_dims, &|ax, j| col_dims[ax] - 1 - j),
            row_shifted: layout(pencil, &|ax, i| i + col_dims[ax] - 1),
            col_shifted: layout(col_dims, &|ax, j| j + pencil[ax] - 1),
        }
    }
}

/// Row-major d-dimensional FFT over a fixed padded grid.
pub(crate) struct NdFft {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    total: usize,
}

impl fmt::Debug for NdFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NdFft").field("dims", &self.dims).finish()
    }
}

impl NdFft {
    fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims: dims.to_vec(),
            forward: dims.iter().map(|&d| planner.plan_fft_forward(d)).collect(),
            inverse: dims.iter().map(|&d| planner.plan_fft_inverse(d)).collect(),
            total: dims.iter().product(),
        }
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.total]
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.forward);
    }

    /// Normalized inverse transform.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse);
        let scale = 1.0 / self.total as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    fn transform(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let nd = self.dims.len();
        let mut line = Vec::new();
        for axis in 0..nd {
            let len = self.dims[axis];
            if len == 1 {
                continue;
            }
            let plan = &plans[axis];
            let stride: usize = self.dims[axis + 1..].iter().product();
            if stride == 1 {
                plan.process(buf);
                continue;
            }
            line.resize(len, Complex64::default());
            let outer = self.total / (len * stride);
            for o in 0..outer {
                let base = o * len * stride;
                for s in 0..stride {
                    for (t, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + s + t * stride];
                    }
                    plan.process(&mut line);
                    for (t, v) in line.iter().enumerate() {
                        buf[base + s + t * stride] = *v;
                    }
                }
            }
        }
    }
}
