//! Dense decompositions for small matrices.
//!
//! nalgebra stores every matrix in the crate; the SVD itself goes through
//! faer, whose bidiagonal SVD stays accurate on bidiagonals with exact zeros
//! (nalgebra 0.35 can return a wrong leading value there when vectors are requested).

use faer::traits::ComplexField;
use faer::Mat;
use nalgebra::{DMatrix, Scalar};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub trait Entry: Scalar + Copy + ComplexField {
    fn real(self) -> f64;
}

impl Entry for f64 {
    fn real(self) -> f64 {
        self
    }
}

impl Entry for Complex64 {
    fn real(self) -> f64 {
        self.re
    }
}

/// Thin SVD `A = U diag(s) V^*` with `s` in nonincreasing order.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<f64>,
    pub v: DMatrix<T>,
}

fn to_faer<T: Entry>(a: &DMatrix<T>) -> Mat<T> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer<T: Entry>(m: faer::MatRef<'_, T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn svd<T: Entry>(a: &DMatrix<T>) -> Result<Svd<T>> {
    if a.is_empty() {
        return Ok(Svd {
            u: DMatrix::from_element(a.nrows(), 0, T::zero_impl()),
            s: Vec::new(),
            v: DMatrix::from_element(a.ncols(), 0, T::zero_impl()),
        });
    }
    let dec = to_faer(a).thin_svd().map_err(|_| Error::SvdNotConverged {
        residual: f64::NAN,
        iterations: 0,
    })?;
    let s = dec.S().column_vector().iter().map(|x| x.real()).collect();
    Ok(Svd {
        u: from_faer(dec.U()),
        s,
        v: from_faer(dec.V()),
    })
}

pub fn singular_values<T: Entry>(a: &DMatrix<T>) -> Result<Vec<f64>> {
    Ok(svd(a)?.s)
}
