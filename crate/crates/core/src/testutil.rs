use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::rng::{complex_normal, seeded};

pub fn random_vector(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| complex_normal(&mut rng)).collect()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<Complex64> {
    let mut rng = seeded(seed);
    DMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng))
}

pub fn random_unitary(r: usize, seed: u64) -> DMatrix<Complex64> {
    random_matrix(r, r, seed).qr().q()
}

pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}
