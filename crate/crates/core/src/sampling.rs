//! Observation model: index multisets and the sampling projection.

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    WithReplacement,
    WithoutReplacement,
}

/// Observed flat indices (row-major for multi-dimensional signals), duplicates allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleSetRepr", into = "SampleSetRepr")]
pub struct SampleSet {
    n: usize,
    mode: SampleMode,
    indices: Vec<usize>,
    multiplicity: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct SampleSetRepr {
    n: usize,
    mode: SampleMode,
    indices: Vec<usize>,
}

impl TryFrom<SampleSetRepr> for SampleSet {
    type Error = Error;

    fn try_from(r: SampleSetRepr) -> Result<Self> {
        SampleSet::from_indices(r.n, r.indices, r.mode)
    }
}

impl From<SampleSet> for SampleSetRepr {
    fn from(s: SampleSet) -> Self {
        Self {
            n: s.n,
            mode: s.mode,
            indices: s.indices,
        }
    }
}

impl SampleSet {
    pub fn from_indices(n: usize, indices: Vec<usize>, mode: SampleMode) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSampling("at least one sample is required".into()));
        }
        let mut multiplicity = vec![0u32; n];
        for &a in &indices {
            if a >= n {
                return Err(Error::InvalidSampling(format!("index {a} outside [0, {n})")));
            }
            multiplicity[a] += 1;
            if mode == SampleMode::WithoutReplacement && multiplicity[a] > 1 {
                return Err(Error::InvalidSampling(format!(
                    "index {a} repeated in without-replacement set"
                )));
            }
        }
        Ok(Self {
            n,
            mode,
            indices,
            multiplicity,
        })
    }

    /// Draws `m` indices uniformly from `[0, n)`.
    pub fn draw(n: usize, m: usize, mode: SampleMode, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidSampling("m must be at least 1".into()));
        }
        let mut rng = seeded(seed);
        let indices = match mode {
            SampleMode::WithReplacement => (0..m).map(|_| rng.random_range(0..n)).collect(),
            SampleMode::WithoutReplacement => {
                if m > n {
                    return Err(Error::InvalidSampling(format!(
                        "cannot draw {m} distinct indices from {n}"
                    )));
                }
                index::sample(&mut rng, n, m).into_vec()
            }
        };
        Self::from_indices(n, indices, mode)
    }

    /// Every index exactly once.
    pub fn full(n: usize) -> Self {
        Self::from_indices(n, (0..n).collect(), SampleMode::WithoutReplacement)
            .expect("nonempty range")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Per-index counts `c_a`.
    pub fn multiplicity(&self) -> &[u32] {
        &self.multiplicity
    }

    /// Sampling ratio `m / n`.
    pub fn ratio(&self) -> f64 {
        self.m() as f64 / self.n as f64
    }

    /// Sorted distinct observed indices.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&a| self.multiplicity[a] > 0).collect()
    }

    /// `P_Omega(z)`: entry `a` scaled by its multiplicity.
    pub fn project(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("signal", self.n, z.len())?;
        Ok(z.iter()
            .zip(&self.multiplicity)
            .map(|(v, &c)| v * c as f64)
            .collect())
    }

    /// Zeroes entries outside the support without applying multiplicities.
    pub fn mask(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("signal", self.n, z.len())?;
        Ok(z.iter()
            .zip(&self.multiplicity)
            .map(|(v, &c)| if c > 0 { *v } else { Complex64::default() })
            .collect())
    }

    pub fn to_csv_line(&self) -> String {
        self.indices
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_csv_line(n: usize, line: &str, mode: SampleMode) -> Result<Self> {
        let indices = line
            .trim()
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidSampling(format!("bad index {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(n, indices, mode)
    }
}
