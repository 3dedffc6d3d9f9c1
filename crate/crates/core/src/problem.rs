//! JSON exchange format for single reconstructions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::hankel::HankelShape;
use crate::sampling::SampleSet;
use crate::signal::rmse;
use crate::solver::{solve, IterationRecord, PgdConfig, SolveResult, Termination};

/// A reconstruction request. `observed` holds one `[re, im]` pair per grid
/// point in row-major order; entries off the sample set are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub pencil: Option<Vec<usize>>,
    pub samples: SampleSet,
    pub observed: Vec<[f64; 2]>,
    #[serde(default)]
    pub config: PgdConfig,
    /// Ground truth, when known; enables the RMSE field of the answer.
    #[serde(default)]
    pub truth: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub x_rec: Vec<[f64; 2]>,
    pub iterations: usize,
    pub termination: Termination,
    pub final_objective: Option<f64>,
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub history: Option<Vec<IterationRecord>>,
}

pub fn to_pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn from_pairs(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

impl ProblemInstance {
    pub fn shape(&self) -> Result<HankelShape> {
        HankelShape::new(&self.dims, self.pencil.as_deref())
    }

    pub fn solve(&self) -> Result<(SolveResult, SolveReport)> {
        let shape = self.shape()?;
        check_len("observed values", shape.len(), self.observed.len())?;
        check_len("sample universe", shape.len(), self.samples.n())?;
        let x_obs = self.samples.project(&from_pairs(&self.observed))?;
        let result = solve(&shape, &self.samples, &x_obs, &self.config, None)?;
        let err = match &self.truth {
            Some(t) => {
                check_len("truth", shape.len(), t.len())?;
                Some(rmse(&result.x_rec, &from_pairs(t))?)
            }
            None => None,
        };
        let report = SolveReport {
            x_rec: to_pairs(&result.x_rec),
            iterations: result.iterations,
            termination: result.termination,
            final_objective: result.history.last().map(|h| h.objective),
            rmse: err,
            history: Some(result.history.clone()),
        };
        Ok((result, report))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
