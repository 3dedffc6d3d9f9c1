//! Ground-truth spectrally sparse signals, measurement noise and error metrics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{check_len, Error, Result};
use crate::hankel::{d_scale, g_apply, unravel, Direction, HankelShape};
use crate::rng::complex_normal;
use crate::sampling::SampleSet;

/// Success threshold on the relative reconstruction error.
pub const SUCCESS_RMSE: f64 = 1e-3;

const MAX_SEPARATION_ATTEMPTS: usize = 100_000;

/// Sum of `r` (possibly damped) complex exponentials on a `d`-dimensional grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub d: usize,
    /// `freqs[k][axis]` in `[0, 1)`.
    pub freqs: Vec<Vec<f64>>,
    /// `taus[k][axis] >= 0`.
    pub taus: Vec<Vec<f64>>,
    pub coeffs: Vec<Complex64>,
}

impl SpectralModel {
    pub fn new(freqs: Vec<Vec<f64>>, taus: Vec<Vec<f64>>, coeffs: Vec<Complex64>) -> Result<Self> {
        let r = coeffs.len();
        if r == 0 {
            return Err(Error::Validation("model needs at least one component".into()));
        }
        check_len("frequency tuples", r, freqs.len())?;
        check_len("damping tuples", r, taus.len())?;
        let d = freqs[0].len();
        if d == 0 {
            return Err(Error::Validation("frequency tuples must be nonempty".into()));
        }
        for (f, t) in freqs.iter().zip(&taus) {
            check_len("frequency tuple", d, f.len())?;
            check_len("damping tuple", d, t.len())?;
            if f.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Err(Error::Validation(format!("frequency tuple {f:?} outside [0, 1)")));
            }
            if t.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Validation(format!("damping tuple {t:?} has negative entries")));
            }
        }
        Ok(Self { d, freqs, taus, coeffs })
    }

    /// One-dimensional undamped model.
    pub fn undamped(freqs: Vec<f64>, coeffs: Vec<Complex64>) -> Self {
        let taus = vec![vec![0.0]; freqs.len()];
        Self::new(freqs.into_iter().map(|f| vec![f]).collect(), taus, coeffs).expect("valid 1D model")
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Union of the components of two models.
    pub fn merge(&self, other: &SpectralModel) -> Result<Self> {
        check_len("model dimension", self.d, other.d)?;
        let mut out = self.clone();
        out.freqs.extend(other.freqs.iter().cloned());
        out.taus.extend(other.taus.iter().cloned());
        out.coeffs.extend(other.coeffs.iter().copied());
        Ok(out)
    }
}

/// Samples the model at every integer grid point of `dims` (row-major).
pub fn synthesize(model: &SpectralModel, dims: &[usize]) -> Result<Vec<Complex64>> {
    check_len("model dimension", model.d, dims.len())?;
    let n: usize = dims.iter().product();
    // Per component and axis, the powers of the pole.
    let powers: Vec<Vec<Vec<Complex64>>> = model
        .freqs
        .iter()
        .zip(&model.taus)
        .map(|(f, t)| {
            dims.iter()
                .enumerate()
                .map(|(ax, &len)| {
                    (0..len)
                        .map(|a| {
                            let a = a as f64;
                            Complex64::from_polar((-t[ax] * a).exp(), 2.0 * PI * f[ax] * a)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok((0..n)
        .map(|flat| {
            let idx = unravel(flat, dims);
            model
                .coeffs
                .iter()
                .zip(&powers)
                .map(|(c, p)| idx.iter().enumerate().fold(*c, |acc, (ax, &a)| acc * p[ax][a]))
                .sum()
        })
        .collect())
}

/// Circular distance on `[0, 1)`.
pub fn wraparound_dist(f: f64, g: f64) -> f64 {
    let d = (f - g).abs();
    d.min(1.0 - d)
}

/// Options for [`random_model`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Minimum pairwise wrap-around distance per axis.
    pub separation: Option<Vec<f64>>,
    /// Per-axis `[lo, hi]` range from which `1 / tau` is drawn uniformly.
    pub damping: Option<Vec<(f64, f64)>>,
}

/// Random model: uniform frequencies, uniform phases and amplitudes `1 + 10^(0.5 c)`, `c ~ U[0, 1]`.
pub fn random_model<R: Rng + ?Sized>(d: usize, r: usize, opts: &ModelOptions, rng: &mut R) -> Result<SpectralModel> {
    if r == 0 || d == 0 {
        return Err(Error::Validation("model order and dimension must be positive".into()));
    }
    if let Some(sep) = &opts.separation {
        check_len("separation axes", d, sep.len())?;
        if sep.iter().any(|&delta| r as f64 * delta >= 1.0) {
            return Err(Error::InfeasibleSeparation { attempts: 0 });
        }
    }
    if let Some(damp) = &opts.damping {
        check_len("damping axes", d, damp.len())?;
        if damp.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo)) {
            return Err(Error::Validation(format!("invalid damping ranges {damp:?}")));
        }
    }

    let freqs = draw_frequencies(d, r, opts.separation.as_deref(), rng)?;
    let taus: Vec<Vec<f64>> = (0..r)
        .map(|_| match &opts.damping {
            Some(ranges) => ranges.iter().map(|&(lo, hi)| 1.0 / rng.random_range(lo..=hi)).collect(),
            None => vec![0.0; d],
        })
        .collect();
    let coeffs: Vec<Complex64> = (0..r)
        .map(|_| {
            let c: f64 = rng.random_range(0.0..=1.0);
            let amp = 1.0 + 10f64.powf(0.5 * c);
            Complex64::from_polar(amp, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    SpectralModel::new(freqs, taus, coeffs)
}

fn draw_frequencies<R: Rng + ?Sized>(
    d: usize,
    r: usize,
    separation: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let attempts = if separation.is_some() { MAX_SEPARATION_ATTEMPTS } else { 1 };
    for _ in 0..attempts {
        let freqs: Vec<Vec<f64>> = (0..r).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let Some(sep) = separation else {
            return Ok(freqs);
        };
        let ok = (0..d).all(|ax| {
            (0..r).all(|i| (i + 1..r).all(|j| wraparound_dist(freqs[i][ax], freqs[j][ax]) >= sep[ax]))
        });
        if ok {
            return Ok(freqs);
        }
    }
    Err(Error::InfeasibleSeparation { attempts })
}

/// Adds `theta ||P_Omega(x)|| w / ||w||` with `w` standard complex Gaussian on the observed support.
pub fn add_noise<R: Rng + ?Sized>(
    observed: &[Complex64],
    samples: &SampleSet,
    theta: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    check_len("observed signal", samples.n(), observed.len())?;
    if !(theta >= 0.0) {
        return Err(Error::Validation(format!("noise level must be nonnegative, got {theta}")));
    }
    if theta == 0.0 {
        return Ok(observed.to_vec());
    }
    let support = samples.support();
    let w: Vec<Complex64> = support.iter().map(|_| complex_normal(rng)).collect();
    let w_norm = w.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let x_norm = samples
        .project(observed)?
        .iter()
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let scale = theta * x_norm / w_norm;
    let mut out = observed.to_vec();
    for (&a, e) in support.iter().zip(&w) {
        out[a] += e * scale;
    }
    Ok(out)
}

/// Relative error `||x_rec - x|| / ||x||`.
pub fn rmse(x_rec: &[Complex64], x_true: &[Complex64]) -> Result<f64> {
    check_len("reconstruction", x_true.len(), x_rec.len())?;
    let den: f64 = x_true.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("true signal is zero"));
    }
    let num: f64 = x_rec
        .iter()
        .zip(x_true)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

pub fn success(x_rec: &[Complex64], x_true: &[Complex64]) -> Result<bool> {
    // Slack of a few ulps so that an error of exactly 1e-3 counts.
    Ok(rmse(x_rec, x_true)? <= SUCCESS_RMSE * (1.0 + 1e-12))
}

/// Output signal-to-noise ratio in dB, `-20 log10(rmse)`.
pub fn snr_db(rel_error: f64) -> f64 {
    -20.0 * rel_error.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub mu0: f64,
    pub sigma1: f64,
    pub sigma_r: f64,
    pub kappa: f64,
    /// `sigma_r` is numerically zero relative to `sigma_1`.
    pub rank_deficient: bool,
}

/// Incoherence and conditioning of the lifted true signal, from a dense SVD.
pub fn coherence_report(model: &SpectralModel, shape: &HankelShape) -> Result<CoherenceReport> {
    let x = synthesize(model, shape.dims())?;
    let y = d_scale(shape, &x, Direction::Forward)?;
    let dense = g_apply(shape, &y)?.to_dense()?;
    let r = model.order();
    let max_rank = shape.rows().min(shape.cols());
    if r > max_rank {
        return Err(Error::Validation(format!("model order {r} exceeds lifted rank limit {max_rank}")));
    }
    let svd = dense::svd(&dense)?;
    let u = svd.u.columns(0, r);
    let v = svd.v.columns(0, r);
    let max_row = |m: nalgebra::DMatrixView<Complex64>| m.row_iter().map(|row| row.norm_squared()).fold(0.0, f64::max);
    let n = shape.len() as f64;
    let mu0 = n / (shape.c_s() * r as f64) * max_row(u).max(max_row(v));
    let sigma1 = svd.s[0];
    let sigma_r = svd.s[r - 1];
    Ok(CoherenceReport {
        mu0,
        sigma1,
        sigma_r,
        kappa: sigma1 / sigma_r,
        rank_deficient: sigma_r <= 1e-10 * sigma1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::sampling::SampleMode;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn quarter_turn() {
        let m = SpectralModel::undamped(vec![0.25], vec![c(1.0, 0.0)]);
        let x = synthesize(&m, &[4]).unwrap();
        for (v, e) in x.iter().zip([c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)]) {
            assert!((v - e).norm() < 1e-15);
        }
    }

    #[test]
    fn pure_decay() {
        let m = SpectralModel::new(vec![vec![0.0]], vec![vec![2f64.ln()]], vec![c(1.0, 0.0)]).unwrap();
        let x = synthesize(&m, &[5]).unwrap();
        for (a, v) in x.iter().enumerate() {
            assert!((v.re - 0.5f64.powi(a as i32)).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn constant_two_dim() {
        let m = SpectralModel::new(vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]], vec![c(0.3, -2.0)]).unwrap();
        let x = synthesize(&m, &[3, 4]).unwrap();
        assert_eq!(x.len(), 12);
        assert!(x.iter().all(|v| (v - c(0.3, -2.0)).norm() < 1e-15));
        assert!(synthesize(&m, &[3]).is_err());
    }

    #[test]
    fn synthesis_is_additive() {
        let mut rng = seeded(4);
        let a = random_model(2, 2, &ModelOptions::default(), &mut rng).unwrap();
        let b = random_model(2, 3, &ModelOptions::default(), &mut rng).unwrap();
        let dims = [6, 7];
        let xa = synthesize(&a, &dims).unwrap();
        let xb = synthesize(&b, &dims).unwrap();
        let xab = synthesize(&a.merge(&b).unwrap(), &dims).unwrap();
        for ((p, q), s) in xa.iter().zip(&xb).zip(&xab) {
            assert!((p + q - s).norm() < 1e-13);
        }
    }

    #[test]
    fn undamped_bounded_by_coefficients() {
        let mut rng = seeded(11);
        let m = random_model(1, 5, &ModelOptions::default(), &mut rng).unwrap();
        let bound: f64 = m.coeffs.iter().map(|v| v.norm()).sum();
        assert!(synthesize(&m, &[200]).unwrap().iter().all(|v| v.norm() <= bound + 1e-12));
    }

    #[test]
    fn wraparound_examples() {
        assert!((wraparound_dist(0.1, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(wraparound_dist(0.42, 0.42), 0.0);
        assert_eq!(wraparound_dist(0.0, 0.5), 0.5);
    }

    #[test]
    fn separated_draws_respect_spacing() {
        for seed in 0..50 {
            let mut rng = seeded(seed);
            let opts = ModelOptions {
                separation: Some(vec![0.4]),
                damping: None,
            };
            let m = random_model(1, 2, &opts, &mut rng).unwrap();
            assert!(wraparound_dist(m.freqs[0][0], m.freqs[1][0]) >= 0.4);
        }
    }

    #[test]
    fn infeasible_separation() {
        let mut rng = seeded(0);
        let opts = ModelOptions {
            separation: Some(vec![0.3]),
            damping: None,
        };
        assert!(matches!(
            random_model(1, 4, &opts, &mut rng),
            Err(Error::InfeasibleSeparation { .. })
        ));
    }

    #[test]
    fn amplitude_law_and_determinism() {
        let hi = 1.0 + 10f64.sqrt();
        for seed in 0..20 {
            let m = random_model(1, 6, &ModelOptions::default(), &mut seeded(seed)).unwrap();
            assert!(m.coeffs.iter().all(|v| v.norm() >= 2.0 - 1e-12 && v.norm() <= hi + 1e-12));
            assert_eq!(m, random_model(1, 6, &ModelOptions::default(), &mut seeded(seed)).unwrap());
        }
    }

    #[test]
    fn damping_ranges() {
        let opts = ModelOptions {
            separation: None,
            damping: Some(vec![(8.0, 16.0), (16.0, 32.0)]),
        };
        let m = random_model(2, 4, &opts, &mut seeded(2)).unwrap();
        for t in &m.taus {
            assert!((8.0..=16.0).contains(&(1.0 / t[0])));
            assert!((16.0..=32.0).contains(&(1.0 / t[1])));
        }
    }

    #[test]
    fn noise_has_exact_level() {
        let m = random_model(1, 3, &ModelOptions::default(), &mut seeded(1)).unwrap();
        let x = synthesize(&m, &[64]).unwrap();
        let samples = SampleSet::draw(64, 30, SampleMode::WithoutReplacement, 3).unwrap();
        let obs = samples.mask(&x).unwrap();
        assert_eq!(add_noise(&obs, &samples, 0.0, &mut seeded(5)).unwrap(), obs);
        let base = obs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for theta in [1e-3, 0.1, 1.0] {
            let noisy = add_noise(&obs, &samples, theta, &mut seeded(5)).unwrap();
            let e: f64 = noisy.iter().zip(&obs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!((e / base - theta).abs() <= 1e-14 * theta.max(1.0));
            // Unobserved entries stay untouched.
            let support = samples.support();
            for a in 0..64 {
                if !support.contains(&a) {
                    assert_eq!(noisy[a], obs[a]);
                }
            }
        }
        assert!((snr_db(1.0) - 0.0).abs() < 1e-15);
        assert!((snr_db(1e-3) - 60.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_and_success() {
        let x: Vec<Complex64> = (0..10).map(|k| c(k as f64 + 1.0, -(k as f64))).collect();
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert!(success(&x, &x).unwrap());
        let scaled: Vec<Complex64> = x.iter().map(|v| v * 1.001).collect();
        assert!((rmse(&scaled, &x).unwrap() - 1e-3).abs() < 1e-14);
        assert!(success(&scaled, &x).unwrap());
        let zeros = vec![c(0.0, 0.0); 10];
        assert_eq!(rmse(&zeros, &x).unwrap(), 1.0);
        assert!(!success(&zeros, &x).unwrap());
        assert!(rmse(&x, &zeros).is_err());
    }

    #[test]
    fn single_tone_coherence() {
        let shape = HankelShape::new(&[63], None).unwrap();
        let m = SpectralModel::undamped(vec![0.3], vec![c(2.0, 1.0)]);
        let rep = coherence_report(&m, &shape).unwrap();
        let (n1, n2) = (shape.rows() as f64, shape.cols() as f64);
        let expect = 63.0 / shape.c_s() / n1.min(n2);
        assert!((rep.mu0 - expect).abs() < 1e-10);
        assert!(rep.mu0 <= 1.0 + 1e-12);
        assert!((rep.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_tones_flagged() {
        let shape = HankelShape::new(&[31], None).unwrap();
        let m = SpectralModel::undamped(vec![0.2, 0.2], vec![c(1.0, 0.0), c(0.5, 0.5)]);
        let rep = coherence_report(&m, &shape).unwrap();
        assert!(rep.rank_deficient);
    }

    #[test]
    fn separated_three_tone_coherence() {
        let shape = HankelShape::new(&[63], None).unwrap();
        let mut small = 0;
        for seed in 0..20 {
            let opts = ModelOptions {
                separation: Some(vec![1.5 / 63.0]),
                damping: None,
            };
            let m = random_model(1, 3, &opts, &mut seeded(seed)).unwrap();
            let rep = coherence_report(&m, &shape).unwrap();
            assert!(rep.kappa.is_finite() && !rep.rank_deficient);
            if rep.mu0 <= 2.0 {
                small += 1;
            }
        }
        assert!(small >= 15, "only {small}/20 models with mu0 <= 2");
    }
}
