use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PathSet, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, label, substream};

const CHOLESKY_JITTER: f64 = 1e-8;

/// Correlated multivariate geometric Brownian motion
/// `dX_j = drift_j X_j dt + vol_j X_j dW_j` with `corr(W_j, W_l) = corr[j][l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    pub drift: Vec<f64>,
    pub vol: Vec<f64>,
    /// Row-major `d x d` correlation matrix.
    pub corr: Vec<f64>,
    pub x0: Vec<f64>,
}

impl GbmSpec {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Uncorrelated spec with identical coordinates.
    pub fn independent(d: usize, drift: f64, vol: f64, x0: f64) -> Self {
        let mut corr = vec![0.0; d * d];
        for j in 0..d {
            corr[j * d + j] = 1.0;
        }
        GbmSpec { drift: vec![drift; d], vol: vec![vol; d], corr, x0: vec![x0; d] }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("GBM dimension must be at least 1"));
        }
        if self.drift.len() != d || self.vol.len() != d || self.corr.len() != d * d {
            return Err(Error::invalid("GBM parameter lengths disagree"));
        }
        if self.vol.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("GBM volatilities must be strictly positive"));
        }
        if self.x0.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("GBM initial state must be strictly positive"));
        }
        if self.drift.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("GBM drift must be finite"));
        }
        for j in 0..d {
            if (self.corr[j * d + j] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("correlation matrix needs a unit diagonal"));
            }
            for l in 0..j {
                let (a, b) = (self.corr[j * d + l], self.corr[l * d + j]);
                if (a - b).abs() > 1e-12 || a.abs() > 1.0 + 1e-12 {
                    return Err(Error::invalid("correlation matrix must be symmetric with entries in [-1, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Closed-form `E[X_j(t)] = x_j(0) exp(drift_j t)`.
    pub fn mean(&self, j: usize, t: f64) -> f64 {
        self.x0[j] * (self.drift[j] * t).exp()
    }

    /// Closed-form standard deviation of `X_j(t)`.
    pub fn std(&self, j: usize, t: f64) -> f64 {
        let s2 = self.vol[j] * self.vol[j];
        self.mean(j, t) * ((s2 * t).exp() - 1.0).sqrt()
    }
}

/// Lower-triangular Cholesky factor of a row-major symmetric matrix, or
/// `None` if a pivot is not strictly positive.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn correlation_factor(corr: &[f64], d: usize) -> Result<Vec<f64>> {
    if let Some(l) = cholesky(corr, d) {
        return Ok(l);
    }
    let mut jittered = corr.to_vec();
    for j in 0..d {
        jittered[j * d + j] += CHOLESKY_JITTER;
    }
    cholesky(&jittered, d)
        .ok_or_else(|| Error::invalid("correlation matrix is not positive semidefinite even after jitter"))
}

/// Exact log-normal stepping with Cholesky-correlated shocks.
pub fn simulate_gbm(spec: &GbmSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    spec.validate()?;
    grid.validate()?;
    let d = spec.dim();
    let chol = correlation_factor(&spec.corr, d)?;
    let dt = grid.dt;
    let log_drift: Vec<f64> = (0..d).map(|j| (spec.drift[j] - 0.5 * spec.vol[j] * spec.vol[j]) * dt).collect();
    let shock_scale: Vec<f64> = spec.vol.iter().map(|s| s * dt.sqrt()).collect();
    let stride = grid.n_points() * d;
    let mut data = vec![0.0; n_paths * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(i, path)| {
        let mut rng = substream(seed, i as u64);
        let mut z = vec![0.0; d];
        path[..d].copy_from_slice(&spec.x0);
        for n in 1..grid.n_points() {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let (prev, cur) = path[(n - 1) * d..(n + 1) * d].split_at_mut(d);
            for j in 0..d {
                let w: f64 = chol[j * d..j * d + j + 1].iter().zip(&z).map(|(l, z)| l * z).sum();
                cur[j] = prev[j] * (log_drift[j] + shock_scale[j] * w).exp();
            }
        }
    });
    PathSet::new(*grid, d, spec.x0.clone(), data)
}

/// Random `d`-dimensional GBM: drifts in `[-0.05, 0.10]`, volatilities in
/// `[0.1, 0.4]`, unit initial state and a normalized Gram-matrix correlation.
pub fn random_gbm_spec(d: usize, seed: u64) -> Result<GbmSpec> {
    if d == 0 {
        return Err(Error::invalid("GBM dimension must be at least 1"));
    }
    let mut rng = substream(derive_seed(seed, label::GBM_SPEC), 0);
    let drift: Vec<f64> = (0..d).map(|_| rng.random_range(-0.05..=0.10)).collect();
    let vol: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..=0.4)).collect();
    let a: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    let mut gram = vec![0.0; d * d];
    for j in 0..d {
        for l in 0..=j {
            let g: f64 = (0..d).map(|k| a[j * d + k] * a[l * d + k]).sum();
            gram[j * d + l] = g;
            gram[l * d + j] = g;
        }
    }
    let diag: Vec<f64> = (0..d).map(|j| gram[j * d + j].sqrt()).collect();
    let mut corr = vec![0.0; d * d];
    for j in 0..d {
        for l in 0..d {
            corr[j * d + l] = if j == l { 1.0 } else { gram[j * d + l] / (diag[j] * diag[l]) };
        }
    }
    Ok(GbmSpec { drift, vol, corr, x0: vec![1.0; d] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_asset_has_unit_correlation() {
        let spec = random_gbm_spec(1, 4).unwrap();
        assert_eq!(spec.corr, vec![1.0]);
        assert_eq!(spec.x0, vec![1.0]);
    }

    #[test]
    fn random_spec_is_deterministic_and_in_range() {
        let a = random_gbm_spec(10, 9).unwrap();
        let b = random_gbm_spec(10, 9).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.drift.iter().all(|m| (-0.05..=0.10).contains(m)));
        assert!(a.vol.iter().all(|s| (0.1..=0.4).contains(s)));
        assert_ne!(a, random_gbm_spec(10, 10).unwrap());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert_eq!(l[1], 0.0);
        let rebuilt = [l[0] * l[0], l[0] * l[2], l[2] * l[0], l[2] * l[2] + l[3] * l[3]];
        for (x, y) in rebuilt.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn perfectly_correlated_needs_jitter() {
        let spec = GbmSpec {
            drift: vec![0.0; 2],
            vol: vec![0.2; 2],
            corr: vec![1.0, 1.0, 1.0, 1.0],
            x0: vec![1.0; 2],
        };
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let p = simulate_gbm(&spec, &grid, 5, 0).unwrap();
        for i in 0..5 {
            let s = p.state(i, 2);
            assert!((s[0] - s[1]).abs() < 1e-3);
        }
    }

    #[test]
    fn non_psd_correlation_is_rejected() {
        let spec = GbmSpec {
            drift: vec![0.0; 3],
            vol: vec![0.2; 3],
            corr: vec![1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0],
            x0: vec![1.0; 3],
        };
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        assert!(simulate_gbm(&spec, &grid, 1, 0).is_err());
    }

    #[test]
    fn vanishing_volatility_grows_exponentially() {
        let mut spec = random_gbm_spec(3, 1).unwrap();
        spec.vol = vec![1e-15; 3];
        let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let p = simulate_gbm(&spec, &grid, 2, 5).unwrap();
        for n in 0..=7 {
            for j in 0..3 {
                let expected = spec.x0[j] * (spec.drift[j] * n as f64).exp();
                assert!(((p.state(1, n)[j] - expected) / expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empirical_log_return_correlation() {
        let spec = GbmSpec {
            drift: vec![0.05, 0.02],
            vol: vec![0.2, 0.3],
            corr: vec![1.0, 0.5, 0.5, 1.0],
            x0: vec![1.0, 2.0],
        };
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let p = simulate_gbm(&spec, &grid, 100_000, 21).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = (0..p.n_paths())
            .map(|i| {
                let s = p.state(i, 1);
                ((s[0] / 1.0).ln(), (s[1] / 2.0).ln())
            })
            .unzip();
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        let rho = cov / (va * vb).sqrt();
        assert!((rho - 0.5).abs() < 0.02, "rho {rho}");
    }
}
