//! Distributional comparison of real and synthetic path ensembles: kNN KL
//! divergence, moment curves, positivity, and the repeated-experiment harness.

mod experiment;
mod knn;

pub use experiment::{kl_experiment, KlEstimate, KlOrientation, KlSettings, MetricReport, SimulatorSource};
pub use knn::{knn_kl, KnnKl, BRUTE_FORCE_MAX, DISTANCE_FLOOR};

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{PathSet, TimeGrid};

/// Flatten each path into one row of length `N_T * d`, time-major, dropping
/// the deterministic first observation.
pub fn paths_to_vectors(paths: &PathSet) -> Array2<f64> {
    let d = paths.dim();
    let width = paths.grid().n_steps * d;
    let mut out = Array2::zeros((paths.n_paths(), width));
    for (mut row, path) in out.rows_mut().into_iter().zip(paths.paths()) {
        row.as_slice_mut().unwrap().copy_from_slice(&path[d..]);
    }
    out
}

/// Per grid point and coordinate sample mean and unbiased std, stored
/// `(N_T + 1) x d` row-major, plus the fraction of strictly positive entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    pub dim: usize,
    pub mean_curve: Vec<f64>,
    pub std_curve: Vec<f64>,
    pub positivity_fraction: f64,
}

impl PathStatistics {
    pub fn mean(&self, n: usize, j: usize) -> f64 {
        self.mean_curve[n * self.dim + j]
    }

    pub fn std(&self, n: usize, j: usize) -> f64 {
        self.std_curve[n * self.dim + j]
    }

    pub fn n_points(&self) -> usize {
        self.mean_curve.len() / self.dim
    }
}

pub fn path_statistics(paths: &PathSet) -> Result<PathStatistics> {
    let h = paths.n_paths();
    if h < 2 {
        return Err(Error::invalid(format!("path statistics need at least 2 paths, got {h}")));
    }
    let width = paths.grid().n_points() * paths.dim();
    let mut mean = vec![0.0; width];
    let mut positive = 0usize;
    for path in paths.paths() {
        for (m, v) in mean.iter_mut().zip(path) {
            *m += v;
            positive += (*v > 0.0) as usize;
        }
    }
    mean.iter_mut().for_each(|m| *m /= h as f64);
    let mut var = vec![0.0; width];
    for path in paths.paths() {
        for ((s, m), v) in var.iter_mut().zip(&mean).zip(path) {
            *s += (v - m) * (v - m);
        }
    }
    Ok(PathStatistics {
        dim: paths.dim(),
        mean_curve: mean,
        std_curve: var.into_iter().map(|s| (s / (h - 1) as f64).sqrt()).collect(),
        positivity_fraction: positive as f64 / (h * width) as f64,
    })
}

/// Moment curves of two ensembles side by side, one row per `(t, dim)`.
pub fn write_moments_csv<W: Write>(out: W, grid: &TimeGrid, real: &PathStatistics, synth: &PathStatistics) -> Result<()> {
    if real.dim != synth.dim || real.mean_curve.len() != synth.mean_curve.len() || real.n_points() != grid.n_points() {
        return Err(Error::invalid("moment curves do not share a grid and dimension"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "dim", "real_mean", "synth_mean", "real_std", "synth_std"])?;
    for n in 0..grid.n_points() {
        for j in 0..real.dim {
            w.write_record([
                grid.time(n).to_string(),
                j.to_string(),
                real.mean(n, j).to_string(),
                synth.mean(n, j).to_string(),
                real.std(n, j).to_string(),
                synth.std(n, j).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{random_gbm_spec, simulate_gbm};
    use proptest::prelude::*;

    #[test]
    fn vector_shapes() {
        let grid = TimeGrid::new(0.0, 0.05, 20).unwrap();
        let p = PathSet::from_rows(grid, 1, vec![1.0; 100 * 21]).unwrap();
        assert_eq!(paths_to_vectors(&p).dim(), (100, 20));
        let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let p = PathSet::from_rows(grid, 100, vec![1.0; 3 * 8 * 100]).unwrap();
        assert_eq!(paths_to_vectors(&p).dim(), (3, 700));
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let p = PathSet::from_rows(grid, 1, vec![0.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(paths_to_vectors(&p).into_raw_vec_and_offset().0, vec![1.0, 2.0]);
    }

    #[test]
    fn time_major_flattening() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let p = PathSet::from_rows(grid, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(paths_to_vectors(&p).row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_paths() {
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let s = path_statistics(&PathSet::from_rows(grid, 1, vec![1.0; 4 * 5]).unwrap()).unwrap();
        assert!(s.mean_curve.iter().all(|&m| m == 1.0));
        assert!(s.std_curve.iter().all(|&v| v == 0.0));
        assert_eq!(s.positivity_fraction, 1.0);
    }

    #[test]
    fn positivity_counts_entries() {
        let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let mut data = vec![1.0; 1000 * 8];
        data[5 * 8 + 3] = -0.5;
        let s = path_statistics(&PathSet::from_rows(grid, 1, data).unwrap()).unwrap();
        assert_eq!(s.positivity_fraction, 1.0 - 1.0 / 8000.0);
    }

    #[test]
    fn gbm_mean_curve_matches_closed_form() {
        let spec = random_gbm_spec(3, 4).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let s = path_statistics(&simulate_gbm(&spec, &grid, 100_000, 2).unwrap()).unwrap();
        for n in 0..8 {
            for j in 0..3 {
                let m = spec.mean(j, grid.time(n));
                assert!((s.mean(n, j) / m - 1.0).abs() < 0.01, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn moments_csv_layout() {
        let grid = TimeGrid::new(0.0, 0.5, 1).unwrap();
        let p = PathSet::from_rows(grid, 1, vec![1.0, 2.0, 1.0, 4.0]).unwrap();
        let s = path_statistics(&p).unwrap();
        let mut buf = Vec::new();
        write_moments_csv(&mut buf, &grid, &s, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,dim,real_mean,synth_mean,real_std,synth_std");
        assert_eq!(lines[2], "0.5,0,3,3,1.4142135623730951,1.4142135623730951");
    }

    proptest! {
        #[test]
        fn statistics_ignore_path_order(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 2..30)) {
            let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
            let n = rows.len();
            let fixed: Vec<Vec<f64>> = rows.iter().map(|r| { let mut r = r.clone(); r[0] = 0.5; r }).collect();
            let a = path_statistics(&PathSet::from_rows(grid, 1, fixed.concat()).unwrap()).unwrap();
            let mut rev = fixed.clone();
            rev.reverse();
            let b = path_statistics(&PathSet::from_rows(grid, 1, rev.concat()).unwrap()).unwrap();
            prop_assert_eq!(a.positivity_fraction, b.positivity_fraction);
            for (x, y) in a.mean_curve.iter().zip(&b.mean_curve).chain(a.std_curve.iter().zip(&b.std_curve)) {
                prop_assert!((x - y).abs() <= 1e-12, "{} {} (n = {})", x, y, n);
            }
        }
    }
}
