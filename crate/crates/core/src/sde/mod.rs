//! Ground-truth SDE simulators and the `PathSet` container shared by every
//! other module.

mod euler;
mod gbm;
mod io;
mod ou;

pub use euler::{euler_maruyama, DiffusionFn, DriftFn, GenericSdeSpec};
pub use gbm::{cholesky, random_gbm_spec, simulate_gbm, GbmSpec};
pub use ou::{simulate_ou, OuSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform observation grid `t0 + n * dt`, `n = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let grid = TimeGrid { t0, dt, n_steps };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid on `[0, horizon]` with `n_steps` equal steps.
    pub fn over(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Self::new(0.0, horizon / n_steps as f64, n_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if !self.t0.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(())
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Number of recorded points, `n_steps + 1`.
    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }
}

/// `H` sample paths observed on a shared grid, stored dense path-major as
/// `H x (n_steps + 1) x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    grid: TimeGrid,
    dim: usize,
    initial_state: Vec<f64>,
    data: Vec<f64>,
}

impl PathSet {
    /// Build from a flat buffer. Every path must start at `initial_state` and
    /// every entry must be finite.
    pub fn new(grid: TimeGrid, dim: usize, initial_state: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if initial_state.len() != dim {
            return Err(Error::invalid(format!(
                "initial state has {} coordinates, expected {dim}",
                initial_state.len()
            )));
        }
        let stride = grid.n_points() * dim;
        if !data.len().is_multiple_of(stride) {
            return Err(Error::invalid(format!(
                "buffer of {} values is not a whole number of paths of {stride}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite entry in path {}", pos / stride)));
        }
        for (i, path) in data.chunks_exact(stride).enumerate() {
            if path[..dim] != initial_state[..] {
                return Err(Error::invalid(format!("path {i} does not start at the initial state")));
            }
        }
        Ok(PathSet { grid, dim, initial_state, data })
    }

    /// Paths whose first row defines the initial state. Fails on an empty list.
    pub fn from_rows(grid: TimeGrid, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() < dim {
            return Err(Error::invalid("cannot infer the initial state of an empty path set"));
        }
        let x0 = data[..dim].to_vec();
        Self::new(grid, dim, x0, data)
    }

    pub(crate) fn from_parts_unchecked(grid: TimeGrid, dim: usize, initial_state: Vec<f64>, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % (grid.n_points() * dim), 0);
        PathSet { grid, dim, initial_state, data }
    }

    pub fn empty(grid: TimeGrid, initial_state: Vec<f64>) -> Result<Self> {
        let dim = initial_state.len();
        Self::new(grid, dim, initial_state, Vec::new())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.data.len() / self.path_stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn path_stride(&self) -> usize {
        self.grid.n_points() * self.dim
    }

    /// Full path `i` as `(n_steps + 1) * dim` values, time-major.
    pub fn path(&self, i: usize) -> &[f64] {
        let s = self.path_stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.path_stride())
    }

    /// State of path `i` at grid point `n`.
    pub fn state(&self, i: usize, n: usize) -> &[f64] {
        let off = i * self.path_stride() + n * self.dim;
        &self.data[off..off + self.dim]
    }

    /// Keep only the paths at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<PathSet> {
        let h = self.n_paths();
        let mut data = Vec::with_capacity(indices.len() * self.path_stride());
        for &i in indices {
            if i >= h {
                return Err(Error::Index { index: i, len: h });
            }
            data.extend_from_slice(self.path(i));
        }
        Ok(PathSet::from_parts_unchecked(self.grid, self.dim, self.initial_state.clone(), data))
    }

    /// Append the paths of `other`; grids, dimensions and initial states must match.
    pub fn concat(&self, other: &PathSet) -> Result<PathSet> {
        if self.grid != other.grid || self.dim != other.dim || self.initial_state != other.initial_state {
            return Err(Error::invalid("cannot concatenate path sets with different grids or initial states"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(PathSet::from_parts_unchecked(self.grid, self.dim, self.initial_state.clone(), data))
    }
}

/// Training pairs `(x(t_n), x(t_{n+1}) - x(t_n))` for one slot, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementPairs {
    pub dim: usize,
    pub states: Vec<f64>,
    pub increments: Vec<f64>,
}

impl IncrementPairs {
    pub fn new(dim: usize, states: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.len() != increments.len() || !states.len().is_multiple_of(dim) {
            return Err(Error::invalid("state and increment buffers disagree in shape"));
        }
        Ok(IncrementPairs { dim, states, increments })
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.states.chunks_exact(self.dim).zip(self.increments.chunks_exact(self.dim))
    }

    /// Concatenate pairs from several slots (used by the shared-network mode).
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a IncrementPairs>) -> Result<Self> {
        let mut it = parts.into_iter().peekable();
        let dim = it.peek().map(|p| p.dim).ok_or_else(|| Error::invalid("no pairs to concatenate"))?;
        let (mut states, mut increments) = (Vec::new(), Vec::new());
        for p in it {
            if p.dim != dim {
                return Err(Error::invalid("pair dimensions differ"));
            }
            states.extend_from_slice(&p.states);
            increments.extend_from_slice(&p.increments);
        }
        IncrementPairs::new(dim, states, increments)
    }
}

/// Training pairs for slot `n` (`0 <= n < n_steps`).
pub fn slot_increments(paths: &PathSet, n: usize) -> Result<IncrementPairs> {
    let n_slots = paths.grid().n_steps;
    if n >= n_slots {
        return Err(Error::Index { index: n, len: n_slots });
    }
    let d = paths.dim();
    let mut states = Vec::with_capacity(paths.n_paths() * d);
    let mut increments = Vec::with_capacity(paths.n_paths() * d);
    for i in 0..paths.n_paths() {
        let now = paths.state(i, n);
        let next = paths.state(i, n + 1);
        states.extend_from_slice(now);
        increments.extend(next.iter().zip(now).map(|(b, a)| b - a));
    }
    Ok(IncrementPairs { dim: d, states, increments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_paths(h: usize, n: usize, d: usize, v: f64) -> PathSet {
        let grid = TimeGrid::new(0.0, 0.1, n).unwrap();
        PathSet::new(grid, d, vec![v; d], vec![v; h * (n + 1) * d]).unwrap()
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, -1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 0).is_err());
        let g = TimeGrid::over(1.0, 20).unwrap();
        assert!((g.dt - 0.05).abs() < 1e-15);
        assert!((g.horizon() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pathset_checks_initial_row_and_finiteness() {
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        assert!(PathSet::new(grid, 1, vec![1.0], vec![1.0, 2.0, 0.5, 2.0]).is_err());
        assert!(PathSet::new(grid, 1, vec![1.0], vec![1.0, f64::NAN]).is_err());
        assert!(PathSet::new(grid, 1, vec![1.0], vec![1.0, 2.0, 1.0]).is_err());
        let p = PathSet::new(grid, 1, vec![1.0], vec![1.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(p.n_paths(), 2);
        assert_eq!(p.state(1, 1), &[3.0]);
    }

    #[test]
    fn constant_paths_have_zero_increments() {
        let p = constant_paths(5, 4, 2, 1.5);
        for n in 0..4 {
            let pairs = slot_increments(&p, n).unwrap();
            assert_eq!(pairs.len(), 5);
            assert!(pairs.increments.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn slot_zero_states_equal_initial_state() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let data = vec![1.0, 2.0, 4.0, 1.0, 0.0, -1.0];
        let p = PathSet::new(grid, 1, vec![1.0], data).unwrap();
        let pairs = slot_increments(&p, 0).unwrap();
        assert!(pairs.states.iter().all(|&x| x == 1.0));
        assert_eq!(pairs.increments, vec![1.0, -1.0]);
        let pairs = slot_increments(&p, 1).unwrap();
        assert_eq!(pairs.states, vec![2.0, 0.0]);
        assert_eq!(pairs.increments, vec![2.0, -1.0]);
    }

    #[test]
    fn slot_index_out_of_range() {
        let p = constant_paths(2, 3, 1, 0.0);
        assert!(matches!(slot_increments(&p, 3), Err(Error::Index { index: 3, len: 3 })));
    }

    #[test]
    fn select_and_concat() {
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let p = PathSet::new(grid, 1, vec![0.0], vec![0.0, 1.0, 0.0, 2.0, 0.0, 3.0]).unwrap();
        let s = p.select(&[2, 0]).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 3.0, 0.0, 1.0]);
        assert!(p.select(&[3]).is_err());
        let c = s.concat(&p).unwrap();
        assert_eq!(c.n_paths(), 5);
    }
}
