use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{knn_kl, paths_to_vectors};
use crate::error::{Error, Result};
use crate::pathgen::PathSource;
use crate::rng::{derive_seed, label};
use crate::sde::{euler_maruyama, simulate_gbm, simulate_ou, GbmSpec, GenericSdeSpec, OuSpec, PathSet, TimeGrid};

/// Ground-truth simulators as path sources.
#[derive(Clone)]
pub enum SimulatorSource {
    Ou { spec: OuSpec, grid: TimeGrid },
    Gbm { spec: GbmSpec, grid: TimeGrid },
    Euler { spec: GenericSdeSpec, grid: TimeGrid, substeps: usize },
}

impl PathSource for SimulatorSource {
    fn sample_paths(&self, n_paths: usize, seed: u64) -> Result<PathSet> {
        match self {
            SimulatorSource::Ou { spec, grid } => simulate_ou(spec, grid, n_paths, seed),
            SimulatorSource::Gbm { spec, grid } => simulate_gbm(spec, grid, n_paths, seed),
            SimulatorSource::Euler { spec, grid, substeps } => euler_maruyama(spec, grid, n_paths, *substeps, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlOrientation {
    /// `KL(real || synthetic)`.
    #[default]
    RealSynthetic,
    SyntheticReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlSettings {
    pub n_per_side: usize,
    pub n_repeats: usize,
    pub k: usize,
    pub orientation: KlOrientation,
}

impl Default for KlSettings {
    fn default() -> Self {
        KlSettings { n_per_side: 100, n_repeats: 20, k: 1, orientation: KlOrientation::RealSynthetic }
    }
}

/// Mean and standard error of the divergence over independent repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub mean: f64,
    /// Standard error of the mean; 0 (and `single_repeat` set) for one repeat.
    pub std_error: f64,
    pub n_repeats: usize,
    pub k: usize,
    /// Flattened dimension `N_T * d`.
    pub dim: usize,
    pub single_repeat: bool,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for KlEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std_error)
    }
}

/// Draw fresh real and synthetic ensembles per repeat and estimate the kNN
/// divergence between them.
pub fn kl_experiment(real: &dyn PathSource, synthetic: &dyn PathSource, settings: &KlSettings, seed: u64) -> Result<KlEstimate> {
    if settings.n_repeats == 0 {
        return Err(Error::invalid("at least one repeat is required"));
    }
    let (real_seed, synth_seed) = (derive_seed(seed, label::EXPERIMENT_REAL), derive_seed(seed, label::EXPERIMENT_SYNTH));
    let runs = (0..settings.n_repeats)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<_> {
                let a = paths_to_vectors(&real.sample_paths(settings.n_per_side, derive_seed(real_seed, r as u64))?);
                let b = paths_to_vectors(&synthetic.sample_paths(settings.n_per_side, derive_seed(synth_seed, r as u64))?);
                if a.ncols() != b.ncols() {
                    return Err(Error::invalid("real and synthetic paths have different shapes"));
                }
                let est = match settings.orientation {
                    KlOrientation::RealSynthetic => knn_kl(a.view(), b.view(), settings.k)?,
                    KlOrientation::SyntheticReal => knn_kl(b.view(), a.view(), settings.k)?,
                };
                Ok((est, a.ncols()))
            };
            run().map_err(|e| e.prefixed(&format!("repeat {r}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = runs[0].1;
    let values: Vec<f64> = runs.iter().map(|(e, _)| e.value).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let mut warnings: Vec<String> =
        runs.iter().enumerate().filter_map(|(r, (e, _))| e.warning.as_ref().map(|w| format!("repeat {r}: {w}"))).collect();
    if values.len() == 1 {
        warnings.push("single repeat: standard error not available, reported as 0".into());
    }
    Ok(KlEstimate { mean, std_error, n_repeats: values.len(), k: settings.k, dim, single_repeat: values.len() == 1, values, warnings })
}

/// JSON shape shared by every metric report; metric-specific fields go in
/// `extra` and are written at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub std_error: f64,
    pub config: serde_json::Value,
    pub warnings: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn from_kl(est: &KlEstimate, config: serde_json::Value) -> Self {
        let mut extra = BTreeMap::new();
        extra.insert("mean".into(), est.mean.into());
        extra.insert("n_repeats".into(), est.n_repeats.into());
        extra.insert("k".into(), est.k.into());
        extra.insert("dim".into(), est.dim.into());
        extra.insert("single_repeat".into(), est.single_repeat.into());
        extra.insert("values".into(), est.values.clone().into());
        MetricReport {
            metric: "knn_kl".into(),
            value: est.mean,
            std_error: est.std_error,
            config,
            warnings: est.warnings.clone(),
            extra,
        }
    }
}
