use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diffsde_core::eval::{KlOrientation, KlSettings, SimulatorSource};
use diffsde_core::pathgen::GeneratorConfig;
use diffsde_core::portfolio::{EmvHyper, MvProblem, DEFAULT_WINDOW};
use diffsde_core::sde::{random_gbm_spec, GbmSpec, GenericSdeSpec, OuSpec, TimeGrid};

use crate::output::{CliError, CliResult};

pub const DEFAULT_OU: OuSpec = OuSpec { rate: 1.0, level: 1.2, vol: 0.3, x0: 1.5 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Ou,
    Gbm,
    CustomSde,
    Mv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

/// GBM market: either `random_gbm_spec(dim, spec_seed)` or explicit
/// parameters (`drift`, `vol`, optional `corr`, optional `x0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub dim: usize,
    pub spec_seed: u64,
    pub drift: Option<Vec<f64>>,
    pub vol: Option<Vec<f64>>,
    pub corr: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig { dim: 10, spec_seed: 0, drift: None, vol: None, corr: None, x0: None }
    }
}

/// Scalar SDE `dX = (a + b X) dt + c |X|^gamma dW`, simulated by
/// Euler-Maruyama with `substeps` sub-steps per grid interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomSdeConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub gamma: f64,
    pub x0: f64,
    pub substeps: usize,
}

impl Default for CustomSdeConfig {
    // Cox-Ingersoll-Ross-like square-root diffusion.
    fn default() -> Self {
        CustomSdeConfig { a: 0.5, b: -1.0, c: 0.3, gamma: 0.5, x0: 0.5, substeps: 20 }
    }
}

/// Reference samplers scored next to the trained generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Independent Gaussian increments per slot, ignoring the state.
    GaussianIncrements,
    SdmMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub n_repeats: usize,
    pub n_per_side: usize,
    pub orientation: KlOrientation,
    /// Synthetic paths written by the reproduction commands.
    pub n_generate: usize,
    /// Per-kind default when unset: both for ou and custom-sde, Gaussian
    /// only for gbm (SDM-MC is slow with thousands of pairs).
    pub baselines: Option<Vec<Baseline>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 1, n_repeats: 20, n_per_side: 100, orientation: KlOrientation::RealSynthetic, n_generate: 1000, baselines: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvConfig {
    pub problem: MvProblem,
    pub window: usize,
    pub emv: EmvHyper,
    /// Index generator; a shared network by default since market windows
    /// have many slots and few paths.
    pub diffusion: GeneratorConfig,
}

impl Default for MvConfig {
    fn default() -> Self {
        MvConfig {
            problem: MvProblem::default(),
            window: DEFAULT_WINDOW,
            emv: EmvHyper::default(),
            diffusion: GeneratorConfig { shared_network: true, ..GeneratorConfig::default() },
        }
    }
}

/// Everything a run needs. Missing sections take per-kind defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
    /// Where artifacts go. Not part of the recorded config, so a run can be
    /// repeated into another directory with identical reports.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub n_paths: Option<usize>,
    pub grid: Option<GridConfig>,
    pub ou: Option<OuSpec>,
    pub gbm: GbmConfig,
    pub custom_sde: CustomSdeConfig,
    pub diffusion: GeneratorConfig,
    pub eval: EvalConfig,
    pub mv: MvConfig,
}

impl ExperimentConfig {
    /// Read the TOML file (if any), then apply `key.path=value` overrides.
    pub fn load(path: Option<&Path>, sets: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for set in sets {
            apply_override(&mut table, set)?;
        }
        table.try_into().map_err(|e: toml::de::Error| CliError::validation(format!("config: {}", e.message())))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::validation("a seed is required (config `seed` or --seed)"))
    }

    /// Fill every per-kind default so the resolved config fully describes the run.
    pub fn resolve(mut self) -> CliResult<Self> {
        let (grid, h) = match self.kind {
            ExperimentKind::Ou => (GridConfig { t0: 0.0, dt: 0.05, n_steps: 20 }, 100),
            ExperimentKind::Gbm => (GridConfig { t0: 0.0, dt: 1.0, n_steps: 7 }, 2000),
            ExperimentKind::CustomSde => (GridConfig { t0: 0.0, dt: 0.05, n_steps: 20 }, 100),
            ExperimentKind::Mv => (GridConfig { t0: 0.0, dt: 1.0 / 252.0, n_steps: self.mv.window }, 40),
        };
        self.grid.get_or_insert(grid);
        self.n_paths.get_or_insert(h);
        self.ou.get_or_insert(DEFAULT_OU);
        let baselines = match self.kind {
            ExperimentKind::Gbm => vec![Baseline::GaussianIncrements],
            _ => vec![Baseline::GaussianIncrements, Baseline::SdmMc],
        };
        self.eval.baselines.get_or_insert(baselines);
        Ok(self)
    }

    pub fn time_grid(&self) -> CliResult<TimeGrid> {
        let g = self.grid.as_ref().ok_or_else(|| CliError::validation("grid is not set"))?;
        Ok(TimeGrid::new(g.t0, g.dt, g.n_steps)?)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths.unwrap_or(0)
    }

    pub fn gbm_spec(&self) -> CliResult<GbmSpec> {
        let g = &self.gbm;
        let spec = match (&g.drift, &g.vol) {
            (Some(drift), Some(vol)) => {
                let d = drift.len();
                let corr = g.corr.clone().unwrap_or_else(|| GbmSpec::independent(d, 0.0, 1.0, 1.0).corr);
                GbmSpec { drift: drift.clone(), vol: vol.clone(), corr, x0: g.x0.clone().unwrap_or_else(|| vec![1.0; d]) }
            }
            (None, None) => random_gbm_spec(g.dim, g.spec_seed)?,
            _ => return Err(CliError::validation("gbm.drift and gbm.vol must be given together")),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom_spec(&self) -> CliResult<GenericSdeSpec> {
        let c = self.custom_sde.clone();
        if c.substeps == 0 {
            return Err(CliError::validation("custom_sde.substeps must be positive"));
        }
        let (a, b, s, g) = (c.a, c.b, c.c, c.gamma);
        Ok(GenericSdeSpec::new(
            vec![c.x0],
            1,
            move |_t, x, out| out[0] = a + b * x[0],
            move |_t, x, out| out[0] = s * x[0].abs().powf(g),
        ))
    }

    /// Ground-truth simulator for the configured kind.
    pub fn simulator(&self) -> CliResult<SimulatorSource> {
        let grid = self.time_grid()?;
        Ok(match self.kind {
            ExperimentKind::Ou => SimulatorSource::Ou { spec: self.ou.unwrap_or(DEFAULT_OU), grid },
            ExperimentKind::Gbm => SimulatorSource::Gbm { spec: self.gbm_spec()?, grid },
            ExperimentKind::CustomSde => {
                SimulatorSource::Euler { spec: self.custom_spec()?, grid, substeps: self.custom_sde.substeps }
            }
            ExperimentKind::Mv => return Err(CliError::validation("the mv kind has no SDE simulator; use the mv subcommands")),
        })
    }

    pub fn kl_settings(&self) -> KlSettings {
        KlSettings {
            n_per_side: self.eval.n_per_side,
            n_repeats: self.eval.n_repeats,
            k: self.eval.k,
            orientation: self.eval.orientation,
        }
    }
}

/// `a.b.c=value`; the value is read as TOML, falling back to a bare string.
fn apply_override(table: &mut toml::Table, set: &str) -> CliResult<()> {
    let (key, raw) = set.split_once('=').ok_or_else(|| CliError::validation(format!("override {set:?} is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("bad override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| CliError::validation(format!("override {key:?}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
