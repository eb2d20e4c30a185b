use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IncrementSampler;
use crate::ddpm::slot::{fit_denoiser, DenoiserData};
use crate::ddpm::{sinusoidal_features, train_slot_model, NetConfig, NoiseSchedule, Normalization, SlotModel, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::{derive_seed, label, substream, StreamRng};
use crate::sde::{slot_increments, IncrementPairs, PathSet, TimeGrid};

pub const BUNDLE_MANIFEST: &str = "bundle.json";
const BUNDLE_VERSION: u32 = 1;
const SHARED_NET_FILE: &str = "shared.net.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Number of diffusion steps `K`.
    pub diffusion_steps: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Train one network for all slots, with the slot position as an extra
    /// input and normalization pooled across slots. Meant for datasets with
    /// few paths and many slots.
    pub shared_network: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { diffusion_steps: 100, net: NetConfig::default(), train: TrainConfig::default(), shared_network: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean loss over the last training steps, per slot. In shared mode every
    /// slot reports the loss of the shared network.
    pub final_losses: Vec<f64>,
    pub shared_network: bool,
}

/// One conditional increment model per source slot `n = 0..N_T-1`.
#[derive(Debug, Clone)]
pub struct GeneratorBundle {
    pub slot_models: Vec<SlotModel>,
    pub grid: TimeGrid,
    pub dim: usize,
    pub initial_state: Vec<f64>,
}

/// Train a generator on `dataset`, one slot at a time (in parallel) or with a
/// single shared network.
pub fn train_generator(dataset: &PathSet, config: &GeneratorConfig, seed: u64) -> Result<(GeneratorBundle, TrainingReport)> {
    let n_slots = dataset.grid().n_steps;
    if dataset.n_paths() < 2 {
        return Err(Error::invalid(format!("training needs at least 2 paths, got {}", dataset.n_paths())));
    }
    let schedule = Arc::new(NoiseSchedule::new(config.diffusion_steps)?);
    let pairs: Vec<IncrementPairs> = (0..n_slots).map(|n| slot_increments(dataset, n)).collect::<Result<_>>()?;
    let train_seed = derive_seed(seed, label::SLOT_TRAIN);
    let slot_models = if config.shared_network {
        train_shared(&pairs, schedule, config, train_seed)?
    } else {
        pairs
            .par_iter()
            .enumerate()
            .map(|(n, p)| train_slot_model(n, p, schedule.clone(), &config.net, &config.train, derive_seed(train_seed, n as u64)))
            .collect::<Result<Vec<_>>>()?
    };
    let report = TrainingReport {
        final_losses: slot_models.iter().map(|m| m.final_loss).collect(),
        shared_network: config.shared_network,
    };
    let bundle = GeneratorBundle {
        slot_models,
        grid: *dataset.grid(),
        dim: dataset.dim(),
        initial_state: dataset.initial_state().to_vec(),
    };
    Ok((bundle, report))
}

fn slot_position(n: usize, n_slots: usize) -> Vec<f64> {
    sinusoidal_features(n as f64 / n_slots as f64).to_vec()
}

fn train_shared(pairs: &[IncrementPairs], schedule: Arc<NoiseSchedule>, config: &GeneratorConfig, seed: u64) -> Result<Vec<SlotModel>> {
    let n_slots = pairs.len();
    let pooled = IncrementPairs::concat(pairs)?;
    let norm = Normalization::fit(&pooled)?;
    let mut data: Option<DenoiserData> = None;
    for (n, p) in pairs.iter().enumerate() {
        let part = DenoiserData::from_pairs(p, &norm, &slot_position(n, n_slots));
        match data.as_mut() {
            Some(d) => d.append(part),
            None => data = Some(part),
        }
    }
    let data = data.ok_or_else(|| Error::invalid("dataset has no slots"))?;
    let mut dims = vec![data.input_dim()];
    dims.extend(&config.net.hidden);
    dims.push(pooled.dim);
    let mut net = Mlp::init(&dims, config.net.activation, derive_seed(seed, label::NET_INIT))?;
    let mut rng = substream(seed, 1);
    let final_loss = fit_denoiser(&mut net, &data, &schedule, &config.train, &mut rng)?;
    let net = Arc::new(net);
    Ok((0..n_slots)
        .map(|n| SlotModel {
            slot: n,
            dim: pooled.dim,
            norm: norm.clone(),
            net: net.clone(),
            schedule: schedule.clone(),
            slot_features: Some(slot_position(n, n_slots)),
            final_loss,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    grid: TimeGrid,
    d: usize,
    x0: Vec<f64>,
    #[serde(rename = "K")]
    k: usize,
    schedule_betas: Vec<f64>,
    shared_network: bool,
    slots: Vec<String>,
}

impl GeneratorBundle {
    pub fn n_slots(&self) -> usize {
        self.slot_models.len()
    }

    pub fn is_shared(&self) -> bool {
        match self.slot_models.as_slice() {
            [a, b, ..] => Arc::ptr_eq(&a.net, &b.net),
            [one] => one.slot_features.is_some(),
            [] => false,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.slot_models[0].schedule
    }

    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.slot_models.len() != self.grid.n_steps {
            return Err(Error::format(format!(
                "bundle has {} slot models for {} slots",
                self.slot_models.len(),
                self.grid.n_steps
            )));
        }
        if self.initial_state.len() != self.dim {
            return Err(Error::format("initial state length does not match the dimension"));
        }
        for (n, m) in self.slot_models.iter().enumerate() {
            if m.slot != n || m.dim != self.dim || m.schedule.betas() != self.schedule().betas() {
                return Err(Error::format(format!("slot model {n} is inconsistent with the bundle")));
            }
        }
        Ok(())
    }

    /// Write `bundle.json` plus one sidecar per slot into `dir` (created if
    /// missing). Shared-network bundles store the network once.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let shared = self.is_shared();
        let mut slots = Vec::with_capacity(self.n_slots());
        for m in &self.slot_models {
            let stem = format!("slot_{:03}", m.slot);
            let net_file = if shared { SHARED_NET_FILE.to_string() } else { format!("{stem}.net.json") };
            if !shared {
                m.net.save(dir.join(&net_file))?;
            }
            fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&m.sidecar(&net_file))?)?;
            slots.push(stem);
        }
        if shared {
            self.slot_models[0].net.save(dir.join(SHARED_NET_FILE))?;
        }
        let manifest = BundleManifest {
            format_version: BUNDLE_VERSION,
            grid: self.grid,
            d: self.dim,
            x0: self.initial_state.clone(),
            k: self.schedule().steps(),
            schedule_betas: self.schedule().betas().to_vec(),
            shared_network: shared,
            slots,
        };
        fs::write(dir.join(BUNDLE_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<GeneratorBundle> {
        let dir = dir.as_ref();
        let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(dir.join(BUNDLE_MANIFEST))?)?;
        if manifest.format_version != BUNDLE_VERSION {
            return Err(Error::format(format!("unsupported bundle version {}", manifest.format_version)));
        }
        let schedule = Arc::new(NoiseSchedule::from_betas(manifest.schedule_betas)?);
        if schedule.steps() != manifest.k {
            return Err(Error::format("bundle K does not match its schedule"));
        }
        let mut nets: HashMap<String, Arc<Mlp>> = HashMap::new();
        let mut slot_models = Vec::with_capacity(manifest.slots.len());
        for stem in &manifest.slots {
            let sc: crate::ddpm::SlotSidecar = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
            let net = match nets.get(&sc.net_file) {
                Some(n) => n.clone(),
                None => {
                    let n = Arc::new(Mlp::load(dir.join(&sc.net_file))?);
                    nets.insert(sc.net_file.clone(), n.clone());
                    n
                }
            };
            slot_models.push(SlotModel::from_sidecar(sc, net, schedule.clone())?);
        }
        let bundle = GeneratorBundle { slot_models, grid: manifest.grid, dim: manifest.d, initial_state: manifest.x0 };
        bundle.validate()?;
        Ok(bundle)
    }
}

impl IncrementSampler for GeneratorBundle {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    fn sample_increments(&self, slot: usize, states: &[f64], rngs: &mut [StreamRng]) -> Result<Vec<f64>> {
        let model = self.slot_models.get(slot).ok_or(Error::Index { index: slot, len: self.slot_models.len() })?;
        model.sample_batch(states, rngs)
    }
}
