use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::embed::{sinusoidal_features, EMBED_DIM};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Mlp};
use crate::rng::{derive_seed, label, substream, StreamRng};
use crate::sde::IncrementPairs;

const STD_FLOOR: f64 = 1e-8;
pub const SIDECAR_VERSION: u32 = 1;

/// Hidden layers of the noise predictor. Input and output widths follow from
/// the data dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: vec![128, 128, 128], activation: Activation::Silu }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Minibatch size; the effective size is `min(batch_size, pairs)`.
    pub batch_size: usize,
    /// Initial Adam step size.
    pub learning_rate: f64,
    /// Cosine decay of the step size down to `learning_rate * final_lr_fraction`
    /// at the last step; 1 keeps it constant.
    pub final_lr_fraction: f64,
    /// Decay of an exponential moving average of the weights, which replaces
    /// the final weights when positive; 0 turns it off.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 4000, batch_size: 64, learning_rate: 1e-3, final_lr_fraction: 1.0, ema_decay: 0.999 }
    }
}

/// Per-coordinate z-scoring of condition states and increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
    pub inc_mean: Vec<f64>,
    pub inc_std: Vec<f64>,
}

fn mean_std(values: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in values.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in values.chunks_exact(dim) {
        var.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    let denom = (n.max(2) - 1) as f64;
    (mean, var.into_iter().map(|v| (v / denom).sqrt()).collect())
}

impl Normalization {
    /// Fit from training pairs. Rejects data whose increments are constant in
    /// every coordinate.
    pub fn fit(pairs: &IncrementPairs) -> Result<Self> {
        let norm = Self::fit_floored(pairs);
        if norm.inc_std.iter().all(|&s| s <= STD_FLOOR) {
            return Err(Error::Degenerate {
                slot: None,
                reason: "increments have zero variance in every coordinate; emit them directly instead of \
                         training a diffusion model"
                    .into(),
            });
        }
        Ok(norm)
    }

    /// Same statistics without the degeneracy check.
    pub(crate) fn fit_floored(pairs: &IncrementPairs) -> Self {
        let d = pairs.dim;
        let (cond_mean, cond_std) = mean_std(&pairs.states, d);
        let (inc_mean, inc_std) = mean_std(&pairs.increments, d);
        let floor = |v: Vec<f64>| v.into_iter().map(|s: f64| s.max(STD_FLOOR)).collect();
        Normalization { cond_mean, cond_std: floor(cond_std), inc_mean, inc_std: floor(inc_std) }
    }

    pub fn dim(&self) -> usize {
        self.inc_mean.len()
    }

    pub fn norm_condition(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.cond_mean[j]) / self.cond_std[j];
        }
    }

    pub fn norm_increment(&self, dx: &[f64], out: &mut [f64]) {
        for j in 0..dx.len() {
            out[j] = (dx[j] - self.inc_mean[j]) / self.inc_std[j];
        }
    }

    pub fn denorm_increment(&self, z: &mut [f64]) {
        let d = self.dim();
        for row in z.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = row[j] * self.inc_std[j] + self.inc_mean[j];
            }
        }
    }
}

/// The conditioning pair `(t_n, x(t_n))`, with time given by slot index.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub slot: usize,
    pub state: Vec<f64>,
}

/// Trained conditional generator of the increment over slot `n`.
///
/// The network predicts the injected noise from
/// `[noised increment (d) | normalized state (d) | step features (9) | slot features]`,
/// where the slot features are present only for a network shared across slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotModel {
    pub slot: usize,
    pub dim: usize,
    pub norm: Normalization,
    pub net: Arc<Mlp>,
    pub schedule: Arc<NoiseSchedule>,
    pub slot_features: Option<Vec<f64>>,
    pub final_loss: f64,
}

/// Flattened training rows in normalized units.
pub(crate) struct DenoiserData {
    pub dim: usize,
    pub increments: Vec<f64>,
    pub conditions: Vec<f64>,
    pub extra: Vec<f64>,
    pub extra_dim: usize,
}

impl DenoiserData {
    pub fn from_pairs(pairs: &IncrementPairs, norm: &Normalization, extra: &[f64]) -> Self {
        let d = pairs.dim;
        let mut increments = vec![0.0; pairs.increments.len()];
        let mut conditions = vec![0.0; pairs.states.len()];
        for i in 0..pairs.len() {
            norm.norm_increment(pairs.increment(i), &mut increments[i * d..(i + 1) * d]);
            norm.norm_condition(pairs.state(i), &mut conditions[i * d..(i + 1) * d]);
        }
        let extra_rows = extra.repeat(pairs.len());
        DenoiserData { dim: d, increments, conditions, extra: extra_rows, extra_dim: extra.len() }
    }

    pub fn len(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn append(&mut self, other: DenoiserData) {
        debug_assert!(self.dim == other.dim && self.extra_dim == other.extra_dim);
        self.increments.extend(other.increments);
        self.conditions.extend(other.conditions);
        self.extra.extend(other.extra);
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dim + EMBED_DIM + self.extra_dim
    }
}

/// Minimize the epsilon-prediction loss with Adam. Returns the mean loss over
/// the final steps.
pub(crate) fn fit_denoiser(
    net: &mut Mlp,
    data: &DenoiserData,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let (d, e) = (data.dim, data.extra_dim);
    let width = data.input_dim();
    let n = data.len();
    let batch = cfg.batch_size.min(n).max(1);
    let kmax = schedule.steps();
    let mut adam = AdamState::new(net.n_params(), cfg.learning_rate);
    let mut inputs = Array2::<f64>::zeros((batch, width));
    let mut targets = Array2::<f64>::zeros((batch, d));
    if !(cfg.learning_rate > 0.0) || !(0.0..=1.0).contains(&cfg.final_lr_fraction) || !(0.0..1.0).contains(&cfg.ema_decay) {
        return Err(Error::invalid("need learning_rate > 0, final_lr_fraction in [0, 1] and ema_decay in [0, 1)"));
    }
    let mut ema = (cfg.ema_decay > 0.0).then(|| net.params().to_vec());
    let tail = cfg.steps.clamp(1, 100);
    let mut tail_loss = 0.0;
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        let f = cfg.final_lr_fraction;
        adam.learning_rate = cfg.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        for b in 0..batch {
            let i = rng.random_range(0..n);
            let k = rng.random_range(1..=kmax);
            let ab = schedule.alpha_bar(k);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let mut row = inputs.row_mut(b);
            let row = row.as_slice_mut().unwrap();
            let mut target = targets.row_mut(b);
            for j in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                target[j] = eps;
                row[j] = sa * data.increments[i * d + j] + sb * eps;
            }
            row[d..2 * d].copy_from_slice(&data.conditions[i * d..(i + 1) * d]);
            row[2 * d..2 * d + EMBED_DIM].copy_from_slice(&sinusoidal_features(k as f64 / kmax as f64));
            row[2 * d + EMBED_DIM..].copy_from_slice(&data.extra[i * e..(i + 1) * e]);
        }
        let (grads, loss) = net.grad(inputs.view(), targets.view())?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("training loss diverged at step {step}")));
        }
        adam.step(net.params_mut(), &grads)?;
        if let Some(avg) = ema.as_mut() {
            // Short memory early on so the initial weights wash out.
            let decay = cfg.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64));
            for (a, p) in avg.iter_mut().zip(net.params()) {
                *a = decay * *a + (1.0 - decay) * p;
            }
        }
        if step + tail >= cfg.steps {
            tail_loss += loss;
        }
    }
    if let Some(avg) = ema {
        net.params_mut().copy_from_slice(&avg);
    }
    Ok(tail_loss / tail as f64)
}

/// Train the noise predictor for one slot on its `(state, increment)` pairs.
pub fn train_slot_model(
    slot: usize,
    pairs: &IncrementPairs,
    schedule: Arc<NoiseSchedule>,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<SlotModel> {
    if pairs.len() < 2 {
        return Err(Error::invalid(format!("slot {slot}: need at least 2 training pairs, got {}", pairs.len())));
    }
    let norm = Normalization::fit(pairs).map_err(|e| e.at_slot(slot))?;
    let data = DenoiserData::from_pairs(pairs, &norm, &[]);
    let mut dims = vec![data.input_dim()];
    dims.extend(&net_cfg.hidden);
    dims.push(pairs.dim);
    let mut net = Mlp::init(&dims, net_cfg.activation, derive_seed(seed, label::NET_INIT))?;
    let mut rng = substream(seed, 1);
    let final_loss = fit_denoiser(&mut net, &data, &schedule, train_cfg, &mut rng).map_err(|e| e.at_slot(slot))?;
    Ok(SlotModel {
        slot,
        dim: pairs.dim,
        norm,
        net: Arc::new(net),
        schedule,
        slot_features: None,
        final_loss,
    })
}

/// Ancestral DDPM sampling in normalized units for a batch of `rngs.len()`
/// rows of width `dim`, given a noise predictor `eps_fn(k, y) -> eps`.
///
/// `y_{k-1} = (y_k - beta_k / sqrt(1 - alpha_bar_k) * eps) / sqrt(alpha_k) + sqrt(beta_k) * xi`,
/// with `xi = 0` on the final step. Non-finite rows are left as they are.
pub(crate) fn ancestral_sample<F>(
    schedule: &NoiseSchedule,
    dim: usize,
    rngs: &mut [StreamRng],
    mut eps_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let mut y: Vec<f64> = Vec::with_capacity(rngs.len() * dim);
    for rng in rngs.iter_mut() {
        y.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    for k in (1..=schedule.steps()).rev() {
        let eps = eps_fn(k, &y)?;
        let (alpha, beta, ab) = (schedule.alpha(k), schedule.beta(k), schedule.alpha_bar(k));
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sd = beta.sqrt();
        for (b, rng) in rngs.iter_mut().enumerate() {
            for j in 0..dim {
                let idx = b * dim + j;
                let mut next = inv * (y[idx] - coef * eps[idx]);
                if k > 1 {
                    next += sd * rng.sample::<f64, _>(StandardNormal);
                }
                y[idx] = next;
            }
        }
    }
    Ok(y)
}

impl SlotModel {
    pub fn input_dim(&self) -> usize {
        2 * self.dim + EMBED_DIM + self.slot_features.as_ref().map_or(0, Vec::len)
    }

    /// Noise prediction for a batch of normalized noisy increments `y`
    /// with matching normalized conditions, at diffusion step `k`.
    pub fn predict_noise(&self, k: usize, y: &[f64], norm_cond: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let rows = y.len() / d;
        let width = self.input_dim();
        let mut inputs = Array2::<f64>::zeros((rows, width));
        let step = sinusoidal_features(k as f64 / self.schedule.steps() as f64);
        let extra = self.slot_features.as_deref().unwrap_or(&[]);
        for b in 0..rows {
            let mut row = inputs.row_mut(b);
            let row = row.as_slice_mut().unwrap();
            row[..d].copy_from_slice(&y[b * d..(b + 1) * d]);
            row[d..2 * d].copy_from_slice(&norm_cond[b * d..(b + 1) * d]);
            row[2 * d..2 * d + EMBED_DIM].copy_from_slice(&step);
            row[2 * d + EMBED_DIM..].copy_from_slice(extra);
        }
        let out = self.net.forward(inputs.slice(s![.., ..]))?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// One increment per row of `states` (`rngs.len() x dim`), each row
    /// driven by its own generator. Rows that blow up come back non-finite.
    pub fn sample_batch(&self, states: &[f64], rngs: &mut [StreamRng]) -> Result<Vec<f64>> {
        let d = self.dim;
        if states.len() != rngs.len() * d {
            return Err(Error::invalid("one generator per conditioning state is required"));
        }
        let mut norm_cond = vec![0.0; states.len()];
        for (x, out) in states.chunks_exact(d).zip(norm_cond.chunks_exact_mut(d)) {
            self.norm.norm_condition(x, out);
        }
        let mut y = ancestral_sample(&self.schedule, d, rngs, |k, y| self.predict_noise(k, y, &norm_cond))?;
        self.norm.denorm_increment(&mut y);
        Ok(y)
    }

    /// Draw for a [`Condition`], checking that it targets this slot.
    pub fn sample_for(&self, cond: &Condition, rng: &mut StreamRng) -> Result<Vec<f64>> {
        if cond.slot != self.slot {
            return Err(Error::invalid(format!("condition for slot {} given to model of slot {}", cond.slot, self.slot)));
        }
        reverse_sample(self, &cond.state, rng)
    }
}

/// Single increment sample conditioned on `x_cond`; fails with the diffusion
/// step index if the chain leaves finite values.
pub fn reverse_sample(model: &SlotModel, x_cond: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    let d = model.dim;
    if x_cond.len() != d {
        return Err(Error::invalid(format!("condition has {} coordinates, model expects {d}", x_cond.len())));
    }
    let mut norm_cond = vec![0.0; d];
    model.norm.norm_condition(x_cond, &mut norm_cond);
    let mut y = ancestral_sample(&model.schedule, d, std::slice::from_mut(rng), |k, y| {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("reverse chain left finite values at diffusion step {k}")));
        }
        model.predict_noise(k, y, &norm_cond)
    })?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("reverse chain produced a non-finite sample at diffusion step 0"));
    }
    model.norm.denorm_increment(&mut y);
    Ok(y)
}

/// JSON sidecar written next to a slot's network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSidecar {
    pub format_version: u32,
    pub slot: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub schedule_betas: Vec<f64>,
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
    pub inc_mean: Vec<f64>,
    pub inc_std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_features: Option<Vec<f64>>,
    pub final_loss: f64,
    /// File name of the network checkpoint, relative to the sidecar.
    pub net_file: String,
}

impl SlotModel {
    pub fn sidecar(&self, net_file: &str) -> SlotSidecar {
        SlotSidecar {
            format_version: SIDECAR_VERSION,
            slot: self.slot,
            d: self.dim,
            k: self.schedule.steps(),
            schedule_betas: self.schedule.betas().to_vec(),
            cond_mean: self.norm.cond_mean.clone(),
            cond_std: self.norm.cond_std.clone(),
            inc_mean: self.norm.inc_mean.clone(),
            inc_std: self.norm.inc_std.clone(),
            slot_features: self.slot_features.clone(),
            final_loss: self.final_loss,
            net_file: net_file.to_string(),
        }
    }

    pub fn from_sidecar(sc: SlotSidecar, net: Arc<Mlp>, schedule: Arc<NoiseSchedule>) -> Result<SlotModel> {
        if sc.format_version != SIDECAR_VERSION {
            return Err(Error::format(format!("unsupported slot sidecar version {}", sc.format_version)));
        }
        if schedule.betas() != sc.schedule_betas.as_slice() || sc.k != schedule.steps() {
            return Err(Error::format(format!("slot {} schedule does not match", sc.slot)));
        }
        let norm = Normalization { cond_mean: sc.cond_mean, cond_std: sc.cond_std, inc_mean: sc.inc_mean, inc_std: sc.inc_std };
        let lens = [norm.cond_mean.len(), norm.cond_std.len(), norm.inc_mean.len(), norm.inc_std.len()];
        if lens.iter().any(|&l| l != sc.d) {
            return Err(Error::format(format!("slot {} normalization has the wrong length", sc.slot)));
        }
        let model = SlotModel {
            slot: sc.slot,
            dim: sc.d,
            norm,
            net,
            schedule,
            slot_features: sc.slot_features,
            final_loss: sc.final_loss,
        };
        if model.net.input_dim() != model.input_dim() || model.net.output_dim() != model.dim {
            return Err(Error::format(format!("slot {} network shape does not match its sidecar", sc.slot)));
        }
        Ok(model)
    }

    /// Write `<stem>.json` (sidecar) and `<stem>.net.json` (network) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let net_file = format!("{stem}.net.json");
        self.net.save(dir.join(&net_file))?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.sidecar(&net_file))?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<SlotModel> {
        let dir = dir.as_ref();
        let sc: SlotSidecar = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let net = Arc::new(Mlp::load(dir.join(&sc.net_file))?);
        let schedule = Arc::new(NoiseSchedule::from_betas(sc.schedule_betas.clone())?);
        SlotModel::from_sidecar(sc, net, schedule)
    }
}
