use rayon::prelude::*;

use super::IncrementSampler;
use crate::ddpm::slot::ancestral_sample;
use crate::ddpm::{NoiseSchedule, Normalization};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::sde::{slot_increments, IncrementPairs, PathSet, TimeGrid};

const BANDWIDTH_FLOOR: f64 = 1e-8;
/// Mixture components this far below the largest logit carry relative mass
/// under e^-50 and are skipped.
const LOGIT_CUTOFF: f64 = 50.0;

/// Kernel bandwidth for condition weighting (one value for every coordinate,
/// or one per coordinate) and the diffusion schedule to sample with.
#[derive(Debug, Clone, PartialEq)]
pub struct SdmMcConfig {
    pub bandwidth: Vec<f64>,
    pub schedule: NoiseSchedule,
}

impl SdmMcConfig {
    pub fn new(bandwidth: Vec<f64>, schedule: NoiseSchedule) -> Result<Self> {
        if bandwidth.is_empty() || bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::invalid("SDM-MC bandwidth must be positive"));
        }
        Ok(SdmMcConfig { bandwidth, schedule })
    }

    fn bandwidth_for(&self, d: usize) -> Result<Vec<f64>> {
        match self.bandwidth.len() {
            1 => Ok(vec![self.bandwidth[0]; d]),
            n if n == d => Ok(self.bandwidth.clone()),
            n => Err(Error::invalid(format!("{n} bandwidths given for {d} coordinates"))),
        }
    }
}

/// Silverman's rule `1.06 * std * H^(-1/5)` per coordinate of the
/// conditioning states.
pub fn silverman_bandwidth(pairs: &IncrementPairs) -> Vec<f64> {
    let (d, h) = (pairs.dim, pairs.len());
    let norm = Normalization::fit_floored(pairs);
    let scale = 1.06 * (h.max(1) as f64).powf(-0.2);
    (0..d).map(|j| (scale * norm.cond_std[j]).max(BANDWIDTH_FLOOR)).collect()
}

fn log_weights(states: &[f64], d: usize, x_cond: &[f64], bandwidth: &[f64], out: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (w, x) in out.iter_mut().zip(states.chunks_exact(d)) {
        let mut q = 0.0;
        for j in 0..d {
            let u = (x_cond[j] - x[j]) / bandwidth[j];
            q += u * u;
        }
        *w = -0.5 * q;
        max = max.max(*w);
    }
    if !(max > f64::MIN_POSITIVE.ln()) {
        return Err(Error::numeric(
            "all SDM-MC condition weights underflow at this state; use a larger bandwidth",
        ));
    }
    out.iter_mut().for_each(|w| *w -= max);
    Ok(())
}

/// Normalized kernel weights `w_i ∝ exp(-|x_cond - x_i|^2 / 2h^2)`.
pub fn kernel_weights(pairs: &IncrementPairs, x_cond: &[f64], bandwidth: &[f64]) -> Result<Vec<f64>> {
    let d = pairs.dim;
    if x_cond.len() != d || bandwidth.len() != d {
        return Err(Error::invalid("condition and bandwidth must match the data dimension"));
    }
    let mut w = vec![0.0; pairs.len()];
    log_weights(&pairs.states, d, x_cond, bandwidth, &mut w)?;
    w.iter_mut().for_each(|v| *v = v.exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Training pairs of one slot prepared for mixture-score sampling.
#[derive(Debug, Clone, PartialEq)]
struct McSlot {
    dim: usize,
    states: Vec<f64>,
    /// Normalized increments.
    z: Vec<f64>,
    norm: Normalization,
    bandwidth: Vec<f64>,
}

impl McSlot {
    fn new(pairs: &IncrementPairs, bandwidth: Vec<f64>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("SDM-MC needs at least one training pair"));
        }
        let d = pairs.dim;
        let norm = Normalization::fit_floored(pairs);
        let mut z = vec![0.0; pairs.increments.len()];
        for (dx, out) in pairs.increments.chunks_exact(d).zip(z.chunks_exact_mut(d)) {
            norm.norm_increment(dx, out);
        }
        Ok(McSlot { dim: d, states: pairs.states.clone(), z, norm, bandwidth })
    }

    fn sample_batch(&self, schedule: &NoiseSchedule, states: &[f64], rngs: &mut [StreamRng]) -> Result<Vec<f64>> {
        let d = self.dim;
        let h = self.states.len() / d;
        let rows = rngs.len();
        if states.len() != rows * d {
            return Err(Error::invalid("one generator per conditioning state is required"));
        }
        // Row by row so the weights of one condition stay in cache.
        let mut logw = vec![0.0; h];
        let mut scratch = vec![0.0; h];
        let mut zhat = vec![0.0; d];
        let mut y = Vec::with_capacity(rows * d);
        for (x, rng) in states.chunks_exact(d).zip(rngs.iter_mut()) {
            log_weights(&self.states, d, x, &self.bandwidth, &mut logw)?;
            let row = ancestral_sample(schedule, d, std::slice::from_mut(rng), |k, yb| {
                let ab = schedule.alpha_bar(k);
                let (sa, var) = (ab.sqrt(), 1.0 - ab);
                let half_prec = 0.5 / var;
                if d == 1 {
                    let y0 = yb[0];
                    for ((s, lw), z) in scratch.iter_mut().zip(&logw).zip(&self.z) {
                        let u = y0 - sa * z;
                        *s = lw - u * u * half_prec;
                    }
                } else {
                    for ((s, lw), zi) in scratch.iter_mut().zip(&logw).zip(self.z.chunks_exact(d)) {
                        let mut q = 0.0;
                        for (yj, zj) in yb.iter().zip(zi) {
                            let u = yj - sa * zj;
                            q += u * u;
                        }
                        *s = lw - q * half_prec;
                    }
                }
                let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                zhat.iter_mut().for_each(|v| *v = 0.0);
                let mut total = 0.0;
                let floor = max - LOGIT_CUTOFF;
                for (s, zi) in scratch.iter().zip(self.z.chunks_exact(d)) {
                    if *s < floor {
                        continue;
                    }
                    let r = (s - max).exp();
                    total += r;
                    for (acc, zj) in zhat.iter_mut().zip(zi) {
                        *acc += r * zj;
                    }
                }
                Ok(yb.iter().zip(&zhat).map(|(yj, zj)| (yj - sa * zj / total) / var.sqrt()).collect())
            })?;
            y.extend(row);
        }
        self.norm.denorm_increment(&mut y);
        Ok(y)
    }
}

/// One increment drawn by ancestral sampling with the exact score of the
/// kernel-weighted Gaussian mixture built from `train_pairs`.
pub fn sdm_mc_sample(train_pairs: &IncrementPairs, x_cond: &[f64], cfg: &SdmMcConfig, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if x_cond.len() != train_pairs.dim {
        return Err(Error::invalid(format!("condition has {} coordinates, data has {}", x_cond.len(), train_pairs.dim)));
    }
    let slot = McSlot::new(train_pairs, cfg.bandwidth_for(train_pairs.dim)?)?;
    slot.sample_batch(&cfg.schedule, x_cond, std::slice::from_mut(rng))
}

/// SDM-MC over every slot of a dataset, each slot using its own Silverman
/// bandwidth unless one is given.
#[derive(Debug, Clone, PartialEq)]
pub struct SdmMcGenerator {
    grid: TimeGrid,
    dim: usize,
    initial_state: Vec<f64>,
    schedule: NoiseSchedule,
    slots: Vec<McSlot>,
}

impl SdmMcGenerator {
    pub fn fit(dataset: &PathSet, schedule: NoiseSchedule, bandwidth: Option<Vec<f64>>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid("SDM-MC needs at least one training path"));
        }
        let slots = (0..dataset.grid().n_steps)
            .into_par_iter()
            .map(|n| {
                let pairs = slot_increments(dataset, n)?;
                let h = match &bandwidth {
                    Some(b) => SdmMcConfig::new(b.clone(), schedule.clone())?.bandwidth_for(pairs.dim)?,
                    None => silverman_bandwidth(&pairs),
                };
                McSlot::new(&pairs, h)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SdmMcGenerator {
            grid: *dataset.grid(),
            dim: dataset.dim(),
            initial_state: dataset.initial_state().to_vec(),
            schedule,
            slots,
        })
    }
}

impl IncrementSampler for SdmMcGenerator {
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
        let s = self.slots.get(slot).ok_or(Error::Index { index: slot, len: self.slots.len() })?;
        s.sample_batch(&self.schedule, states, rngs).map_err(|e| e.at_slot(slot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
    }

    fn draw(pairs: &IncrementPairs, x: f64, cfg: &SdmMcConfig, n: usize) -> Vec<f64> {
        let slot = McSlot::new(pairs, cfg.bandwidth_for(1).unwrap()).unwrap();
        let mut rngs: Vec<StreamRng> = (0..n).map(|i| substream(11, i as u64)).collect();
        slot.sample_batch(&cfg.schedule, &vec![x; n], &mut rngs).unwrap()
    }

    #[test]
    fn single_pair_concentrates_on_its_increment() {
        let pairs = IncrementPairs::new(1, vec![0.3], vec![0.25]).unwrap();
        let cfg = SdmMcConfig::new(vec![0.1], NoiseSchedule::new(100).unwrap()).unwrap();
        let out = sdm_mc_sample(&pairs, &[0.0], &cfg, &mut substream(1, 0)).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn weights_pick_the_matching_state() {
        let pairs = IncrementPairs::new(1, vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 3.0]).unwrap();
        let w = kernel_weights(&pairs, &[0.5], &[1e-3]).unwrap();
        assert!((w[1] - 1.0).abs() < 1e-12);
        let w = kernel_weights(&pairs, &[0.5], &[f64::INFINITY]).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(kernel_weights(&pairs, &[100.0], &[1e-3]).is_err());
        assert!(SdmMcConfig::new(vec![0.0], NoiseSchedule::new(100).unwrap()).is_err());
    }

    #[test]
    fn infinite_bandwidth_reproduces_the_unconditional_mixture() {
        // Increments depend strongly on the state; with h = inf the condition is ignored.
        let mut rng = substream(3, 0);
        let n = 400;
        let states: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let incs: Vec<f64> = states.iter().map(|s| s + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let pairs = IncrementPairs::new(1, states, incs.clone()).unwrap();
        let sched = NoiseSchedule::new(100).unwrap();
        let wide = SdmMcConfig::new(vec![f64::INFINITY], sched.clone()).unwrap();
        let (m0, s0) = moments(&incs);
        let (m, s) = moments(&draw(&pairs, -1.0, &wide, 2000));
        assert!((m - m0).abs() < 0.08 && (s / s0 - 1.0).abs() < 0.05, "{m} {s} vs {m0} {s0}");
        let narrow = SdmMcConfig::new(silverman_bandwidth(&pairs), sched).unwrap();
        let (m, s) = moments(&draw(&pairs, -1.0, &narrow, 2000));
        assert!((m + 1.0).abs() < 0.02 && s < 0.15, "{m} {s}");
    }
}
