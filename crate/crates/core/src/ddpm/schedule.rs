use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest tolerated `alpha_bar_K`; above this the chain does not reach noise.
pub const MAX_TERMINAL_ALPHA_BAR: f64 = 1e-3;

/// Per-step `alpha_k = 1 - beta_k` and cumulative products
/// `alpha_bar_k = prod_{j <= k} alpha_j`, stored 0-based (`alpha[k - 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for NoiseSchedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        NoiseSchedule::from_betas(r.betas)
    }
}

impl From<NoiseSchedule> for ScheduleRepr {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleRepr { betas: s.betas }
    }
}

impl NoiseSchedule {
    /// Scaled-linear betas from `1e-4 * 1000 / K` to `0.02 * 1000 / K`,
    /// clipped to `(0, 0.999]`. Fails if `alpha_bar_K` stays above `1e-3`.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("diffusion needs at least one step"));
        }
        let scale = 1000.0 / k as f64;
        let (lo, hi) = (1e-4 * scale, 0.02 * scale);
        let betas = (0..k)
            .map(|i| {
                let frac = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                (lo + frac * (hi - lo)).clamp(f64::MIN_POSITIVE, 0.999)
            })
            .collect();
        let sched = Self::from_betas(betas)?;
        if sched.alpha_bar(k) > MAX_TERMINAL_ALPHA_BAR {
            return Err(Error::invalid(format!(
                "K = {k} leaves alpha_bar_K = {:.3e} > {MAX_TERMINAL_ALPHA_BAR:e}; use more diffusion steps (K = 100 works)",
                sched.alpha_bar(k)
            )));
        }
        Ok(sched)
    }

    /// Arbitrary schedule; each beta must lie in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("empty noise schedule"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("every beta must lie strictly between 0 and 1"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `beta_k` for `1 <= k <= K`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }
}

/// `sqrt(alpha_bar_k) * y0 + sqrt(1 - alpha_bar_k) * eps`, the `k`-step
/// forward marginal.
pub fn forward_noise(y0: &[f64], k: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if k == 0 || k > schedule.steps() {
        return Err(Error::Index { index: k, len: schedule.steps() + 1 });
    }
    if y0.len() != eps.len() {
        return Err(Error::invalid("signal and noise lengths differ"));
    }
    let ab = schedule.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(y0.iter().zip(eps).map(|(y, e)| a * y + b * e).collect())
}
