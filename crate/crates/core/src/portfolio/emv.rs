use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::policy::{Allocation, MvProblem};
use super::pool::MarketPathPool;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, label, substream};

/// Log-variance is kept inside this range so the policy stays representable.
const LOG_VAR_RANGE: (f64, f64) = (-30.0, 10.0);

/// Starting point of actor-critic training. `lagrange_w = None` starts the
/// multiplier at the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmvInit {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub lagrange_w: Option<f64>,
}

impl Default for EmvInit {
    fn default() -> Self {
        EmvInit { phi1: 0.5, phi2: 0.0, phi3: 0.0, theta1: 0.0, theta2: 0.0, lagrange_w: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmvHyper {
    pub episodes: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub multiplier_lr: f64,
    /// Episodes between multiplier updates.
    pub multiplier_every: usize,
    pub temperature: f64,
    pub temperature_decay: f64,
    /// Episodes whose wealth leaves `[-limit, limit]` are aborted.
    pub divergence_limit: f64,
    /// Per-episode gradient norm cap for critic and actor separately; `0` disables.
    pub grad_clip: f64,
    pub init: EmvInit,
}

impl Default for EmvHyper {
    fn default() -> Self {
        EmvHyper {
            episodes: 20_000,
            critic_lr: 1e-3,
            actor_lr: 1e-3,
            multiplier_lr: 0.5,
            multiplier_every: 50,
            temperature: 2.0,
            temperature_decay: 0.9995,
            divergence_limit: 1e6,
            grad_clip: 50.0,
            init: EmvInit::default(),
        }
    }
}

/// Gaussian exploratory policy with mean `phi1 (w e^{-r(T-t)} - x)` and
/// variance `e^{phi2 + phi3 (T - t)}`, plus its quadratic critic
/// `J(t, x) = (x - w)^2 e^{-theta1 (T - t)} + theta2 (t - T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmvPolicy {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub lagrange_w: f64,
    pub temperature: f64,
    pub rate: f64,
    pub horizon: f64,
}

impl EmvPolicy {
    pub fn new(init: &EmvInit, problem: &MvProblem, temperature: f64) -> Self {
        EmvPolicy {
            phi1: init.phi1,
            phi2: init.phi2,
            phi3: init.phi3.max(0.0),
            theta1: init.theta1,
            theta2: init.theta2,
            lagrange_w: init.lagrange_w.unwrap_or(problem.target),
            temperature,
            rate: problem.rate,
            horizon: problem.horizon,
        }
    }

    pub fn mean_action(&self, t: f64, x: f64) -> f64 {
        self.phi1 * (self.lagrange_w * (-self.rate * (self.horizon - t)).exp() - x)
    }

    pub fn log_variance(&self, t: f64) -> f64 {
        (self.phi2 + self.phi3 * (self.horizon - t)).clamp(LOG_VAR_RANGE.0, LOG_VAR_RANGE.1)
    }

    pub fn critic(&self, t: f64, x: f64) -> f64 {
        let tau = self.horizon - t;
        (x - self.lagrange_w).powi(2) * (-self.theta1 * tau).exp() + self.theta2 * (t - self.horizon)
    }

    /// `dJ/dtheta1`, `dJ/dtheta2`.
    fn critic_grad(&self, t: f64, x: f64) -> [f64; 2] {
        let tau = self.horizon - t;
        [-tau * (x - self.lagrange_w).powi(2) * (-self.theta1 * tau).exp(), t - self.horizon]
    }
}

impl Allocation for EmvPolicy {
    /// Mean action; exploration is switched off for evaluation.
    fn allocate(&self, t: f64, x: f64) -> f64 {
        self.mean_action(t, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmvTrainingReport {
    pub episodes: usize,
    pub aborted: usize,
    /// Multiplier after each update.
    pub lagrange_history: Vec<f64>,
}

/// Episodic actor-critic on paths drawn uniformly from `pool`. Critic by
/// gradient descent on the squared martingale increments, actor by
/// `phi <- phi - lr * sum_k delta_k grad log pi`, multiplier moved toward
/// the target every `multiplier_every` episodes.
pub fn train_emv(pool: &MarketPathPool, problem: &MvProblem, hyper: &EmvHyper, seed: u64) -> Result<(EmvPolicy, EmvTrainingReport)> {
    problem.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("training pool is empty"));
    }
    if hyper.multiplier_every == 0 || !(hyper.temperature > 0.0) {
        return Err(Error::invalid("multiplier_every and temperature must be positive"));
    }
    if !(hyper.grad_clip >= 0.0) {
        return Err(Error::invalid("grad_clip must be non-negative"));
    }
    let dt = pool.dt_years();
    let steps = pool.window();
    let r = problem.rate;
    let mut pol = EmvPolicy::new(&hyper.init, problem, hyper.temperature);
    let base = derive_seed(seed, label::EMV);
    let mut aborted = 0;
    let mut recent = Vec::with_capacity(hyper.multiplier_every);
    let mut history = Vec::new();
    let mut xs = vec![0.0; steps + 1];
    let mut acts = vec![0.0; steps];
    for ep in 0..hyper.episodes {
        let mut rng = substream(base, ep as u64);
        let prices = pool.path(rng.random_range(0..pool.n_paths()));
        xs[0] = problem.x0;
        let mut ok = true;
        for k in 0..steps {
            let t = k as f64 * dt;
            let x = xs[k];
            let sd = (0.5 * pol.log_variance(t)).exp();
            let mut a = pol.mean_action(t, x) + sd * rng.sample::<f64, _>(StandardNormal);
            if let Some(l) = problem.allocation_limit {
                a = a.clamp(-l, l);
            }
            acts[k] = a;
            let next = x + a * (prices[k + 1] - prices[k]) / prices[k] + (x - a) * r * dt;
            if !(next.abs() <= hyper.divergence_limit) {
                ok = false;
                break;
            }
            xs[k + 1] = next;
        }
        if !ok {
            aborted += 1;
        } else {
            let lambda = pol.temperature;
            let mut g_theta = [0.0; 2];
            let mut g_phi = [0.0; 3];
            for k in 0..steps {
                let (t, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
                let lv = pol.log_variance(t);
                let v = lv.exp();
                let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln();
                let j_next = if k + 1 == steps { (xs[k + 1] - pol.lagrange_w).powi(2) } else { pol.critic(t1, xs[k + 1]) };
                let delta = j_next - pol.critic(t, xs[k]) - lambda * entropy * dt;
                let gn = if k + 1 == steps { [0.0, 0.0] } else { pol.critic_grad(t1, xs[k + 1]) };
                let gc = pol.critic_grad(t, xs[k]);
                g_theta[0] += delta * (gn[0] - gc[0]);
                g_theta[1] += delta * (gn[1] - gc[1]);
                let tau = pol.horizon - t;
                let u = acts[k] - pol.mean_action(t, xs[k]);
                let score_var = -0.5 + u * u / (2.0 * v);
                g_phi[0] += delta * u / v * (pol.lagrange_w * (-r * tau).exp() - xs[k]);
                g_phi[1] += delta * score_var;
                g_phi[2] += delta * score_var * tau;
            }
            if g_theta.iter().chain(&g_phi).any(|g| !g.is_finite()) {
                aborted += 1;
            } else {
                clip(&mut g_theta, hyper.grad_clip);
                clip(&mut g_phi, hyper.grad_clip);
                pol.theta1 -= hyper.critic_lr * g_theta[0];
                pol.theta2 -= hyper.critic_lr * g_theta[1];
                pol.phi1 -= hyper.actor_lr * g_phi[0];
                pol.phi2 = (pol.phi2 - hyper.actor_lr * g_phi[1]).clamp(LOG_VAR_RANGE.0, LOG_VAR_RANGE.1);
                pol.phi3 = (pol.phi3 - hyper.actor_lr * g_phi[2]).max(0.0);
                recent.push(xs[steps]);
            }
        }
        if (ep + 1) % hyper.multiplier_every == 0 {
            if !recent.is_empty() {
                let mean = recent.iter().sum::<f64>() / recent.len() as f64;
                pol.lagrange_w += hyper.multiplier_lr * (problem.target - mean);
                recent.clear();
            }
            history.push(pol.lagrange_w);
        }
        pol.temperature *= hyper.temperature_decay;
    }
    if 2 * aborted > hyper.episodes {
        return Err(Error::numeric(format!("{aborted} of {} training episodes diverged", hyper.episodes)));
    }
    Ok((pol, EmvTrainingReport { episodes: hyper.episodes, aborted, lagrange_history: history }))
}

fn clip(g: &mut [f64], cap: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if cap > 0.0 && norm > cap {
        g.iter_mut().for_each(|v| *v *= cap / norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::{evaluate_policy, plugin_policy, PoolKind};
    use crate::sde::{simulate_gbm, GbmSpec, TimeGrid};

    fn gbm_pool(n: usize, seed: u64) -> MarketPathPool {
        let spec = GbmSpec { drift: vec![0.08], vol: vec![0.2], corr: vec![1.0], x0: vec![1.0] };
        let grid = TimeGrid::new(0.0, 1.0 / 252.0, 126).unwrap();
        MarketPathPool::from_path_set(PoolKind::Split, &simulate_gbm(&spec, &grid, n, seed).unwrap()).unwrap()
    }

    #[test]
    fn frozen_learning_keeps_policy() {
        let prob = MvProblem::default();
        let hyper = EmvHyper { episodes: 200, actor_lr: 0.0, multiplier_lr: 0.0, ..Default::default() };
        let (pol, rep) = train_emv(&gbm_pool(20, 1), &prob, &hyper, 3).unwrap();
        let start = EmvPolicy::new(&hyper.init, &prob, 1.0);
        assert_eq!((pol.phi1, pol.phi2, pol.phi3, pol.lagrange_w), (start.phi1, start.phi2, start.phi3, start.lagrange_w));
        assert_eq!(rep.aborted, 0);
        assert_eq!(rep.lagrange_history.len(), 4);
    }

    #[test]
    fn oracle_slope_without_exploration_matches_plugin() {
        let prob = MvProblem::default();
        let plug = plugin_policy(0.08, 0.2, &prob).unwrap();
        let init = EmvInit { phi1: plug.slope(), lagrange_w: Some(plug.lagrange_w), ..Default::default() };
        let emv = EmvPolicy::new(&init, &prob, 1.0);
        let test = gbm_pool(2000, 5);
        let a = evaluate_policy(&emv, &test, &prob).unwrap();
        let b = evaluate_policy(&plug, &test, &prob).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-9 && (a.variance - b.variance).abs() < 1e-9);
    }

    #[test]
    fn divergence_aborts_training() {
        let prob = MvProblem::default();
        let init = EmvInit { phi2: 9.0, ..Default::default() };
        let hyper = EmvHyper { episodes: 20, divergence_limit: 1.5, actor_lr: 0.0, init, ..Default::default() };
        assert!(train_emv(&gbm_pool(5, 1), &prob, &hyper, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let prob = MvProblem::default();
        let hyper = EmvHyper { episodes: 300, ..Default::default() };
        let pool = gbm_pool(10, 2);
        assert_eq!(train_emv(&pool, &prob, &hyper, 4).unwrap().0, train_emv(&pool, &prob, &hyper, 4).unwrap().0);
    }

    #[test]
    fn clipping_caps_the_norm_and_keeps_small_gradients() {
        let mut g = [3.0, 4.0];
        clip(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut h = [0.3, 0.4];
        clip(&mut h, 1.0);
        assert_eq!(h, [0.3, 0.4]);
        let mut off = [300.0, 400.0];
        clip(&mut off, 0.0);
        assert_eq!(off, [300.0, 400.0]);
        let hyper = EmvHyper { grad_clip: -1.0, ..Default::default() };
        assert!(train_emv(&gbm_pool(5, 1), &MvProblem::default(), &hyper, 0).is_err());
    }
}
