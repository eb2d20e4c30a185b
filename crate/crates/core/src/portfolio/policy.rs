use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pool::MarketPathPool;
use crate::error::{Error, Result};

/// Mean-variance problem: minimize `Var X(T)` subject to `E X(T) = target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvProblem {
    pub x0: f64,
    pub rate: f64,
    pub horizon: f64,
    pub target: f64,
    /// Optional bound on `|a|` (dollars in the risky asset).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation_limit: Option<f64>,
}

impl Default for MvProblem {
    fn default() -> Self {
        MvProblem { x0: 1.0, rate: 0.02, horizon: 0.5, target: 1.1, allocation_limit: None }
    }
}

impl MvProblem {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.x0, self.rate, self.horizon, self.target].iter().all(|v| v.is_finite());
        if !ok || self.x0 <= 0.0 || self.horizon <= 0.0 {
            return Err(Error::invalid("problem needs finite values, x0 > 0 and horizon > 0"));
        }
        if matches!(self.allocation_limit, Some(l) if !(l >= 0.0)) {
            return Err(Error::invalid("allocation limit must be non-negative"));
        }
        Ok(())
    }

    /// Terminal wealth of the all-riskless strategy.
    pub fn riskless_terminal(&self) -> f64 {
        self.x0 * (self.rate * self.horizon).exp()
    }
}

/// A feedback rule giving the dollar amount in the risky asset.
pub trait Allocation: Sync {
    fn allocate(&self, t: f64, x: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Sync> Allocation for F {
    fn allocate(&self, t: f64, x: f64) -> f64 {
        self(t, x)
    }
}

/// Optimal feedback policy of the GBM market with estimated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginPolicy {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub lagrange_w: f64,
    pub rate: f64,
    pub horizon: f64,
}

/// `rho = ((mu - r) / sigma)^2`, `w = (z - x0 e^{(r - rho) T}) / (1 - e^{-rho T})`.
pub fn plugin_policy(mu_hat: f64, sigma_hat: f64, problem: &MvProblem) -> Result<PluginPolicy> {
    problem.validate()?;
    if !(sigma_hat > 0.0) || !mu_hat.is_finite() || !sigma_hat.is_finite() {
        return Err(Error::invalid("the plug-in policy needs a finite drift and a positive volatility"));
    }
    let rho = ((mu_hat - problem.rate) / sigma_hat).powi(2);
    if rho == 0.0 {
        return Err(Error::invalid("drift equals the riskless rate: no reason to hold the risky asset"));
    }
    let (r, t) = (problem.rate, problem.horizon);
    let lagrange_w = (problem.target - problem.x0 * ((r - rho) * t).exp()) / (-(-rho * t).exp_m1());
    Ok(PluginPolicy { mu_hat, sigma_hat, lagrange_w, rate: r, horizon: t })
}

impl PluginPolicy {
    pub fn slope(&self) -> f64 {
        (self.mu_hat - self.rate) / (self.sigma_hat * self.sigma_hat)
    }
}

impl Allocation for PluginPolicy {
    /// `a*(t, x) = ((mu - r) / sigma^2) * (w e^{-r (T - t)} - x)`.
    fn allocate(&self, t: f64, x: f64) -> f64 {
        self.slope() * (self.lagrange_w * (-self.rate * (self.horizon - t)).exp() - x)
    }
}

/// Self-financing wealth along one price path:
/// `X_{k+1} = X_k + a_k (P_{k+1} - P_k) / P_k + (X_k - a_k) r dt`.
/// Returns the terminal wealth and, with `record`, every intermediate value.
pub fn simulate_wealth(
    policy: &dyn Allocation,
    prices: &[f64],
    dt: f64,
    problem: &MvProblem,
    record: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if prices.len() < 2 || prices.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::invalid("price path must have at least two positive prices"));
    }
    let mut x = problem.x0;
    let mut traj = record.then(|| {
        let mut v = Vec::with_capacity(prices.len());
        v.push(x);
        v
    });
    for k in 0..prices.len() - 1 {
        let mut a = policy.allocate(k as f64 * dt, x);
        if let Some(l) = problem.allocation_limit {
            a = a.clamp(-l, l);
        }
        x += a * (prices[k + 1] - prices[k]) / prices[k] + (x - a) * problem.rate * dt;
        if !x.is_finite() {
            return Err(Error::numeric(format!("wealth became non-finite at step {}", k + 1)));
        }
        if let Some(t) = traj.as_mut() {
            t.push(x);
        }
    }
    Ok((x, traj))
}

/// Out-of-sample terminal-wealth statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub mean: f64,
    pub variance: f64,
    /// `(mean - x0 e^{rT}) / std`; NaN (serialized as null) when the std is 0.
    #[serde(with = "nan_as_null")]
    pub sharpe: f64,
    pub sharpe_defined: bool,
    pub n_episodes: usize,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Run `policy` over every path of `pool`. Results do not depend on path order.
pub fn evaluate_policy(policy: &dyn Allocation, pool: &MarketPathPool, problem: &MvProblem) -> Result<PolicyReport> {
    problem.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("test pool is empty"));
    }
    let mut terminal = pool
        .paths()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|p| simulate_wealth(policy, p, pool.dt_years(), problem, false).map(|r| r.0))
        .collect::<Result<Vec<f64>>>()?;
    terminal.sort_by(f64::total_cmp);
    let n = terminal.len() as f64;
    // Sorted, so equal ends mean a constant sample; skip the rounding noise of summing it.
    let constant = terminal[0] == terminal[terminal.len() - 1];
    let mean = if constant { terminal[0] } else { terminal.iter().sum::<f64>() / n };
    let variance = if terminal.len() > 1 && !constant {
        terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = variance.sqrt();
    let sharpe_defined = std > 0.0;
    let sharpe = if sharpe_defined { (mean - problem.riskless_terminal()) / std } else { f64::NAN };
    Ok(PolicyReport { mean, variance, sharpe, sharpe_defined, n_episodes: terminal.len() })
}

/// Table with columns `policy,pool,mean,variance,sharpe`.
pub fn write_policy_table<W: Write>(out: W, rows: &[(String, String, PolicyReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "pool", "mean", "variance", "sharpe"])?;
    for (policy, pool, r) in rows {
        let sharpe = if r.sharpe_defined { r.sharpe.to_string() } else { "NaN".into() };
        w.write_record([policy.clone(), pool.clone(), r.mean.to_string(), r.variance.to_string(), sharpe])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::PoolKind;

    fn flat_pool(n: usize) -> MarketPathPool {
        let mut prices = Vec::new();
        for i in 0..n {
            prices.extend((0..=126).map(|k| 1.0 + 0.001 * ((k * (i + 3)) % 7) as f64));
        }
        MarketPathPool::new(PoolKind::Split, 126, 1.0 / 252.0, prices).unwrap()
    }

    #[test]
    fn hand_value_of_multiplier() {
        let p = plugin_policy(0.08, 0.2, &MvProblem::default()).unwrap();
        let hand = (1.10 - (-0.035f64).exp()) / (1.0 - (-0.045f64).exp());
        assert!((p.lagrange_w - hand).abs() < 1e-12);
        assert!((p.lagrange_w - 3.0539).abs() < 1e-3);
        assert!((p.slope() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn riskless_target_means_no_allocation() {
        let prob = MvProblem { target: (0.02f64 * 0.5).exp(), ..Default::default() };
        let p = plugin_policy(0.08, 0.2, &prob).unwrap();
        assert!((p.lagrange_w - prob.target).abs() < 1e-12);
        assert!(p.allocate(0.0, 1.0).abs() < 1e-12);
        assert!(plugin_policy(0.02, 0.2, &prob).is_err());
        assert!(plugin_policy(0.08, 0.0, &prob).is_err());
    }

    #[test]
    fn multiplier_grows_with_target() {
        let ws: Vec<f64> =
            (0..20).map(|i| plugin_policy(0.08, 0.2, &MvProblem { target: 1.0 + 0.02 * i as f64, ..Default::default() }).unwrap().lagrange_w).collect();
        assert!(ws.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn riskless_compounding() {
        let prob = MvProblem::default();
        let zero = |_: f64, _: f64| 0.0;
        let prices = vec![1.0; 127];
        let (x, traj) = simulate_wealth(&zero, &prices, 1.0 / 252.0, &prob, true).unwrap();
        assert!((x - (1.0 + 0.02 / 252.0f64).powi(126)).abs() < 1e-13);
        assert!((x - 1.010049).abs() < 1e-6);
        assert_eq!(traj.unwrap().len(), 127);
        let rep = evaluate_policy(&zero, &flat_pool(5), &prob).unwrap();
        assert_eq!(rep.variance, 0.0);
        assert!(!rep.sharpe_defined && rep.sharpe.is_nan());
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"sharpe\":null"));
        assert!(serde_json::from_str::<PolicyReport>(&json).unwrap().sharpe.is_nan());
    }

    #[test]
    fn fully_invested_doubles() {
        let all_in = |_: f64, x: f64| x;
        let (x, _) = simulate_wealth(&all_in, &[1.0, 2.0], 1.0 / 252.0, &MvProblem::default(), false).unwrap();
        assert_eq!(x, 2.0);
        let prob = MvProblem { rate: 0.0, ..Default::default() };
        let prices = [1.0, 1.3, 0.7, 0.9, 1.25];
        let (x, _) = simulate_wealth(&all_in, &prices, 0.1, &prob, false).unwrap();
        assert!((x - 1.25).abs() < 1e-12);
    }

    #[test]
    fn allocation_limit_clamps() {
        let prob = MvProblem { allocation_limit: Some(0.5), rate: 0.0, ..Default::default() };
        let big = |_: f64, _: f64| 10.0;
        let (x, _) = simulate_wealth(&big, &[1.0, 2.0], 0.1, &prob, false).unwrap();
        assert_eq!(x, 1.5);
    }

    #[test]
    fn report_ignores_path_order() {
        let pool = flat_pool(9);
        let idx: Vec<usize> = (0..9).rev().collect();
        let mut prices = Vec::new();
        for i in idx {
            prices.extend_from_slice(pool.path(i));
        }
        let rev = MarketPathPool::new(PoolKind::Split, 126, 1.0 / 252.0, prices).unwrap();
        let p = plugin_policy(0.08, 0.2, &MvProblem::default()).unwrap();
        assert_eq!(evaluate_policy(&p, &pool, &MvProblem::default()).unwrap(), evaluate_policy(&p, &rev, &MvProblem::default()).unwrap());
    }

    #[test]
    fn table_layout() {
        let rep = PolicyReport { mean: 1.1, variance: 0.01, sharpe: 0.5, sharpe_defined: true, n_episodes: 3 };
        let mut buf = Vec::new();
        write_policy_table(&mut buf, &[("plugin".into(), "split".into(), rep)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "policy,pool,mean,variance,sharpe\nplugin,split,1.1,0.01,0.5\n");
    }
}
