//! Mean-variance portfolio experiments on index-path pools: split, bootstrap
//! and generator-synthetic pools, the plug-in GBM policy, an exploratory
//! actor-critic policy, and out-of-sample evaluation.

mod emv;
mod policy;
mod pool;

pub use emv::{train_emv, EmvHyper, EmvInit, EmvPolicy, EmvTrainingReport};
pub use policy::{evaluate_policy, plugin_policy, simulate_wealth, write_policy_table, Allocation, MvProblem, PluginPolicy, PolicyReport};
pub use pool::{
    bootstrap_pool, build_synthetic_market_pool, ingest_index_csv, MarketPathPool, PoolKind, SyntheticPool, DEFAULT_WINDOW,
    TRADING_DAYS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;

/// Annualized GBM drift and volatility fitted to a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmEstimate {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub warning: Option<String>,
}

/// From pooled log-returns `l`: `sigma^2 = Var(l) / dt`,
/// `mu = mean(l) / dt + sigma^2 / 2`. The volatility is floored at 1e-6.
pub fn estimate_gbm_params(pool: &MarketPathPool) -> Result<GbmEstimate> {
    let l = pool.log_returns();
    if l.len() < 2 {
        return Err(Error::invalid("need at least two returns to estimate GBM parameters"));
    }
    let dt = pool.dt_years();
    let n = l.len() as f64;
    let mean = l.iter().sum::<f64>() / n;
    let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma2 = var / dt;
    let mu_hat = mean / dt + sigma2 / 2.0;
    let sigma = sigma2.sqrt();
    let (sigma_hat, warning) = if sigma < SIGMA_FLOOR {
        (SIGMA_FLOOR, Some(format!("return variance is ~0; volatility floored at {SIGMA_FLOOR:e}")))
    } else {
        (sigma, None)
    };
    Ok(GbmEstimate { mu_hat, sigma_hat, warning })
}
