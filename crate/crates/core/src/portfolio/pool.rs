use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathgen::{generate_paths, GeneratorBundle};
use crate::rng::{derive_seed, label, substream};
use crate::sde::{PathSet, TimeGrid};

/// Trading days per year.
pub const TRADING_DAYS: f64 = 252.0;
/// Half a year of trading days.
pub const DEFAULT_WINDOW: usize = 126;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Split,
    Bootstrap,
    Synthetic,
    Mixed,
}

/// Price paths of `L + 1` observations each, spaced `dt_years` apart, with
/// the origin of every path.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPathPool {
    kind: PoolKind,
    window: usize,
    dt_years: f64,
    /// `n_paths x (window + 1)`, row-major.
    prices: Vec<f64>,
    provenance: Vec<PoolKind>,
}

#[derive(Serialize, Deserialize)]
struct PoolSidecar {
    format_version: u32,
    kind: PoolKind,
    dt_years: f64,
    horizon_years: f64,
    provenance: Vec<PoolKind>,
}

impl MarketPathPool {
    /// Pool of a single origin. Prices must be positive and finite.
    pub fn new(kind: PoolKind, window: usize, dt_years: f64, prices: Vec<f64>) -> Result<Self> {
        if kind == PoolKind::Mixed {
            return Err(Error::invalid("mixed pools are built with MarketPathPool::mix"));
        }
        let n = if window == 0 { 0 } else { prices.len() / (window + 1) };
        Self::with_provenance(kind, window, dt_years, prices, vec![kind; n])
    }

    fn with_provenance(kind: PoolKind, window: usize, dt_years: f64, prices: Vec<f64>, provenance: Vec<PoolKind>) -> Result<Self> {
        if window == 0 || !(dt_years > 0.0) || !dt_years.is_finite() {
            return Err(Error::invalid("pool needs a positive window and time step"));
        }
        if !prices.len().is_multiple_of(window + 1) || prices.len() / (window + 1) != provenance.len() {
            return Err(Error::invalid("price buffer does not hold whole paths"));
        }
        if let Some(pos) = prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid(format!("non-positive price in path {} at step {}", pos / (window + 1), pos % (window + 1))));
        }
        Ok(MarketPathPool { kind, window, dt_years, prices, provenance })
    }

    /// All paths of `a` followed by all paths of `b`, each keeping its origin tag.
    pub fn mix(a: &MarketPathPool, b: &MarketPathPool) -> Result<Self> {
        if a.window != b.window || a.dt_years != b.dt_years {
            return Err(Error::invalid("pools differ in window or time step"));
        }
        let prices = [a.prices.as_slice(), b.prices.as_slice()].concat();
        let provenance = [a.provenance.as_slice(), b.provenance.as_slice()].concat();
        Self::with_provenance(PoolKind::Mixed, a.window, a.dt_years, prices, provenance)
    }

    pub fn kind(&self) -> PoolKind {
        self.kind
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn dt_years(&self) -> f64 {
        self.dt_years
    }

    pub fn horizon_years(&self) -> f64 {
        self.window as f64 * self.dt_years
    }

    pub fn n_paths(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.window + 1;
        &self.prices[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.prices.chunks_exact(self.window + 1)
    }

    pub fn provenance(&self) -> &[PoolKind] {
        &self.provenance
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid { t0: 0.0, dt: self.dt_years, n_steps: self.window }
    }

    /// One-step simple returns of every path, pooled.
    pub fn simple_returns(&self) -> Vec<f64> {
        self.paths().flat_map(|p| p.windows(2).map(|w| w[1] / w[0] - 1.0)).collect()
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.paths().flat_map(|p| p.windows(2).map(|w| (w[1] / w[0]).ln())).collect()
    }

    /// The pool as a one-dimensional path set; every path must start at the
    /// same price (true for normalized pools).
    pub fn to_path_set(&self) -> Result<PathSet> {
        if self.is_empty() {
            return PathSet::empty(self.grid(), vec![1.0]);
        }
        PathSet::from_rows(self.grid(), 1, self.prices.clone())
            .map_err(|_| Error::invalid("pool paths do not share a starting price; ingest with normalization"))
    }

    pub fn from_path_set(kind: PoolKind, paths: &PathSet) -> Result<Self> {
        if paths.dim() != 1 {
            return Err(Error::invalid("market pools are one-dimensional"));
        }
        Self::new(kind, paths.grid().n_steps, paths.grid().dt, paths.as_slice().to_vec())
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_os_string();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Binary path set at `path` plus a JSON sidecar at `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_path_set()?.to_bytes())?;
        let sidecar = PoolSidecar {
            format_version: 1,
            kind: self.kind,
            dt_years: self.dt_years,
            horizon_years: self.horizon_years(),
            provenance: self.provenance.clone(),
        };
        fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let set = PathSet::from_bytes(&fs::read(path)?)?;
        let sc: PoolSidecar = serde_json::from_str(&fs::read_to_string(Self::sidecar_path(path))?)?;
        if sc.format_version != 1 {
            return Err(Error::format(format!("unsupported pool version {}", sc.format_version)));
        }
        if set.dim() != 1 || (set.grid().dt - sc.dt_years).abs() > 1e-15 {
            return Err(Error::format("pool sidecar does not match its paths"));
        }
        Self::with_provenance(sc.kind, set.grid().n_steps, sc.dt_years, set.into_vec(), sc.provenance)
            .map_err(|e| Error::format(e.to_string()))
    }
}

/// Cut a `date,close` series into consecutive windows of `window` daily
/// steps. Neighbouring windows share their boundary close, so every daily
/// return lands in exactly one window; a trailing partial window is dropped.
/// With `normalize`, each window is divided by its first close.
pub fn ingest_index_csv<R: Read>(reader: R, window: usize, normalize: bool) -> Result<MarketPathPool> {
    if window == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::format(format!("CSV lacks a `{name}` column")))
    };
    let (date_col, close_col) = (col("date")?, col("close")?);
    let mut closes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let date = rec.get(date_col).unwrap_or("");
        NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|_| Error::format(format!("row {line}: cannot parse date `{date}`")))?;
        let raw = rec.get(close_col).unwrap_or("");
        let close: f64 = raw.parse().map_err(|_| Error::format(format!("row {line}: cannot parse close `{raw}`")))?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(Error::invalid(format!("row {line}: close must be positive, got {raw}")));
        }
        closes.push(close);
    }
    if closes.len() < window + 1 {
        return Err(Error::invalid(format!("need at least {} rows for one window, got {}", window + 1, closes.len())));
    }
    let n_windows = (closes.len() - 1) / window;
    let mut prices = Vec::with_capacity(n_windows * (window + 1));
    for w in 0..n_windows {
        let slice = &closes[w * window..=(w + 1) * window];
        let base = if normalize { slice[0] } else { 1.0 };
        prices.extend(slice.iter().map(|p| p / base));
    }
    MarketPathPool::new(PoolKind::Split, window, 1.0 / TRADING_DAYS, prices)
}

/// Resample pooled one-step returns with replacement into `n_paths` new
/// paths starting at 1.0.
pub fn bootstrap_pool(source: &MarketPathPool, n_paths: usize, seed: u64) -> Result<MarketPathPool> {
    if source.is_empty() {
        return Err(Error::invalid("cannot bootstrap an empty pool"));
    }
    let returns = source.simple_returns();
    let l = source.window;
    let base = derive_seed(seed, label::BOOTSTRAP);
    let mut prices = Vec::with_capacity(n_paths * (l + 1));
    for i in 0..n_paths {
        let mut rng = substream(base, i as u64);
        let mut p = 1.0;
        prices.push(p);
        for _ in 0..l {
            p *= 1.0 + returns[rng.random_range(0..returns.len())];
            prices.push(p);
        }
    }
    MarketPathPool::new(PoolKind::Bootstrap, l, source.dt_years, prices)
}

/// Synthetic pool and how many generated paths were thrown away.
#[derive(Debug, Clone)]
pub struct SyntheticPool {
    pub pool: MarketPathPool,
    /// Paths that diverged or touched a non-positive price.
    pub rejected: usize,
}

/// Generate index paths from a bundle trained on a market pool, keeping only
/// strictly positive ones. Fails when more than half are rejected.
pub fn build_synthetic_market_pool(bundle: &GeneratorBundle, n_paths: usize, seed: u64) -> Result<SyntheticPool> {
    if bundle.dim != 1 {
        return Err(Error::invalid("market generators must be one-dimensional"));
    }
    let out = generate_paths(bundle, n_paths, derive_seed(seed, label::SYNTH_POOL))?;
    let mut prices = Vec::with_capacity(out.paths.as_slice().len());
    let mut rejected = out.failures.len();
    for path in out.paths.paths() {
        if path.iter().all(|p| *p > 0.0) {
            prices.extend(path.iter().map(|p| p / path[0]));
        } else {
            rejected += 1;
        }
    }
    if 2 * rejected > n_paths {
        return Err(Error::numeric(format!(
            "{rejected} of {n_paths} synthetic paths were non-positive or diverged; retrain the generator"
        )));
    }
    let grid = bundle.grid;
    let pool = MarketPathPool::new(PoolKind::Synthetic, grid.n_steps, grid.dt, prices)?;
    Ok(SyntheticPool { pool, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(closes: &[f64]) -> String {
        let start = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap();
        let mut s = String::from("date,close\n");
        for (i, c) in closes.iter().enumerate() {
            s += &format!("{},{}\n", start + chrono::Days::new(i as u64), c);
        }
        s
    }

    #[test]
    fn window_counts() {
        let closes: Vec<f64> = (0..253).map(|i| 100.0 + i as f64).collect();
        let pool = ingest_index_csv(csv_text(&closes).as_bytes(), 126, true).unwrap();
        assert_eq!(pool.n_paths(), 2);
        assert_eq!(pool.path(1)[0], 1.0);
        assert_eq!(pool.path(1)[126], 352.0 / 226.0);
        let closes = vec![10.0; 20 * 252 + 1];
        let pool = ingest_index_csv(csv_text(&closes).as_bytes(), 126, true).unwrap();
        assert_eq!(pool.n_paths(), 40);
        assert!(pool.paths().all(|p| p.iter().all(|&v| v == 1.0)));
        assert!((pool.horizon_years() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ingest_errors_name_the_row() {
        let mut text = csv_text(&[1.0, 2.0, 3.0]);
        text = text.replace(",2\n", ",-2\n");
        let err = ingest_index_csv(text.as_bytes(), 1, true).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        let err = ingest_index_csv("date,close\n1990-13-01,1\n1990-01-02,2\n".as_bytes(), 1, true).unwrap_err();
        assert!(err.to_string().contains("row 2"));
        assert!(ingest_index_csv(csv_text(&[1.0]).as_bytes(), 1, true).is_err());
    }

    #[test]
    fn raw_windows_keep_prices() {
        let pool = ingest_index_csv(csv_text(&[1.0, 2.0, 3.0, 4.0, 5.0]).as_bytes(), 2, false).unwrap();
        assert_eq!(pool.path(1), &[3.0, 4.0, 5.0]);
        assert!(pool.to_path_set().is_err());
    }

    #[test]
    fn single_atom_bootstrap() {
        let prices: Vec<f64> = (0..=4).map(|k| 1.01f64.powi(k)).collect();
        let source = MarketPathPool::new(PoolKind::Split, 4, 1.0 / 252.0, prices).unwrap();
        let boot = bootstrap_pool(&source, 3, 1).unwrap();
        assert_eq!(boot.kind(), PoolKind::Bootstrap);
        for p in boot.paths() {
            for (k, v) in p.iter().enumerate() {
                assert!((v - 1.01f64.powi(k as i32)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bootstrap_mean_matches_pool() {
        let prices: Vec<f64> = [1.0, 1.02, 0.99, 1.05, 1.0, 0.97, 1.01, 1.03].to_vec();
        let source = MarketPathPool::new(PoolKind::Split, 3, 1.0 / 252.0, prices).unwrap();
        let target = source.simple_returns().iter().sum::<f64>() / 6.0;
        let boot = bootstrap_pool(&source, 34_000, 2).unwrap();
        let r = boot.simple_returns();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
        assert!((m - target).abs() < 4.0 * sd / (r.len() as f64).sqrt());
    }

    #[test]
    fn mixing_and_round_trip() {
        let a = MarketPathPool::new(PoolKind::Split, 2, 0.5, vec![1.0, 1.1, 1.2]).unwrap();
        let b = MarketPathPool::new(PoolKind::Synthetic, 2, 0.5, vec![1.0, 0.9, 0.95, 1.0, 1.3, 1.4]).unwrap();
        let m = MarketPathPool::mix(&a, &b).unwrap();
        assert_eq!(m.kind(), PoolKind::Mixed);
        assert_eq!(m.provenance(), &[PoolKind::Split, PoolKind::Synthetic, PoolKind::Synthetic]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.bin");
        m.save(&path).unwrap();
        assert_eq!(MarketPathPool::load(&path).unwrap(), m);
        assert!(MarketPathPool::new(PoolKind::Split, 1, 0.5, vec![1.0, 0.0]).is_err());
    }
}
