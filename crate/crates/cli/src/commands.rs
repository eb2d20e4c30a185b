use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use diffsde_core::ddpm::NoiseSchedule;
use diffsde_core::eval::{kl_experiment, path_statistics, write_moments_csv, KlEstimate, MetricReport, PathStatistics};
use diffsde_core::pathgen::{
    generate_paths, train_generator, GaussianIncrementBaseline, GeneratorBundle, GeneratorConfig, PathSource, SdmMcGenerator,
};
use diffsde_core::portfolio::{
    bootstrap_pool, build_synthetic_market_pool, estimate_gbm_params, evaluate_policy, ingest_index_csv, plugin_policy,
    train_emv, write_policy_table, EmvPolicy, EmvTrainingReport, GbmEstimate, MarketPathPool, MvProblem, PluginPolicy,
    PolicyReport, PoolKind,
};
use diffsde_core::rng::derive_seed;
use diffsde_core::sde::{PathSet, TimeGrid};

use crate::config::{Baseline, ExperimentConfig, ExperimentKind};
use crate::output::{CliError, CliResult};
use crate::run::Run;

/// Seed labels for the stages of the one-shot reproductions.
mod stage {
    pub const DATA: u64 = 101;
    pub const TRAIN: u64 = 102;
    pub const GENERATE: u64 = 103;
    pub const EVAL: u64 = 104;
}

fn require_positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::validation(format!("{name} must be positive")));
    }
    Ok(())
}

#[derive(Serialize)]
struct PathsSummary {
    n_paths: usize,
    dim: usize,
    n_steps: usize,
    t0: f64,
    dt: f64,
    sha256: String,
}

impl PathsSummary {
    fn of(paths: &PathSet) -> Self {
        PathsSummary {
            n_paths: paths.n_paths(),
            dim: paths.dim(),
            n_steps: paths.grid().n_steps,
            t0: paths.grid().t0,
            dt: paths.grid().dt,
            sha256: crate::output::sha256_hex(&paths.to_bytes()),
        }
    }
}

pub fn simulate(run: &mut Run, csv: bool) -> CliResult<()> {
    let h = run.cfg.n_paths();
    require_positive("the number of paths H", h)?;
    let sim = run.cfg.simulator()?;
    let paths = sim.sample_paths(h, run.seed)?;
    run.save_paths("paths.bin", &paths)?;
    if csv {
        run.save_paths("paths.csv", &paths)?;
    }
    let summary = PathsSummary::of(&paths);
    run.write_json("simulate_report.json", &json!({ "kind": run.cfg.kind, "paths": summary }))?;
    println!("simulated {} paths into {}", h, run.dir().display());
    Ok(())
}

fn train_into(run: &mut Run, data: &PathSet, gen: &GeneratorConfig, seed: u64) -> CliResult<GeneratorBundle> {
    let (bundle, report) = train_generator(data, gen, seed)?;
    let dir = run.output("bundle")?;
    bundle.save(&dir).map_err(|e| CliError::from(e).context("saving bundle"))?;
    run.write_json("training_report.json", &report)?;
    Ok(bundle)
}

pub fn train(run: &mut Run, data: &Path) -> CliResult<()> {
    let paths = run.read_paths("data", data)?;
    let gen = run.cfg.diffusion.clone();
    train_into(run, &paths, &gen, run.seed)?;
    println!("trained {} slot models into {}", paths.grid().n_steps, run.dir().join("bundle").display());
    Ok(())
}

fn load_bundle(run: &mut Run, dir: &Path) -> CliResult<GeneratorBundle> {
    run.input("bundle", dir)?;
    GeneratorBundle::load(dir).map_err(|e| CliError::from(e).context(&dir.display().to_string()))
}

#[derive(Serialize)]
struct Failure {
    path: usize,
    slot: usize,
}

fn generate_into(run: &mut Run, bundle: &GeneratorBundle, n: usize, seed: u64, csv: bool) -> CliResult<PathSet> {
    require_positive("the number of generated paths", n)?;
    let out = generate_paths(bundle, n, seed)?;
    if out.paths.is_empty() {
        return Err(CliError::from(diffsde_core::Error::Numeric("every generated path left finite values".into())));
    }
    run.save_paths("synthetic.bin", &out.paths)?;
    if csv {
        run.save_paths("synthetic.csv", &out.paths)?;
    }
    let failures: Vec<Failure> = out.failures.iter().map(|&(path, slot)| Failure { path, slot }).collect();
    run.write_json(
        "generate_report.json",
        &json!({ "n_requested": n, "paths": PathsSummary::of(&out.paths), "failures": failures }),
    )?;
    if !out.failures.is_empty() {
        eprintln!("warning: {} of {n} generated paths diverged and were dropped", out.failures.len());
    }
    Ok(out.paths)
}

pub fn generate(run: &mut Run, bundle: &Path, n: Option<usize>, csv: bool) -> CliResult<()> {
    let b = load_bundle(run, bundle)?;
    let n = n.unwrap_or(run.cfg.eval.n_generate);
    let paths = generate_into(run, &b, n, run.seed, csv)?;
    println!("generated {} paths into {}", paths.n_paths(), run.dir().display());
    Ok(())
}

/// Score `synthetic` against the ground-truth simulator and, given the
/// training data, the configured baselines under the same real draws.
fn kl_report(
    run: &Run,
    synthetic: &dyn PathSource,
    grid: TimeGrid,
    data: Option<&PathSet>,
    schedule_steps: usize,
    seed: u64,
) -> CliResult<(MetricReport, KlEstimate)> {
    let mut cfg = run.cfg.clone();
    cfg.grid = Some(crate::config::GridConfig { t0: grid.t0, dt: grid.dt, n_steps: grid.n_steps });
    let real = cfg.simulator()?;
    let settings = cfg.kl_settings();
    let config = json!({ "kind": cfg.kind, "settings": settings, "grid": grid });
    let est = kl_experiment(&real, synthetic, &settings, seed)?;
    let mut report = MetricReport::from_kl(&est, config.clone());
    let baselines = cfg.eval.baselines.clone().unwrap_or_default();
    let mut scored = BTreeMap::new();
    match data {
        Some(data) => {
            for b in baselines {
                let (name, e) = match b {
                    Baseline::GaussianIncrements => {
                        let s = GaussianIncrementBaseline::fit(data)?;
                        ("gaussian_increments", kl_experiment(&real, &s, &settings, seed)?)
                    }
                    Baseline::SdmMc => {
                        let s = SdmMcGenerator::fit(data, NoiseSchedule::new(schedule_steps)?, None)?;
                        ("sdm_mc", kl_experiment(&real, &s, &settings, seed)?)
                    }
                };
                scored.insert(name.to_string(), serde_json::to_value(MetricReport::from_kl(&e, config.clone())).unwrap_or(Value::Null));
            }
        }
        None if !baselines.is_empty() => report.warnings.push("baselines skipped: no training data given".into()),
        None => {}
    }
    report.extra.insert("baselines".into(), Value::Object(scored.into_iter().collect()));
    Ok((report, est))
}

fn check_start(run: &Run, bundle: &GeneratorBundle) -> CliResult<()> {
    let mut cfg = run.cfg.clone();
    let g = bundle.grid;
    cfg.grid = Some(crate::config::GridConfig { t0: g.t0, dt: g.dt, n_steps: g.n_steps });
    let probe = cfg.simulator()?.sample_paths(1, 0)?;
    if probe.dim() != bundle.dim || probe.initial_state() != bundle.initial_state.as_slice() {
        return Err(CliError::validation("bundle does not match the configured SDE (dimension or initial state differ)"));
    }
    Ok(())
}

pub fn eval_kl(run: &mut Run, bundle: &Path, data: Option<&Path>) -> CliResult<()> {
    let b = load_bundle(run, bundle)?;
    let data = data.map(|p| run.read_paths("data", p)).transpose()?;
    check_start(run, &b)?;
    let (report, est) = kl_report(run, &b, b.grid, data.as_ref(), b.schedule().steps(), run.seed)?;
    run.write_json("kl_report.json", &report)?;
    println!("KL(real || synthetic) = {est}");
    Ok(())
}

/// Largest deviations of synthetic moment curves from a reference.
#[derive(Debug, Clone, Serialize)]
pub struct MomentErrors {
    pub max_abs_mean_error: f64,
    pub max_rel_mean_error: f64,
    /// `max |synthetic std / reference std - 1|` over points with reference std > 0.
    pub max_rel_std_error: f64,
}

fn moment_errors(reference_mean: &[f64], reference_std: &[f64], synth: &PathStatistics) -> MomentErrors {
    let mut e = MomentErrors { max_abs_mean_error: 0.0, max_rel_mean_error: 0.0, max_rel_std_error: 0.0 };
    for (i, (&m, &s)) in reference_mean.iter().zip(reference_std).enumerate() {
        let dm = (synth.mean_curve[i] - m).abs();
        e.max_abs_mean_error = e.max_abs_mean_error.max(dm);
        if m != 0.0 {
            e.max_rel_mean_error = e.max_rel_mean_error.max(dm / m.abs());
        }
        if s > 0.0 {
            e.max_rel_std_error = e.max_rel_std_error.max((synth.std_curve[i] / s - 1.0).abs());
        }
    }
    e
}

/// Closed-form marginal moments where the SDE has them.
fn closed_form_moments(cfg: &ExperimentConfig, grid: &TimeGrid) -> CliResult<Option<(Vec<f64>, Vec<f64>)>> {
    let times = (0..grid.n_points()).map(|n| grid.time(n) - grid.t0);
    Ok(match cfg.kind {
        ExperimentKind::Ou => {
            let spec = cfg.ou.unwrap_or(crate::config::DEFAULT_OU);
            let (m, s): (Vec<f64>, Vec<f64>) = times.map(|t| spec.marginal(t)).unzip();
            Some((m, s))
        }
        ExperimentKind::Gbm => {
            let spec = cfg.gbm_spec()?;
            let mut m = Vec::new();
            let mut s = Vec::new();
            for t in times {
                for j in 0..spec.dim() {
                    m.push(spec.mean(j, t));
                    s.push(spec.std(j, t));
                }
            }
            Some((m, s))
        }
        _ => None,
    })
}

fn moments_into(run: &mut Run, real: &PathSet, synth: &PathSet) -> CliResult<Value> {
    if real.dim() != synth.dim() || real.grid().n_steps != synth.grid().n_steps {
        return Err(CliError::validation("real and synthetic paths have different shapes"));
    }
    let rs = path_statistics(real).map_err(|e| CliError::from(e).context("real paths"))?;
    let ss = path_statistics(synth).map_err(|e| CliError::from(e).context("synthetic paths"))?;
    let mut csv = Vec::new();
    write_moments_csv(&mut csv, real.grid(), &rs, &ss)?;
    run.write_text("moments.csv", &csv)?;
    let mut report = json!({
        "n_real": real.n_paths(),
        "n_synthetic": synth.n_paths(),
        "real_positivity_fraction": rs.positivity_fraction,
        "synthetic_positivity_fraction": ss.positivity_fraction,
        "vs_real": moment_errors(&rs.mean_curve, &rs.std_curve, &ss),
    });
    // Closed-form curves only make sense when the data came from the configured SDE.
    if real.grid().dt == run.cfg.time_grid()?.dt {
        if let Some((m, s)) = closed_form_moments(&run.cfg, real.grid())? {
            report["vs_closed_form"] = serde_json::to_value(moment_errors(&m, &s, &ss)).unwrap_or(Value::Null);
        }
    }
    run.write_json("moments_report.json", &report)?;
    Ok(report)
}

pub fn eval_moments(run: &mut Run, real: &Path, synthetic: &Path) -> CliResult<()> {
    let r = run.read_paths("real", real)?;
    let s = run.read_paths("synthetic", synthetic)?;
    let report = moments_into(run, &r, &s)?;
    println!("max relative std error {}", report["vs_real"]["max_rel_std_error"]);
    Ok(())
}

/// Simulate, train, generate and score in one directory.
pub fn repro(run: &mut Run) -> CliResult<()> {
    let seed = run.seed;
    let h = run.cfg.n_paths();
    require_positive("the number of paths H", h)?;
    let sim = run.cfg.simulator()?;
    let data = sim.sample_paths(h, derive_seed(seed, stage::DATA))?;
    run.save_paths("train_paths.bin", &data)?;
    let gen = run.cfg.diffusion.clone();
    let bundle = train_into(run, &data, &gen, derive_seed(seed, stage::TRAIN))?;
    let synth = generate_into(run, &bundle, run.cfg.eval.n_generate, derive_seed(seed, stage::GENERATE), false)?;
    let (report, est) = kl_report(run, &bundle, bundle.grid, Some(&data), gen.diffusion_steps, derive_seed(seed, stage::EVAL))?;
    run.write_json("kl_report.json", &report)?;
    moments_into(run, &data, &synth)?;
    println!("KL(real || synthetic) = {est}");
    if let Some(Value::Object(b)) = report.extra.get("baselines") {
        for (name, r) in b {
            println!("  baseline {name}: {:.4} ± {:.4}", r["value"].as_f64().unwrap_or(f64::NAN), r["std_error"].as_f64().unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

fn load_pool(run: &mut Run, label: &str, path: &Path) -> CliResult<MarketPathPool> {
    run.input(label, path)?;
    MarketPathPool::load(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

fn save_pool(run: &mut Run, pool: &MarketPathPool, extra: Value) -> CliResult<()> {
    let path = run.output("pool.bin")?;
    run.output("pool.bin.json")?;
    pool.save(&path).map_err(|e| CliError::from(e).context("saving pool"))?;
    let estimate = estimate_gbm_params(pool).ok();
    let mut report = json!({
        "kind": pool.kind(),
        "n_paths": pool.n_paths(),
        "window": pool.window(),
        "dt_years": pool.dt_years(),
        "horizon_years": pool.horizon_years(),
        "gbm_estimate": estimate,
    });
    if let (Value::Object(r), Value::Object(e)) = (&mut report, extra) {
        r.extend(e);
    }
    run.write_json("pool_report.json", &report)?;
    println!("wrote {} paths of {} steps to {}", pool.n_paths(), pool.window(), path.display());
    Ok(())
}

pub fn mv_ingest(run: &mut Run, csv: Option<&Path>, paths: Option<&Path>, normalize: bool) -> CliResult<()> {
    let pool = match (csv, paths) {
        (Some(csv), None) => {
            run.input("csv", csv)?;
            let f = File::open(csv).map_err(|e| CliError::io(format!("cannot open {}: {e}", csv.display())))?;
            ingest_index_csv(f, run.cfg.mv.window, normalize).map_err(|e| CliError::from(e).context(&csv.display().to_string()))?
        }
        (None, Some(p)) => {
            let set = run.read_paths("paths", p)?;
            MarketPathPool::from_path_set(PoolKind::Split, &set)?
        }
        _ => return Err(CliError::validation("give exactly one of --csv or --paths")),
    };
    save_pool(run, &pool, json!({}))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PoolChoice {
    Bootstrap,
    Synthetic,
    Mixed,
}

pub fn mv_pool(run: &mut Run, source: &Path, kind: PoolChoice, n: Option<usize>, bundle: Option<&Path>) -> CliResult<()> {
    let src = load_pool(run, "source", source)?;
    let n = n.unwrap_or(src.n_paths());
    require_positive("the number of pool paths", n)?;
    if kind == PoolChoice::Bootstrap {
        let pool = bootstrap_pool(&src, n, run.seed)?;
        return save_pool(run, &pool, json!({}));
    }
    let b = match bundle {
        Some(dir) => load_bundle(run, dir)?,
        None => {
            let data = src.to_path_set()?;
            let gen = run.cfg.mv.diffusion.clone();
            train_into(run, &data, &gen, derive_seed(run.seed, stage::TRAIN))?
        }
    };
    let synth = build_synthetic_market_pool(&b, n, run.seed)?;
    let extra = json!({ "rejected": synth.rejected });
    if synth.rejected > 0 {
        eprintln!("warning: {} synthetic paths rejected", synth.rejected);
    }
    let pool = match kind {
        PoolChoice::Mixed => MarketPathPool::mix(&src, &synth.pool)?,
        _ => synth.pool,
    };
    save_pool(run, &pool, extra)
}

/// Everything `mv train` learns from one pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub problem: MvProblem,
    pub emv: EmvPolicy,
    pub training: EmvTrainingReport,
    pub estimate: GbmEstimate,
    /// Absent when the fitted drift equals the riskless rate.
    pub plugin: Option<PluginPolicy>,
}

fn check_horizon(pool: &MarketPathPool, problem: &MvProblem) -> CliResult<()> {
    let (a, b) = (pool.horizon_years(), problem.horizon);
    if (a - b).abs() > 1e-9 * b.abs().max(1.0) {
        return Err(CliError::validation(format!("pool horizon {a} years differs from the problem horizon {b}")));
    }
    Ok(())
}

pub fn mv_train(run: &mut Run, pool: &Path) -> CliResult<()> {
    let p = load_pool(run, "pool", pool)?;
    let problem = run.cfg.mv.problem.clone();
    check_horizon(&p, &problem)?;
    let (emv, training) = train_emv(&p, &problem, &run.cfg.mv.emv, run.seed)?;
    let estimate = estimate_gbm_params(&p)?;
    let plugin = plugin_policy(estimate.mu_hat, estimate.sigma_hat, &problem).ok();
    let file = PolicyFile { problem, emv, training, estimate, plugin };
    run.write_json("policy.json", &file)?;
    println!("lagrange multiplier {:.4}, {} aborted episodes", file.emv.lagrange_w, file.training.aborted);
    Ok(())
}

/// `name=path` or a bare path named after its file stem.
fn named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(spec);
            // Artifacts share file names across runs, so keep the directory in the label.
            (p.with_extension("").to_string_lossy().into_owned(), p)
        }
    }
}

pub fn mv_evaluate(run: &mut Run, policies: &[String], pools: &[String]) -> CliResult<()> {
    if policies.is_empty() || pools.is_empty() {
        return Err(CliError::validation("give at least one --policy and one --pool"));
    }
    let mut loaded = Vec::new();
    for spec in policies {
        let (name, path) = named(spec);
        run.input(&format!("policy:{name}"), &path)?;
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let file: PolicyFile = serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        loaded.push((name, file));
    }
    let mut rows: Vec<(String, String, PolicyReport)> = Vec::new();
    for spec in pools {
        let (pool_name, path) = named(spec);
        let pool = load_pool(run, &format!("pool:{pool_name}"), &path)?;
        for (name, file) in &loaded {
            check_horizon(&pool, &file.problem)?;
            rows.push((format!("{name}/emv"), pool_name.clone(), evaluate_policy(&file.emv, &pool, &file.problem)?));
            if let Some(plug) = &file.plugin {
                rows.push((format!("{name}/plugin"), pool_name.clone(), evaluate_policy(plug, &pool, &file.problem)?));
            }
        }
    }
    let mut csv = Vec::new();
    write_policy_table(&mut csv, &rows)?;
    run.write_text("mv_table.csv", &csv)?;
    let report: Vec<Value> =
        rows.iter().map(|(policy, pool, r)| json!({ "policy": policy, "pool": pool, "report": r })).collect();
    run.write_json("mv_report.json", &json!({ "rows": report }))?;
    for (policy, pool, r) in &rows {
        println!("{policy:>20} on {pool:<12} mean {:.4}  var {:.6}  sharpe {:.4}", r.mean, r.variance, r.sharpe);
    }
    Ok(())
}
