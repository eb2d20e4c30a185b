//! `diffsde`: simulate SDE datasets, train and sample path generators,
//! score them, and run the mean-variance portfolio pipeline.

mod commands;
mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::PoolChoice;
use config::{ExperimentConfig, ExperimentKind};
use output::{CliError, CliResult};
use run::Run;

#[derive(Parser)]
#[command(name = "diffsde", version, about = "Learn to generate sample paths of an unknown SDE")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags win over the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set diffusion.train.steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Run seed; required here or in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    kind: Option<ExperimentKind>,
    /// Number of simulated paths H.
    #[arg(long, global = true)]
    n_paths: Option<usize>,
    /// Grid step in years.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Grid steps N_T.
    #[arg(long, global = true)]
    n_steps: Option<usize>,
    /// Diffusion steps K.
    #[arg(long, global = true)]
    diffusion_steps: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, global = true)]
    train_steps: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    shared_network: bool,
    /// Neighbour rank of the KL estimator.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// KL evaluation repeats.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[arg(long, global = true)]
    n_per_side: Option<usize>,
    /// Target terminal wealth z.
    #[arg(long, global = true)]
    target: Option<f64>,
    /// EMV training episodes.
    #[arg(long, global = true)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path set from the configured SDE.
    Simulate {
        /// Also write a CSV copy.
        #[arg(long)]
        csv: bool,
    },
    /// Train a generator bundle on a path set.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Sample paths from a trained bundle.
    Generate {
        #[arg(long)]
        bundle: PathBuf,
        /// Paths to generate (default `eval.n_generate`).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        csv: bool,
    },
    /// kNN KL divergence between the simulator and a bundle, with baselines.
    EvalKl {
        #[arg(long)]
        bundle: PathBuf,
        /// Training paths; enables the baseline samplers.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Mean and std curves of two path sets as CSV.
    EvalMoments {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
    },
    /// Mean-variance portfolio pipeline.
    #[command(subcommand)]
    Mv(MvCommand),
    /// OU dataset, training, generation and scoring in one go.
    ReproOu,
    /// Ten-dimensional GBM dataset, training, generation and scoring.
    ReproGbm,
}

#[derive(Subcommand)]
enum MvCommand {
    /// Cut an index CSV (`date,close`) or a one-dimensional path set into a split pool.
    Ingest {
        #[arg(long, conflicts_with = "paths")]
        csv: Option<PathBuf>,
        #[arg(long)]
        paths: Option<PathBuf>,
        /// Keep raw prices instead of dividing each window by its first close.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Build a bootstrap, synthetic or mixed pool from a source pool.
    Pool {
        #[arg(long)]
        source: PathBuf,
        #[arg(long = "type", value_enum)]
        pool_type: PoolChoice,
        /// Paths to draw (default: size of the source).
        #[arg(long)]
        n: Option<usize>,
        /// Existing generator; otherwise one is trained on the source.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Train the exploratory policy and fit the plug-in policy on a pool.
    Train {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Terminal-wealth statistics of policies on test pools.
    Evaluate {
        /// `name=policy.json` or a bare path; repeatable.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// `name=pool.bin` or a bare path; repeatable.
        #[arg(long = "pool", required = true)]
        pools: Vec<String>,
    },
}

fn resolve_config(c: &Common, kind: Option<ExperimentKind>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(c.config.as_deref(), &c.sets)?;
    if let Some(k) = kind.or(c.kind) {
        cfg.kind = k;
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if c.out.is_some() {
        cfg.out_dir = c.out.clone();
    }
    if c.n_paths.is_some() {
        cfg.n_paths = c.n_paths;
    }
    let mut cfg = cfg.resolve()?;
    if let Some(grid) = cfg.grid.as_mut() {
        if let Some(dt) = c.dt {
            grid.dt = dt;
        }
        if let Some(n) = c.n_steps {
            grid.n_steps = n;
        }
    }
    for gen in [&mut cfg.diffusion, &mut cfg.mv.diffusion] {
        if let Some(k) = c.diffusion_steps {
            gen.diffusion_steps = k;
        }
        if let Some(h) = &c.hidden {
            gen.net.hidden = h.clone();
        }
        if let Some(s) = c.train_steps {
            gen.train.steps = s;
        }
        if let Some(lr) = c.lr {
            gen.train.learning_rate = lr;
        }
    }
    if c.shared_network {
        cfg.diffusion.shared_network = true;
    }
    if let Some(k) = c.k {
        cfg.eval.k = k;
    }
    if let Some(r) = c.repeats {
        cfg.eval.n_repeats = r;
    }
    if let Some(n) = c.n_per_side {
        cfg.eval.n_per_side = n;
    }
    if let Some(z) = c.target {
        cfg.mv.problem.target = z;
    }
    if let Some(e) = c.episodes {
        cfg.mv.emv.episodes = e;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    }
    let c = &cli.common;
    match cli.command {
        Command::Simulate { csv } => {
            Run::execute(resolve_config(c, None)?, "simulate", json!({ "csv": csv }), |r| commands::simulate(r, csv))
        }
        Command::Train { data } => {
            Run::execute(resolve_config(c, None)?, "train", json!({ "data": data }), |r| commands::train(r, &data))
        }
        Command::Generate { bundle, n, csv } => Run::execute(
            resolve_config(c, None)?,
            "generate",
            json!({ "bundle": bundle, "n": n, "csv": csv }),
            |r| commands::generate(r, &bundle, n, csv),
        ),
        Command::EvalKl { bundle, data } => Run::execute(
            resolve_config(c, None)?,
            "eval-kl",
            json!({ "bundle": bundle, "data": data }),
            |r| commands::eval_kl(r, &bundle, data.as_deref()),
        ),
        Command::EvalMoments { real, synthetic } => Run::execute(
            resolve_config(c, None)?,
            "eval-moments",
            json!({ "real": real, "synthetic": synthetic }),
            |r| commands::eval_moments(r, &real, &synthetic),
        ),
        Command::ReproOu => Run::execute(resolve_config(c, Some(ExperimentKind::Ou))?, "repro-ou", json!({}), commands::repro),
        Command::ReproGbm => {
            Run::execute(resolve_config(c, Some(ExperimentKind::Gbm))?, "repro-gbm", json!({}), commands::repro)
        }
        Command::Mv(mv) => {
            let cfg = resolve_config(c, Some(ExperimentKind::Mv))?;
            match mv {
                MvCommand::Ingest { csv, paths, no_normalize } => Run::execute(
                    cfg,
                    "mv ingest",
                    json!({ "csv": csv, "paths": paths, "normalize": !no_normalize }),
                    |r| commands::mv_ingest(r, csv.as_deref(), paths.as_deref(), !no_normalize),
                ),
                MvCommand::Pool { source, pool_type, n, bundle } => Run::execute(
                    cfg,
                    "mv pool",
                    json!({ "source": source, "type": format!("{pool_type:?}").to_lowercase(), "n": n, "bundle": bundle }),
                    |r| commands::mv_pool(r, &source, pool_type, n, bundle.as_deref()),
                ),
                MvCommand::Train { pool } => {
                    Run::execute(cfg, "mv train", json!({ "pool": pool }), |r| commands::mv_train(r, &pool))
                }
                MvCommand::Evaluate { policies, pools } => Run::execute(
                    cfg,
                    "mv evaluate",
                    json!({ "policies": policies, "pools": pools }),
                    |r| commands::mv_evaluate(r, &policies, &pools),
                ),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::validation(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.kind.exit_code() as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.kind.exit_code() as u8)
        }
    }
}
