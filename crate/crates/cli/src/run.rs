use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use diffsde_core::sde::PathSet;

use crate::config::ExperimentConfig;
use crate::output::{file_digest, sha256_hex, Artifacts, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

/// One subcommand invocation: resolved config, inputs read, files written.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    command: String,
    args: Value,
    inputs: BTreeMap<String, String>,
    input_paths: Vec<PathBuf>,
    outputs: Vec<String>,
    art: Artifacts,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentConfig,
    args: &'a Value,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    /// Open the output directory, run `body`, then write the manifest. On
    /// failure everything this run wrote is removed.
    pub fn execute(
        cfg: ExperimentConfig,
        command: &str,
        args: Value,
        body: impl FnOnce(&mut Run) -> CliResult<()>,
    ) -> CliResult<()> {
        let seed = cfg.seed()?;
        let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(command.replace(' ', "-")));
        let art = Artifacts::open(&dir)?;
        let mut run = Run {
            cfg,
            seed,
            command: command.to_string(),
            args,
            inputs: BTreeMap::new(),
            input_paths: Vec::new(),
            outputs: Vec::new(),
            art,
        };
        match body(&mut run).and_then(|_| run.write_manifest()) {
            Ok(()) => Ok(()),
            Err(e) => {
                run.art.discard();
                Err(e)
            }
        }
    }

    pub fn dir(&self) -> &Path {
        self.art.dir()
    }

    /// Record an input file (or directory) and its digest.
    pub fn input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        if !path.exists() {
            return Err(CliError::io(format!("{label} {} does not exist", path.display())));
        }
        let digest = file_digest(path)?;
        self.inputs.insert(label.to_string(), digest);
        self.input_paths.push(fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()));
        Ok(())
    }

    /// Path for a new artifact. Refuses to overwrite an input.
    pub fn output(&mut self, name: &str) -> CliResult<PathBuf> {
        let target = self.art.dir().join(name);
        if let Ok(canon) = fs::canonicalize(&target) {
            if self.input_paths.iter().any(|p| p == &canon || canon.starts_with(p) || p.starts_with(&canon)) {
                return Err(CliError::validation(format!("refusing to overwrite input {}", target.display())));
            }
        }
        self.outputs.push(name.to_string());
        Ok(self.art.claim(name))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.output(name)?;
        fs::write(&path, crate::output::to_json_pretty(value)?)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_text(&mut self, name: &str, text: &[u8]) -> CliResult<()> {
        let path = self.output(name)?;
        fs::write(&path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn save_paths(&mut self, name: &str, paths: &PathSet) -> CliResult<()> {
        let path = self.output(name)?;
        paths.save(&path).map_err(|e| CliError::from(e).context(&format!("writing {}", path.display())))
    }

    /// Read a path set; `.csv` files take their time axis from the config grid.
    pub fn read_paths(&mut self, label: &str, path: &Path) -> CliResult<PathSet> {
        self.input(label, path)?;
        let ctx = |e: diffsde_core::Error| CliError::from(e).context(&path.display().to_string());
        if path.extension().is_some_and(|e| e == "csv") {
            let grid = self.cfg.time_grid()?;
            let f = fs::File::open(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
            return PathSet::read_csv(f, grid.t0, grid.dt).map_err(ctx);
        }
        PathSet::load(path).map_err(ctx)
    }

    /// Hash identifying the run: command, resolved config and arguments.
    pub fn config_hash(&self) -> CliResult<String> {
        let canonical = serde_json::to_string(&json!({
            "command": self.command,
            "config": self.cfg,
            "args": self.args,
        }))
        .map_err(|e| CliError::validation(e.to_string()))?;
        Ok(sha256_hex(canonical.as_bytes()))
    }

    fn write_manifest(&mut self) -> CliResult<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), file_digest(&self.art.dir().join(name))?);
        }
        let manifest = Manifest {
            format_version: 1,
            tool: "diffsde",
            version: env!("CARGO_PKG_VERSION"),
            core_version: diffsde_core::VERSION,
            command: &self.command,
            seed: self.seed,
            config_hash: self.config_hash()?,
            config: &self.cfg,
            args: &self.args,
            inputs: &self.inputs,
            outputs,
        };
        let text = crate::output::to_json_pretty(&manifest)?;
        self.art.write_bytes(MANIFEST, text.as_bytes())?;
        Ok(())
    }
}
