use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use diffsde_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Io => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Validation, message: msg.into() }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Io, message: msg.into() }
    }

    pub fn context(self, what: &str) -> Self {
        CliError { kind: self.kind, message: format!("{what}: {}", self.message) }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::validation(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Output directory of one run. Everything written through it is removed
/// again by [`Artifacts::discard`], as is the directory if the run created it.
pub struct Artifacts {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn open(dir: &Path) -> CliResult<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Artifacts { dir: dir.to_path_buf(), created_dir, written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Reserve `name` inside the directory; the caller writes it.
    pub fn claim(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        path
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.claim(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn discard(self) {
        if self.created_dir {
            let _ = fs::remove_dir_all(&self.dir);
            return;
        }
        for path in self.written.iter().rev() {
            if path.is_dir() {
                let _ = fs::remove_dir_all(path);
            } else {
                let _ = fs::remove_file(path);
            }
            // Sidecars written next to a claimed file.
            let mut sidecar = path.clone().into_os_string();
            sidecar.push(".json");
            let _ = fs::remove_file(PathBuf::from(sidecar));
        }
    }
}

/// Hash of an input file, recorded in manifests.
pub fn file_digest(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut h = Sha256::new();
        for p in entries {
            h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            h.update(fs::read(&p).map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?);
        }
        return Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect());
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}
