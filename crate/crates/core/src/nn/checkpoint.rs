use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Activation, Mlp};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// On-disk form of an [`Mlp`]: a JSON header plus the parameters as base64
/// little-endian `f64`, layer by layer, weights before biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub params: String,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(net: &Mlp) -> Self {
        let bytes: Vec<u8> = net.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        MlpCheckpoint {
            format_version: FORMAT_VERSION,
            layer_dims: net.layer_dims().to_vec(),
            activation: net.activation(),
            params: B64.encode(bytes),
        }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(ck: MlpCheckpoint) -> Result<Mlp> {
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported network format version {}", ck.format_version)));
        }
        let bytes = B64.decode(ck.params.as_bytes()).map_err(|e| Error::format(format!("bad parameter blob: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::format("parameter blob is not a whole number of f64"));
        }
        let params = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Mlp::from_params(ck.layer_dims, ck.activation, params)
    }
}

impl Mlp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MlpCheckpoint::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Mlp> {
        serde_json::from_str::<MlpCheckpoint>(s)?.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mlp> {
        Mlp::from_json(&fs::read_to_string(path)?)
    }
}
