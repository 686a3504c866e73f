//! Run configuration files and provenance hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossbar::{PulseScheme, DEFAULT_SCHEME};
use crate::error::{Error, Result};
use crate::fit::{FitCoefficients, DEFAULT_COEFFS};
use crate::params::{PhysicalParams, DEFAULT_PARAMS};
use crate::stochastic::NoiseSpec;
use crate::trainer::TrainConfig;

/// Device inputs; unset paths fall back to the bundled files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceFiles {
    pub params: Option<PathBuf>,
    pub coeffs: Option<PathBuf>,
    pub scheme: Option<PathBuf>,
}

/// A loaded input together with the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct Sourced<T> {
    pub value: T,
    pub origin: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_or_bundled(path: Option<&Path>, bundled: &'static str, name: &str) -> Result<(String, String)> {
    match path {
        Some(p) => Ok((std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p.display().to_string())),
        None => Ok((bundled.to_string(), format!("<bundled {name}>"))),
    }
}

impl DeviceFiles {
    pub fn load_params(&self) -> Result<Sourced<PhysicalParams>> {
        let (text, origin) = read_or_bundled(self.params.as_deref(), DEFAULT_PARAMS, "parameters")?;
        let value = PhysicalParams::from_kv_str(&text, &origin)?;
        Ok(Sourced { value, sha256: sha256_hex(text.as_bytes()), origin })
    }

    pub fn load_coeffs(&self) -> Result<Sourced<FitCoefficients>> {
        let (text, origin) = read_or_bundled(self.coeffs.as_deref(), DEFAULT_COEFFS, "coefficients")?;
        let value = FitCoefficients::from_kv_str(&text, &origin)?;
        Ok(Sourced { value, sha256: sha256_hex(text.as_bytes()), origin })
    }

    pub fn load_scheme(&self) -> Result<Sourced<PulseScheme>> {
        let (text, origin) = read_or_bundled(self.scheme.as_deref(), DEFAULT_SCHEME, "pulse scheme")?;
        let value = PulseScheme::from_toml_str(&text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        Ok(Sourced { value, sha256: sha256_hex(text.as_bytes()), origin })
    }
}

/// Noise selection: a preset name with an optional σ override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSelection {
    pub preset: String,
    pub sigma: Option<f64>,
}

impl Default for NoiseSelection {
    fn default() -> Self {
        NoiseSelection { preset: "none".into(), sigma: None }
    }
}

impl NoiseSelection {
    pub fn resolve(&self, seed: u64) -> Result<NoiseSpec> {
        NoiseSpec::preset(&self.preset, self.sigma, seed)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Fp,
    #[default]
    Analog,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Fp => "fp",
            BackendKind::Analog => "analog",
        }
    }
}

/// Everything `train` needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub data_dir: PathBuf,
    pub device: DeviceFiles,
    pub noise: NoiseSelection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendKind::Analog,
            data_dir: PathBuf::from("data/mnist"),
            device: DeviceFiles::default(),
            noise: NoiseSelection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
