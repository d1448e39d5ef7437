use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::BcConfig;
use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::nn::DType;
use crate::pretrain::PretrainConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const DTYPE_ENV: &str = "TACOFORGE_DTYPE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    BatchSize,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub axis: Axis,
    pub values: Vec<usize>,
    /// Variants compared on the batch-size axis.
    pub variants: Vec<LossVariant>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            axis: Axis::Window,
            values: vec![1, 3, 5, 7, 9],
            variants: vec![LossVariant::PremierTaco, LossVariant::TacoBatch],
            seeds: vec![0, 1, 2],
            jobs: 1,
        }
    }
}

/// Inputs produced by earlier commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Directory written by `gen-data` (holds pretrain/, heldout/, probe/).
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Refuse to pretrain unless the dataset has this fingerprint.
    pub expect_fingerprint: Option<String>,
}

/// Everything a command may read, as one TOML document. Unknown keys are
/// rejected at every level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of whichever section the command uses.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dtype: Option<DType>,
    pub paths: PathsSection,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub bc: BcConfig,
    pub ablate: AblateSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Internal(format!("config serialization: {e}")))
    }

    /// Element type: `TACOFORGE_DTYPE` if set, else the file's `dtype`, else
    /// the pretraining section's.
    pub fn resolve_dtype(&mut self, env: Option<&str>) -> Result<DType> {
        if let Some(v) = env {
            let d = DType::parse(v).ok_or_else(|| Error::config(format!("{DTYPE_ENV}={v:?} is not f32 or f64")))?;
            self.dtype = Some(d);
        }
        let d = self.dtype.unwrap_or(self.pretrain.dtype);
        self.dtype = Some(d);
        self.pretrain.dtype = d;
        Ok(d)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::config("no output directory (pass --out or set `out` in the config)"))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.paths
            .data
            .as_deref()
            .ok_or_else(|| Error::config("no dataset directory (pass --data or set paths.data)"))
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.paths
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::config("no checkpoint (pass --checkpoint or set paths.checkpoint)"))
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Error::config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parses a comma-separated list such as `1,3,5`.
pub fn parse_values(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad value {v:?} in list {s:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(RunConfig::from_toml("seed = 1\n[pretrain]\nsteps = 10\n").is_ok());
        for bad in ["colour = 1", "[pretrain]\nstep = 10", "[data.latent_linear]\nnoise = 1", "[paths]\nckpt = \"a\""] {
            assert!(matches!(RunConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn snapshot_roundtrips() {
        let mut cfg = RunConfig::from_toml("seed = 4\ndtype = \"f64\"\n[ablate]\naxis = \"batch_size\"\nvalues = [32]\n").unwrap();
        cfg.bc.demos = Some(3);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn env_dtype_overrides_file() {
        let mut cfg = RunConfig::from_toml("dtype = \"f32\"").unwrap();
        assert_eq!(cfg.resolve_dtype(Some("f64")).unwrap(), DType::F64);
        assert_eq!(cfg.pretrain.dtype, DType::F64);
        assert!(cfg.resolve_dtype(Some("f16")).is_err());
    }

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("1, 3,5").unwrap(), vec![1, 3, 5]);
        assert!(parse_values("1,x").is_err());
    }
}
