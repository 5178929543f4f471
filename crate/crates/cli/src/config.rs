//! TOML files read by the subcommands. Every table is optional and falls back
//! to the library defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fluoroden::io::{load_sequence, make_windows_with_radius, sample_patches, split_train_val};
use fluoroden::nn::{Msr2auConfig, StudentConfig};
use fluoroden::training::{AblationSettings, OptimizerConfig, Step2Config, SyntheticSplit};
use fluoroden::TrainingWindow;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// Where training patches come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Noisy sequence manifests (or directories holding `manifest.txt`).
    pub manifests: Vec<PathBuf>,
    pub patch_size: usize,
    pub patches: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifests: Vec::new(),
            patch_size: 32,
            patches: 2000,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl DataConfig {
    /// Loads every manifest, builds windows of `radius` and samples the
    /// train/validation patch sets.
    pub fn windows(&self, radius: usize) -> Result<(Vec<TrainingWindow>, Vec<TrainingWindow>)> {
        if self.manifests.is_empty() {
            bail!("data.manifests is empty");
        }
        let mut windows = Vec::new();
        for m in &self.manifests {
            let seq = load_sequence(m)?;
            windows.extend(make_windows_with_radius(&seq, radius)?);
        }
        let patches = sample_patches(&windows, self.patches, self.patch_size, self.seed)?;
        let (train, val) = split_train_val(patches, self.val_fraction, self.seed ^ 0x5eed)?;
        log::info!("{} training and {} validation patches", train.len(), val.len());
        Ok((
            train.into_iter().map(|p| p.window).collect(),
            val.into_iter().map(|p| p.window).collect(),
        ))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Step1File {
    pub data: DataConfig,
    pub teacher: Msr2auConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Step2File {
    pub data: DataConfig,
    /// Expected teacher architecture; checked against the checkpoint when given.
    pub teacher: Option<Msr2auConfig>,
    pub student: StudentConfig,
    pub step2: Step2Config,
    pub optimizer: OptimizerConfig,
    /// Seeds the student initialization.
    pub init_seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateFile {
    pub data: SyntheticSplit,
    pub settings: AblationSettings,
}
