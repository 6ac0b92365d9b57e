//! JSON manifest listing synthesized pairs. Paths are stored relative to the
//! manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalEntry;
use crate::image::{Image, NoiseLevelMap};
use crate::noise_model::TrainingPair;
use crate::scalar::Scalar;
use crate::training::{Dataset, Sample};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    pub sigma_s: f64,
    pub sigma_c: f64,
    /// `[σ_y, σ_z]` for AWGN pairs, `[σ, 0]` for evaluation pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awgn: Option<[f64; 2]>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_seed: u64,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    pub fn new(run_seed: u64, config_hash: String, root: impl Into<PathBuf>) -> Self {
        Self {
            run_seed,
            config_hash,
            entries: Vec::new(),
            root: root.into(),
        }
    }

    /// Directory that entry paths are relative to.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Fails unless the manifest was produced under the same synthesis
    /// settings as `cfg`.
    pub fn check_config(&self, cfg: &TrainConfig) -> Result<()> {
        let found = cfg.synthesis_hash();
        if found == self.config_hash {
            Ok(())
        } else {
            Err(Error::ConfigHashMismatch {
                expected: self.config_hash.clone(),
                found,
            })
        }
    }

    /// Loads every entry: entries without a target are clean images for
    /// on-the-fly pairing, the rest are stored pairs.
    pub fn dataset<T: Scalar>(&self, channels: usize) -> Result<Dataset<T>> {
        let mut samples = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let source = Image::load(&self.resolve(&e.source), Some(channels))?;
            let Some(target) = &e.target else {
                samples.push(Sample::Clean(source));
                continue;
            };
            let target = Image::load(&self.resolve(target), Some(channels))?;
            let (h, w) = source.dims();
            let target_map = match &e.map {
                Some(m) => NoiseLevelMap::load_npy(&self.resolve(m))?,
                None => NoiseLevelMap::zeros(h, w),
            };
            if !source.same_shape(&target) || target_map.dims() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: pair files are not aligned",
                    e.source.display()
                )));
            }
            samples.push(Sample::Pair(TrainingPair {
                source,
                target,
                target_map,
            }));
        }
        Ok(Dataset { samples })
    }

    /// (noisy, reference) pairs for evaluation; entries without a target are
    /// skipped.
    pub fn eval_entries(&self) -> Vec<EvalEntry> {
        self.entries
            .iter()
            .filter_map(|e| {
                e.target.as_ref().map(|t| EvalEntry {
                    noisy: self.resolve(&e.source),
                    reference: self.resolve(t),
                })
            })
            .collect()
    }
}
