//! JSON run configuration. Values resolve as preset, then file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{load_xyz, Dataset};
use crate::toy::{make_toy_dataset, ToyKind};
use crate::train::TrainConfig;
use equiformer::model::{Mode, ModelConfig};
use equiformer::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub preset: Option<String>,
    pub mode: Option<Mode>,
    /// Field overrides on the preset's model config.
    #[serde(default)]
    pub model: Map<String, Value>,
    /// Field overrides on the preset's training config.
    #[serde(default)]
    pub train: Map<String, Value>,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub out: OutSpec,
    #[serde(default)]
    pub audit: AuditSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Extended-XYZ training file; relative paths resolve against the config file.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Synthetic data when no training file is given.
    pub toy: Option<ToySpec>,
    /// Frames held out from the end of the training data for validation.
    #[serde(default)]
    pub val_frames: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutSpec {
    pub params: Option<PathBuf>,
    /// Per-epoch CSV log.
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    pub seed: u64,
    pub rotations: usize,
    pub atoms: usize,
    pub instances: usize,
    pub entries_per_leaf: usize,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            rotations: 20,
            atoms: 6,
            instances: 10,
            entries_per_leaf: 3,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSpec,
    pub out: OutSpec,
    pub audit: AuditSpec,
}

fn merge<T: Serialize + for<'de> Deserialize<'de>>(base: &T, overrides: &Map<String, Value>, what: &str) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("config serializes to an object");
    for (k, val) in overrides {
        if !obj.contains_key(k) {
            return Err(Error::Config(format!("unknown {what} field `{k}`")));
        }
        obj.insert(k.clone(), val.clone());
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what} config: {e}")))
}

impl RunFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut file: RunFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.data.train, &mut file.data.val, &mut file.out.params, &mut file.out.log]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(file)
    }

    pub fn resolve(&self, cli: &Overrides) -> Result<RunConfig> {
        let preset = cli.preset.clone().or_else(|| self.preset.clone()).unwrap_or_else(|| "toy".into());
        let mode = cli.mode.or(self.mode).unwrap_or(Mode::Se3);
        let model = merge(&ModelConfig::preset(&preset, mode)?, &self.model, "model")?;
        model.validate()?;
        let mut train = merge(&TrainConfig::preset(&preset)?, &self.train, "train")?;
        if let Some(s) = cli.seed {
            train.seed = s;
        }
        train.validate()?;
        Ok(RunConfig {
            model,
            train,
            data: self.data.clone(),
            out: self.out.clone(),
            audit: self.audit.clone(),
        })
    }
}

impl RunConfig {
    /// Training and validation sets.
    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let forces = self.train.force_weight > 0.0;
        let mut train = match (&self.data.train, &self.data.toy) {
            (Some(p), _) => load_xyz(p, forces)?,
            (None, Some(t)) => make_toy_dataset(t.kind, t.frames, t.seed),
            (None, None) => return Err(Error::Config("config names no training data (data.train or data.toy)".into())),
        };
        let mut val = match &self.data.val {
            Some(p) => Some(load_xyz(p, forces)?),
            None => None,
        };
        if self.data.val_frames > 0 {
            if self.data.val_frames >= train.len() {
                return Err(Error::Config(format!(
                    "val_frames {} leaves no training frames out of {}",
                    self.data.val_frames,
                    train.len()
                )));
            }
            let (a, b) = train.split(train.len() - self.data.val_frames);
            train = a;
            val = Some(b);
        }
        Ok((train, val))
    }
}
