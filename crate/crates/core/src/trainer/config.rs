use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{load_face_directory, synth_face, ConditionMode, EdgeConfig, ExampleConfig, MaskConfig};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{LabelConvention, LossWeights};
use crate::model::{DiscriminatorConfig, GeneratorConfig};
use crate::optim::AdamConfig;

/// `synthetic:<n>` or a directory path (optionally prefixed with `dir:`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    Synthetic(usize),
    Directory(PathBuf),
}

impl DatasetSource {
    /// Materializes the dataset at `side`. Synthetic face `i` uses seed
    /// `base_seed + i`, so the same seed always yields the same faces.
    pub fn load(&self, side: usize, base_seed: u64) -> Result<Vec<Image>> {
        match self {
            Self::Synthetic(0) => Err(Error::EmptyDataset("synthetic dataset of size 0".into())),
            Self::Synthetic(n) => Ok((0..*n as u64).map(|i| synth_face(base_seed.wrapping_add(i), side)).collect()),
            Self::Directory(p) => load_face_directory(p, side),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(n) = s.strip_prefix("synthetic:") {
            return n
                .parse()
                .map(Self::Synthetic)
                .map_err(|_| Error::Config(format!("bad synthetic dataset size {n:?}")));
        }
        let path = s.strip_prefix("dir:").unwrap_or(s);
        if path.is_empty() {
            return Err(Error::Config("empty dataset path".into()));
        }
        Ok(Self::Directory(PathBuf::from(path)))
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synthetic(n) => write!(f, "synthetic:{n}"),
            Self::Directory(p) => write!(f, "dir:{}", p.display()),
        }
    }
}

impl Serialize for DatasetSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How generator and discriminator updates interleave.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternation {
    /// Generator then discriminator on every batch.
    #[default]
    Step,
    /// All generator updates of an epoch, then all discriminator updates.
    Epoch,
}

/// Which image the generator losses and the discriminator see.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTarget {
    #[default]
    Composite,
    Raw,
}

/// Everything a run needs. Loadable from TOML; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Stops after this many generator updates when set.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub optimizer_g: AdamConfig,
    pub optimizer_d: AdamConfig,
    pub weights: LossWeights,
    pub labels: LabelConvention,
    pub mask: MaskConfig,
    pub edge: EdgeConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub dataset: DatasetSource,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub mode: ConditionMode,
    pub alternate: Alternation,
    pub loss_on: LossTarget,
    /// Zero the condition channel everywhere (training and inference).
    pub ablate_condition: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 1,
            max_steps: None,
            batch_size: 8,
            optimizer_g: AdamConfig::default(),
            optimizer_d: AdamConfig::default(),
            weights: LossWeights::default(),
            labels: LabelConvention::default(),
            mask: MaskConfig::default(),
            edge: EdgeConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            dataset: DatasetSource::Synthetic(64),
            checkpoint_every: 0,
            mode: ConditionMode::Edge,
            alternate: Alternation::Step,
            loss_on: LossTarget::Composite,
            ablate_condition: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1 when set".into()));
        }
        if self.mode == ConditionMode::Sketch {
            return Err(Error::Config(
                "sketch-mode training needs paired sketches, which no dataset source provides; train in edge mode".into(),
            ));
        }
        self.optimizer_g.validate()?;
        self.optimizer_d.validate()?;
        self.weights.validate()?;
        self.labels.validate()?;
        self.generator.validate()?;
        self.discriminator.validate(self.generator.image_side)?;
        self.example_config().validate()
    }

    pub fn example_config(&self) -> ExampleConfig {
        ExampleConfig {
            mask: self.mask.clone(),
            edge: self.edge.clone(),
            mode: self.mode,
            noise_channels: self.generator.noise_channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_source_parses_and_prints() {
        assert_eq!("synthetic:12".parse::<DatasetSource>().unwrap(), DatasetSource::Synthetic(12));
        assert_eq!("dir:/a/b".parse::<DatasetSource>().unwrap(), DatasetSource::Directory("/a/b".into()));
        assert_eq!("faces".parse::<DatasetSource>().unwrap(), DatasetSource::Directory("faces".into()));
        assert!("synthetic:x".parse::<DatasetSource>().is_err());
        assert_eq!(DatasetSource::Synthetic(3).to_string(), "synthetic:3");
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = TrainConfig { seed: 9, epochs: 3, max_steps: Some(5), ..Default::default() };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = TrainConfig::from_toml_str("seed = 4\ndataset = \"synthetic:8\"\n[weights]\nlambda4 = 5.0\n").unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.weights.lambda4, 5.0);
        assert_eq!(partial.weights.lambda1, 0.5);
        assert_eq!(partial.batch_size, 8);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in ["epochs = 0", "batch_size = 0", "no_such_key = 1", "mode = \"sketch\"", "[edge]\nthreshold = 1.5"] {
            assert!(matches!(TrainConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
