use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::ClassicalMethod;
use crate::error::{Error, Result};
use crate::imgproc::NormalizeMode;
use crate::neural::{NetworkSpec, StageSpec, TrainConfig};
use crate::represent::RepresentationKind;

pub const CONFIG_FILE: &str = "run_config.json";
pub const HASH_FILE: &str = "run_config.sha256";

/// Inputs of a classical regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Tamura,
    Participant,
    /// `[Tamura | participant]` concatenated.
    Both,
}

/// Width and depth of the residual towers plus training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralSettings {
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Share of the training participants held out for checkpoint selection.
    pub validation_fraction: f64,
}

impl Default for NeuralSettings {
    fn default() -> Self {
        Self {
            stem_width: 8,
            stage_widths: vec![8, 16, 32, 64],
            blocks_per_stage: 2,
            hidden: vec![2048, 2048],
            train: TrainConfig::default(),
            validation_fraction: 0.2,
        }
    }
}

impl NeuralSettings {
    pub fn network_spec(&self, kind: RepresentationKind, participant_dim: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::desk_scale(kind, participant_dim);
        for t in &mut spec.towers {
            t.stem_width = self.stem_width;
            t.stages = self
                .stage_widths
                .iter()
                .enumerate()
                .map(|(i, &width)| StageSpec { width, blocks: self.blocks_per_stage, stride: if i == 0 { 1 } else { 2 } })
                .collect();
        }
        spec.hidden = self.hidden.clone();
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelFamily {
    Classical { method: ClassicalMethod, features: FeatureSet },
    Neural(NeuralSettings),
}

impl ModelFamily {
    pub fn is_neural(&self) -> bool {
        matches!(self, Self::Neural(_))
    }
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub representation: RepresentationKind,
    pub normalize: NormalizeMode,
    pub with_participant_data: bool,
    pub with_concentration: bool,
    pub model: ModelFamily,
    pub samples_per_video: usize,
    pub folds: usize,
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, model: ModelFamily) -> Self {
        let output_dir = output_dir.into();
        Self {
            manifest: manifest.into(),
            cache_dir: output_dir.join("cache"),
            output_dir,
            representation: RepresentationKind::SingleFrame,
            normalize: NormalizeMode::default(),
            with_participant_data: false,
            with_concentration: false,
            model,
            samples_per_video: crate::dataio::SAMPLES_PER_VIDEO,
            folds: 3,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("at least 2 folds are needed".into()));
        }
        if self.samples_per_video == 0 || self.workers == 0 {
            return Err(Error::Config("samples per video and workers must be at least 1".into()));
        }
        if let RepresentationKind::DenseFlow { stride } | RepresentationKind::TwoStream { stride, .. } = self.representation {
            if stride == 0 {
                return Err(Error::Config("flow stride must be at least 1".into()));
            }
        }
        if self.with_concentration && !self.with_participant_data {
            return Err(Error::Config("concentration is only used together with participant data".into()));
        }
        if let ModelFamily::Neural(n) = &self.model {
            if !(0.0..1.0).contains(&n.validation_fraction) {
                return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
            }
            n.network_spec(self.representation, 0).validate()?;
        }
        Ok(())
    }

    /// Length of the participant vector fed to the models (0 when off).
    pub fn participant_dim(&self) -> usize {
        match (self.with_participant_data, self.with_concentration) {
            (false, _) => 0,
            (true, false) => 3,
            (true, true) => 4,
        }
    }

    /// Row label in reports.
    pub fn method_name(&self) -> String {
        let suffix = if self.with_participant_data { "+participant" } else { "" };
        match &self.model {
            ModelFamily::Classical { method: ClassicalMethod::Zeror, .. } => "ZeroR".into(),
            ModelFamily::Classical { method, features } => {
                let f = match features {
                    FeatureSet::Tamura => "tamura",
                    FeatureSet::Participant => "participant",
                    FeatureSet::Both => "tamura+participant",
                };
                format!("{}[{f}]", method.name())
            }
            ModelFamily::Neural(_) => format!("resnet[{}]{suffix}", self.representation),
        }
    }

    /// Canonical JSON; field order is fixed by the struct layout.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Writes the config and its hash into `dir`.
    pub fn snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join(CONFIG_FILE);
        fs::write(&cfg, self.to_json()).map_err(|e| Error::io(&cfg, e))?;
        let h = dir.join(HASH_FILE);
        fs::write(&h, format!("{}\n", self.hash())).map_err(|e| Error::io(&h, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::new("m.csv", "out", ModelFamily::Neural(NeuralSettings::default()))
    }

    #[test]
    fn json_round_trip_keeps_the_hash() {
        let mut c = cfg();
        c.representation = RepresentationKind::DenseFlow { stride: 10 };
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        c.seed = 1;
        assert_ne!(back.hash(), c.hash());
    }

    #[test]
    fn default_neural_settings_are_desk_scale() {
        let spec = NeuralSettings::default().network_spec(RepresentationKind::SingleFrame, 0);
        assert_eq!(spec, NetworkSpec::desk_scale(RepresentationKind::SingleFrame, 0));
    }

    #[test]
    fn participant_dim_follows_flags() {
        let mut c = cfg();
        assert_eq!(c.participant_dim(), 0);
        c.with_participant_data = true;
        assert_eq!(c.participant_dim(), 3);
        c.with_concentration = true;
        assert_eq!(c.participant_dim(), 4);
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        let mut c = cfg();
        c.folds = 1;
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
        let mut c = cfg();
        c.representation = RepresentationKind::DenseFlow { stride: 0 };
        assert!(c.validate().is_err());
    }
}
