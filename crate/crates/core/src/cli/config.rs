use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, SPLIT_RATIOS};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{FinetuneOverrides, LossConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

fn version() -> u32 {
    CONFIG_VERSION
}

/// Run configurations carry a schema version and validate themselves.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    fn version(&self) -> u32;
    fn validate(&self) -> Result<()>;
}

/// Reads `path` (or the defaults when absent) and checks the schema version.
/// Unknown keys are rejected by each config's serde attributes.
pub fn load<T: RunConfig>(path: Option<&Path>) -> Result<T> {
    let cfg: T = match path {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
            serde_json::from_slice(&fs::read(p)?)
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => T::default(),
    };
    if cfg.version() != CONFIG_VERSION {
        return Err(Error::config(format!(
            "config version {}, this build reads {CONFIG_VERSION}",
            cfg.version()
        )));
    }
    Ok(cfg)
}

/// Writes the effective configuration as pretty JSON.
pub fn echo<T: Serialize>(cfg: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One fixed room and microphone.
    Sim1,
    /// Random rooms, one microphone each, sources drawn per distance band.
    Sim2,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Sim1 => "sim1",
            Protocol::Sim2 => "sim2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpeech {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub secs: f64,
}

impl Default for SyntheticSpeech {
    fn default() -> Self {
        Self {
            speakers: 24,
            utterances_per_speaker: 4,
            secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildDatasetConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub protocol: Protocol,
    /// Sim1: number of RIRs in the fixed room.
    pub n_rirs: usize,
    /// Sim2: number of rooms.
    pub n_rooms: usize,
    /// Sim2: sources drawn in each distance band of each room.
    pub sources_per_band: usize,
    /// Directory with one sub-directory of WAVs per speaker. A synthetic
    /// corpus is generated under the output directory when absent.
    pub speech_dir: Option<PathBuf>,
    pub synthetic_speech: SyntheticSpeech,
    /// Train / validation / test proportions of RIRs (Sim1) or rooms (Sim2).
    pub split_ratios: [f64; 3],
    /// Relative share of speakers given to train / validation / test.
    pub speaker_split: [f64; 3],
    /// Mixtures generated per split.
    pub n_samples: [usize; 3],
    pub dataset: DatasetConfig,
    /// Also store each mixture and target as WAV files.
    pub write_audio: bool,
    pub seed: u64,
}

impl Default for BuildDatasetConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            protocol: Protocol::Sim1,
            n_rirs: 100,
            n_rooms: 10,
            sources_per_band: 4,
            speech_dir: None,
            synthetic_speech: SyntheticSpeech::default(),
            split_ratios: SPLIT_RATIOS,
            speaker_split: [128.0, 48.0, 64.0],
            n_samples: [200, 20, 40],
            dataset: DatasetConfig::default(),
            write_audio: false,
            seed: 0,
        }
    }
}

impl RunConfig for BuildDatasetConfig {
    fn version(&self) -> u32 {
        self.version
    }

    fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        match self.protocol {
            Protocol::Sim1 if self.n_rirs < 3 => {
                return Err(Error::config("sim1 needs n_rirs >= 3 to fill three splits"));
            }
            Protocol::Sim2 if self.n_rooms < 3 => {
                return Err(Error::config("sim2 needs n_rooms >= 3 to fill three splits"));
            }
            Protocol::Sim2 if self.sources_per_band == 0 => {
                return Err(Error::config("sources_per_band must be at least 1"));
            }
            _ => {}
        }
        for (name, r) in [("split_ratios", self.split_ratios), ("speaker_split", self.speaker_split)] {
            if r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::config(format!("{name} entries must be positive, got {r:?}")));
            }
        }
        if self.n_samples.iter().any(|&n| n == 0) {
            return Err(Error::config(format!("n_samples entries must be positive, got {:?}", self.n_samples)));
        }
        if self.speech_dir.is_none() {
            let s = &self.synthetic_speech;
            if s.utterances_per_speaker == 0 || !(s.secs > 0.0) {
                return Err(Error::config("synthetic_speech needs utterances and a positive duration"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    /// Output directory of `build-dataset`.
    pub dir: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            train: PathBuf::from("train.jsonl"),
            val: PathBuf::from("val.jsonl"),
            test: PathBuf::from("test.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub data: DataPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            data: DataPaths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig for TrainRunConfig {
    fn version(&self) -> u32 {
        self.version
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneRunConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub data: DataPaths,
    pub train: TrainConfig,
    pub overrides: FinetuneOverrides,
}

impl Default for FinetuneRunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            data: DataPaths::default(),
            train: TrainConfig::default(),
            overrides: FinetuneOverrides {
                epochs: Some(10),
                lr: Some(1e-4),
                r_spk: None,
                fraction: None,
            },
        }
    }
}

impl RunConfig for FinetuneRunConfig {
    fn version(&self) -> u32 {
        self.version
    }

    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.overrides.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateRunConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub data: DataPaths,
    /// One checkpoint per training seed; results are averaged over them.
    pub checkpoints: Vec<PathBuf>,
    /// Relabels the test samples with a different presence radius.
    pub r_spk: Option<f64>,
    pub tau_inactive: f64,
}

impl Default for EvaluateRunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            data: DataPaths::default(),
            checkpoints: Vec::new(),
            r_spk: None,
            tau_inactive: LossConfig::default().tau_inactive,
        }
    }
}

impl RunConfig for EvaluateRunConfig {
    fn version(&self) -> u32 {
        self.version
    }

    fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(Error::config("no checkpoint to evaluate (pass --checkpoint)"));
        }
        if let Some(r) = self.r_spk {
            if !(r > 0.0) {
                return Err(Error::config(format!("r_spk must be positive, got {r}")));
            }
        }
        if !(self.tau_inactive > 0.0) {
            return Err(Error::config("tau_inactive must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(default = "version")]
    pub version: u32,
    pub f1: f64,
    pub f2: f64,
    /// Sweep duration in seconds.
    pub duration: f64,
    /// Length of the written response; the whole tail when absent.
    pub rir_secs: Option<f64>,
    /// Treat band and duration mismatches as errors.
    pub strict: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            f1: 50.0,
            f2: 7_000.0,
            duration: 5.0,
            rir_secs: None,
            strict: false,
        }
    }
}

impl RunConfig for SweepConfig {
    fn version(&self) -> u32 {
        self.version
    }

    fn validate(&self) -> Result<()> {
        if !(self.f1 > 0.0 && self.f2 > self.f1 && self.duration > 0.0) {
            return Err(Error::config(format!(
                "sweep needs 0 < f1 < f2 and a positive duration, got f1 {} f2 {} duration {}",
                self.f1, self.f2, self.duration
            )));
        }
        if let Some(s) = self.rir_secs {
            if !(s > 0.0) {
                return Err(Error::config("rir_secs must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"version": 1, "protocol": "sim2", "n_rooms": 5}"#).unwrap();
        let c: BuildDatasetConfig = load(Some(&p)).unwrap();
        assert_eq!((c.protocol, c.n_rooms, c.n_rirs), (Protocol::Sim2, 5, 100));

        fs::write(&p, r#"{"version": 1, "n_room": 5}"#).unwrap();
        assert!(matches!(load::<BuildDatasetConfig>(Some(&p)), Err(Error::Config(_))));
        fs::write(&p, r#"{"version": 2}"#).unwrap();
        assert!(matches!(load::<BuildDatasetConfig>(Some(&p)), Err(Error::Config(_))));
        fs::write(&p, r#"{"train": {"lr": 0.01, "bogus": 1}}"#).unwrap();
        assert!(load::<TrainRunConfig>(Some(&p)).is_err());
        assert!(matches!(load::<TrainRunConfig>(Some(&dir.path().join("none.json"))), Err(Error::MissingFile(_))));
    }

    #[test]
    fn validation_catches_bad_physics() {
        let mut c = BuildDatasetConfig::default();
        c.validate().unwrap();
        c.dataset.r_spk = 0.0;
        assert!(c.validate().is_err());

        let mut t = TrainRunConfig::default();
        t.validate().unwrap();
        t.train.r_spk = -1.0;
        assert!(t.validate().is_err());

        let mut f = FinetuneRunConfig::default();
        f.overrides.r_spk = Some(0.0);
        assert!(f.validate().is_err());

        let e = EvaluateRunConfig::default();
        assert!(e.validate().is_err());

        let mut s = SweepConfig::default();
        s.validate().unwrap();
        s.f2 = 10.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = TrainRunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainRunConfig>(&text).unwrap(), c);
        assert_eq!(c.version, CONFIG_VERSION);
    }
}
