//! Run configuration: one JSON document, flags override, the effective
//! copy is persisted next to every command's outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::AdvConfig;
use crate::baseline::BaselineConfig;
use crate::data::DEFAULT_CLIP_K;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Config(format!("unknown split '{s}' (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Normalized input features.
    Input,
    /// Encoder means.
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMethod {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub method: ReportMethod,
    pub representation: Representation,
    pub perplexity: f64,
    pub iterations: usize,
    /// Stratified subsample size applied before embedding.
    pub subsample: Option<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            method: ReportMethod::Pca,
            representation: Representation::Latent,
            perplexity: 30.0,
            iterations: 1000,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Raw CSV consumed by `prepare`.
    pub data: Option<PathBuf>,
    pub label_col: String,
    /// Prepared splits are written here and every later command reads from
    /// and writes to it.
    pub out_dir: PathBuf,
    /// Seed for splitting, baselines and embeddings.
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub clip_k: f64,
    pub threshold: f64,
    /// Split used by `evaluate`, `baseline` and `report`.
    pub split: SplitName,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub adversary: AdvConfig,
    pub baseline: BaselineConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            label_col: "Class".into(),
            out_dir: PathBuf::from("out"),
            seed: 42,
            split_fractions: [0.7, 0.15, 0.15],
            clip_k: DEFAULT_CLIP_K,
            threshold: 0.5,
            split: SplitName::Test,
            checkpoint: None,
            model: ModelConfig::default(),
            adversary: AdvConfig::default(),
            baseline: BaselineConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub label_col: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub split: Option<SplitName>,
    pub method: Option<ReportMethod>,
    pub representation: Option<Representation>,
    pub subsample: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// `--seed` sets both the run seed and the model seed.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
            self.model.seed = s;
        }
        if let Some(d) = &o.data {
            self.data = Some(d.clone());
        }
        if let Some(l) = &o.label_col {
            self.label_col = l.clone();
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.split {
            self.split = s;
        }
        if let Some(m) = o.method {
            self.report.method = m;
        }
        if let Some(r) = o.representation {
            self.report.representation = r;
        }
        if o.subsample.is_some() {
            self.report.subsample = o.subsample;
        }
        if let Some(c) = &o.checkpoint {
            self.checkpoint = Some(c.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adversary.validate()?;
        self.baseline.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if !(self.clip_k > 0.0) {
            return Err(Error::Config("clip_k must be positive".into()));
        }
        if !(self.report.perplexity > 0.0) {
            return Err(Error::Config("report.perplexity must be positive".into()));
        }
        if self.report.subsample == Some(0) {
            return Err(Error::Config("report.subsample must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"latent": 3}}"#).is_err());
        let c = RunConfig::from_json(r#"{"model": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.model.epochs, 3);
        assert_eq!(c.model.latent_dim, 8);
    }

    #[test]
    fn materialized_copy_roundtrips() {
        let c = RunConfig::default();
        let text = c.to_json().unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert!(text.contains("\"n_aug_per_batch\""));
    }

    #[test]
    fn seed_flag_reaches_model() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            seed: Some(7),
            ..Default::default()
        });
        assert_eq!((c.seed, c.model.seed), (7, 7));
    }
}
