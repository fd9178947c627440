//! Run configuration: a TOML file layered over a named preset.

use std::path::{Path, PathBuf};

use ratgen::extract::ExtractParams;
use ratgen::forest::{ForestParams, DEFAULT_THRESHOLD};
use ratgen::genmodel::ModelConfig;
use ratgen::synth::{GrowParams, MotifSpec};
use ratgen::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub size: usize,
    pub motifs: Vec<MotifSpec>,
    pub grow: GrowParams,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            size: 2000,
            motifs: Vec::new(),
            grow: GrowParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub threshold: f64,
    /// Fraction of molecules held out for AUROC and faithfulness.
    pub holdout: f64,
    pub forest: ForestParams,
    pub split_seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            threshold: DEFAULT_THRESHOLD,
            holdout: 0.2,
            forest: ForestParams::default(),
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub params: ExtractParams,
    /// Positives searched per property; 0 means all.
    pub max_molecules: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            params: ExtractParams::default(),
            max_molecules: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Rationales taken from each single-property vocabulary.
    pub shortlist: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { shortlist: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub latent: usize,
    pub depth: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl ModelSection {
    fn from_config(c: ModelConfig) -> ModelSection {
        ModelSection {
            hidden: c.hidden,
            latent: c.latent,
            depth: c.depth,
            max_steps: c.max_steps,
            seed: 0,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            latent: self.latent,
            depth: self.depth,
            max_steps: self.max_steps,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from_config(ModelConfig::desk())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub seed: u64,
    /// Use a uniform rationale distribution instead of the fitted one.
    pub uniform: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n: 500,
            seed: 0,
            uniform: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaithfulnessConfig {
    /// Property to audit; empty means the first one.
    pub property: String,
    /// Ground-truth motif; empty means the synthetic motif of that name.
    pub motif: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Artifact directory, relative to the config file.
    pub run_dir: PathBuf,
    /// Labeled CSV; empty means the one written by `gen-synthetic`.
    pub labels: PathBuf,
    /// Label columns to use; empty means all.
    pub properties: Vec<String>,
    pub synthetic: SyntheticConfig,
    pub predictor: PredictorConfig,
    pub extract: ExtractConfig,
    pub merge: MergeConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub faithfulness: FaithfulnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> RunConfig {
        let mut c = RunConfig {
            preset: p,
            run_dir: PathBuf::from("run"),
            labels: PathBuf::new(),
            properties: Vec::new(),
            synthetic: SyntheticConfig::default(),
            predictor: PredictorConfig::default(),
            extract: ExtractConfig::default(),
            merge: MergeConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            faithfulness: FaithfulnessConfig::default(),
        };
        match p {
            Preset::Desk => {
                c.extract.params.rollout_floor = 1;
                c.train.k = 20;
                c.train.l = 10;
                c.train.pretrain_epochs = 3;
            }
            Preset::Paper => {
                c.model = ModelSection::from_config(ModelConfig::paper());
            }
        }
        c
    }

    /// Parses TOML text, filling unspecified values from its preset.
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Config(format!("preset: {e}")))?,
        };
        let mut base = toml::Table::try_from(RunConfig::preset(preset))
            .map_err(|e| CliError::Config(e.to_string()))?;
        merge_tables(&mut base, user);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// its directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.run_dir = base.join(&cfg.run_dir);
        if !cfg.labels.as_os_str().is_empty() {
            cfg.labels = base.join(&cfg.labels);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.predictor.holdout) {
            return bad(format!(
                "predictor.holdout {} outside [0, 1)",
                self.predictor.holdout
            ));
        }
        if !(0.0..=1.0).contains(&self.predictor.threshold) {
            return bad(format!(
                "predictor.threshold {} outside [0, 1]",
                self.predictor.threshold
            ));
        }
        let g = &self.synthetic.grow;
        if g.min_atoms == 0 || g.min_atoms > g.max_atoms {
            return bad("synthetic.grow needs 1 <= min_atoms <= max_atoms".into());
        }
        for m in &self.synthetic.motifs {
            if m.name.is_empty() || m.name.contains(',') {
                return bad(format!(
                    "motif name {:?} must be non-empty without commas",
                    m.name
                ));
            }
        }
        if self.model.hidden == 0 || self.model.latent == 0 || self.model.depth == 0 {
            return bad("model widths must be positive".into());
        }
        if self.extract.params.iterations == 0 || self.extract.params.max_atoms == 0 {
            return bad("extract iterations and max_atoms must be positive".into());
        }
        if self.merge.shortlist == 0 {
            return bad("merge.shortlist must be positive".into());
        }
        Ok(())
    }

    /// Labeled CSV path: explicit, or the synthetic one in the run directory.
    pub fn labels_path(&self) -> PathBuf {
        if self.labels.as_os_str().is_empty() {
            self.run_dir.join("labels.csv")
        } else {
            self.labels.clone()
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
