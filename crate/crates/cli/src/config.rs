//! Run configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kneecast::dataset::SplitPolicy;
use kneecast::model::ModelHyper;
use kneecast::signal::PreprocessConfig;
use kneecast::train::{StagePlan, TrainConfig};
use kneecast::{Error, Result, Scenario};
use serde::{Deserialize, Serialize};

/// JSON Schema every configuration file is checked against.
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run_config.schema.json");

/// Which side of a split a data source keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    #[default]
    All,
    Train,
    Eval,
}

/// A named set of recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// CSV recordings or example caches. Relative paths are resolved
    /// against the configuration file's directory.
    pub recordings: Vec<PathBuf>,
    #[serde(default)]
    pub part: Part,
    /// Overrides the run's split for this source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitPolicy>,
    /// Overrides the run's scenario when building examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "one")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// The horizon comes from the top level.
    #[serde(default)]
    pub model: ModelHyper,
    /// Its seed is replaced by the run seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default)]
    pub data: BTreeMap<String, DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<StagePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            horizon: 1,
            seed: 0,
            preprocess: PreprocessConfig::default(),
            model: ModelHyper::default(),
            train: TrainConfig::default(),
            split: SplitPolicy::default(),
            data: BTreeMap::new(),
            plan: None,
            output_dir: None,
        }
    }

    /// Model hyperparameters with the run horizon applied.
    pub fn hyper(&self) -> ModelHyper {
        self.model.with_horizon(self.horizon)
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    /// Cross-field checks that the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.hyper().validate()?;
        self.train.validate()?;
        if self.model.window_len != self.preprocess.window.output_len() {
            return Err(Error::Config(format!(
                "model window_len {} does not match the {}-sample preprocessed window",
                self.model.window_len,
                self.preprocess.window.output_len()
            )));
        }
        if let Some(plan) = &self.plan {
            plan.order()?;
            for s in &plan.stages {
                for name in [Some(&s.train), s.validation.as_ref(), s.eval.as_ref()].into_iter().flatten() {
                    if !self.data.contains_key(name) {
                        return Err(Error::Config(format!("stage `{}` names unknown dataset `{name}`", s.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses, schema-checks and validates a configuration document.
    /// Relative data paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        check_schema(&value)?;
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        for source in config.data.values_mut() {
            for p in source.recordings.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Checks `value` against [`RUN_CONFIG_SCHEMA`], reporting every violation.
pub fn check_schema(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(RUN_CONFIG_SCHEMA).expect("bundled schema is JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    let problems: Vec<String> = validator
        .iter_errors(value)
        .map(|e| {
            let at = e.instance_path.to_string();
            format!("{}: {e}", if at.is_empty() { "/" } else { &at })
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("config does not match the schema: {}", problems.join("; "))))
    }
}
