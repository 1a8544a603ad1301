use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainHistory};
use super::finetune::{ensure_disjoint, finetune, holdout};
use super::fit::train;
use super::transfer::{transfer, GraftReport};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::dataset::PreprocessedExample;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::metrics::{evaluate_model, MetricsReport};
use crate::model::{build_model, ModelGraph, ModelHyper, ParamGroup};
use crate::scenario::Scenario;
use crate::signal::PreprocessConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// Fresh model trained from its seed.
    PrimaryTrain,
    /// Graft the parent into a kinematic scenario, then train.
    SicToDic,
    /// Continue training the parent on pooled data.
    PopulationAdapt,
    /// Adapt the parent to one subject and score it.
    SubjectFinetune,
}

fn one() -> f64 {
    1.0
}

/// One node of a stage plan. Dataset fields name entries of the map passed
/// to [`run_stage_plan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
    /// Stage whose model this one starts from.
    #[serde(default)]
    pub after: Option<String>,
    /// Gradient data.
    pub train: String,
    /// Early-stopping data; defaults to the last fifth of `train`.
    #[serde(default)]
    pub validation: Option<String>,
    /// Scored after the stage; never touched by gradients.
    #[serde(default)]
    pub eval: Option<String>,
    /// Model scenario for `primary_train` and `sic_to_dic`.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default = "one")]
    pub lr_scale: f64,
    #[serde(default)]
    pub freeze: Vec<ParamGroup>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
}

/// Settings shared by every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSettings {
    pub scenario: Scenario,
    pub hyper: ModelHyper,
    pub seed: u64,
    pub train: TrainConfig,
    /// Preprocessing the datasets went through; recorded in checkpoints
    /// and used for the overlap check.
    pub preprocess: PreprocessConfig,
    /// Checkpoint, history and metrics files go here when set.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct StageArtifact {
    pub name: String,
    pub kind: StageKind,
    pub model: ModelGraph,
    pub history: TrainHistory,
    pub graft: Option<GraftReport>,
    pub metrics: Option<MetricsReport>,
    /// Parent model on the evaluation set, for fine-tune stages.
    pub zero_shot: Option<MetricsReport>,
    pub checkpoint: Option<PathBuf>,
}

impl StagePlan {
    /// Checks names, parents and acyclicity; returns stage indices in
    /// execution order.
    pub fn order(&self) -> Result<Vec<usize>> {
        let mut index = HashMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if index.insert(s.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate stage name `{}`", s.name)));
            }
        }
        let mut parent = vec![None; self.stages.len()];
        for (i, s) in self.stages.iter().enumerate() {
            match (&s.after, s.kind) {
                (Some(p), StageKind::PrimaryTrain) => {
                    return Err(Error::Config(format!("primary stage `{}` cannot start after `{p}`", s.name)));
                }
                (None, StageKind::PrimaryTrain) => {}
                (None, _) => return Err(Error::Config(format!("stage `{}` needs an `after` stage", s.name))),
                (Some(p), _) => {
                    let j = *index
                        .get(p.as_str())
                        .ok_or_else(|| Error::Config(format!("stage `{}` follows unknown stage `{p}`", s.name)))?;
                    parent[i] = Some(j);
                }
            }
        }
        // depth by walking parents; a walk longer than the plan is a cycle
        let mut depth = vec![0usize; self.stages.len()];
        for (i, d) in depth.iter_mut().enumerate() {
            let mut cur = i;
            while let Some(p) = parent[cur] {
                *d += 1;
                if *d > self.stages.len() {
                    return Err(Error::Config(format!("stage `{}` is part of a cycle", self.stages[i].name)));
                }
                cur = p;
            }
        }
        let mut order: Vec<usize> = (0..self.stages.len()).collect();
        order.sort_by_key(|&i| depth[i]);
        Ok(order)
    }
}

fn dataset<'a>(data: &'a BTreeMap<String, Vec<PreprocessedExample>>, name: &str, stage: &str) -> Result<&'a [PreprocessedExample]> {
    data.get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Config(format!("stage `{stage}` names unknown dataset `{name}`")))
}

fn stage_scenario(plan: &StagePlan, i: usize, settings: &PlanSettings) -> Scenario {
    let s = &plan.stages[i];
    match s.kind {
        StageKind::PrimaryTrain => s.scenario.unwrap_or(settings.scenario),
        StageKind::SicToDic => s.scenario.unwrap_or_else(|| {
            let parent = plan.stages.iter().position(|p| Some(&p.name) == s.after.as_ref()).expect("validated");
            match stage_scenario(plan, parent, settings) {
                Scenario::SicF | Scenario::DicF => Scenario::DicF,
                _ => Scenario::Dic,
            }
        }),
        _ => {
            let parent = plan.stages.iter().position(|p| Some(&p.name) == s.after.as_ref()).expect("validated");
            stage_scenario(plan, parent, settings)
        }
    }
}

fn validate_data(
    plan: &StagePlan,
    settings: &PlanSettings,
    data: &BTreeMap<String, Vec<PreprocessedExample>>,
) -> Result<()> {
    for (i, s) in plan.stages.iter().enumerate() {
        let scenario = stage_scenario(plan, i, settings);
        if s.kind == StageKind::SicToDic && !scenario.uses_kinematics() {
            return Err(Error::Config(format!("stage `{}` must target DIC or DIC_F", s.name)));
        }
        let train_set = dataset(data, &s.train, &s.name)?;
        let mut named = vec![train_set];
        if let Some(v) = &s.validation {
            named.push(dataset(data, v, &s.name)?);
        }
        if let Some(e) = &s.eval {
            let eval = dataset(data, e, &s.name)?;
            ensure_disjoint(&s.name, train_set, eval, &settings.preprocess.window)?;
            named.push(eval);
        }
        for set in named {
            if set.iter().any(|e| e.window.forces.is_some() != scenario.uses_forces()) {
                return Err(Error::Config(format!("stage `{}` data does not match the {scenario} inputs", s.name)));
            }
        }
    }
    Ok(())
}

fn write_artifacts(dir: &std::path::Path, a: &StageArtifact, settings: &PlanSettings) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join(format!("{}.ckpt", a.name));
    let c = Checkpoint { model: a.model.clone(), preprocess: settings.preprocess, seed: settings.seed };
    save_checkpoint(&c, &ckpt)?;
    write_atomic(&dir.join(format!("{}.history.json", a.name)), a.history.to_json().as_bytes())?;
    if let Some(m) = &a.metrics {
        write_atomic(&dir.join(format!("{}.metrics.json", a.name)), m.to_json().as_bytes())?;
    }
    if let Some(g) = &a.graft {
        let json = serde_json::to_string_pretty(g).expect("graft serialize");
        write_atomic(&dir.join(format!("{}.graft.json", a.name)), json.as_bytes())?;
    }
    Ok(ckpt)
}

/// Runs every stage of `plan` in dependency order.
///
/// The whole plan, including the absence of overlap between each stage's
/// gradient data and its evaluation set, is validated before any training.
pub fn run_stage_plan(
    plan: &StagePlan,
    settings: &PlanSettings,
    data: &BTreeMap<String, Vec<PreprocessedExample>>,
) -> Result<Vec<StageArtifact>> {
    let order = plan.order()?;
    validate_data(plan, settings, data)?;
    let mut done: HashMap<String, ModelGraph> = HashMap::new();
    let mut artifacts = Vec::with_capacity(order.len());
    for i in order {
        let s = &plan.stages[i];
        let mut config = settings.train;
        config.lr_scale = s.lr_scale;
        if let Some(e) = s.max_epochs {
            config.max_epochs = e;
        }
        let train_set = dataset(data, &s.train, &s.name)?;
        let eval_set = s.eval.as_deref().map(|e| dataset(data, e, &s.name)).transpose()?;
        let (fit, val) = match &s.validation {
            Some(v) => (train_set, dataset(data, v, &s.name)?),
            None => holdout(train_set),
        };
        let parent = s.after.as_ref().map(|p| done[p].clone());
        let scenario = stage_scenario(plan, i, settings);
        let mut graft = None;
        let mut start = match (s.kind, parent) {
            (StageKind::PrimaryTrain, _) => build_model(scenario, settings.hyper, settings.seed)?,
            (StageKind::SicToDic, Some(p)) => {
                let (m, report) = transfer(&p, scenario, *p.hyper(), settings.seed)?;
                graft = Some(report);
                m
            }
            (_, Some(p)) => p,
            (_, None) => unreachable!("validated by order()"),
        };
        for g in &s.freeze {
            let scale = start.group_settings(*g).map_or(1.0, |x| x.lr_scale);
            start.set_group_training(*g, false, scale)?;
        }
        let (model, history, metrics, zero_shot) = if s.kind == StageKind::SubjectFinetune {
            let eval = eval_set.ok_or_else(|| Error::Config(format!("fine-tune stage `{}` needs an eval set", s.name)))?;
            let out = finetune(&start, train_set, eval, &config, &settings.preprocess.window)?;
            (out.model, out.history, Some(out.report), Some(out.zero_shot))
        } else {
            let out = train(&start, fit, val, &config)?;
            let metrics = eval_set.map(|e| evaluate_model(&out.model, e)).transpose()?;
            (out.model, out.history, metrics, None)
        };
        let mut model = model;
        model.provenance.push(format!("{} ({:?})", s.name, s.kind));
        let mut artifact = StageArtifact {
            name: s.name.clone(),
            kind: s.kind,
            model,
            history,
            graft,
            metrics,
            zero_shot,
            checkpoint: None,
        };
        if let Some(dir) = &settings.output_dir {
            artifact.checkpoint = Some(write_artifacts(dir, &artifact, settings)?);
        }
        done.insert(s.name.clone(), artifact.model.clone());
        artifacts.push(artifact);
    }
    Ok(artifacts)
}
