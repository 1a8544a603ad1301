use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{build_model, ModelGraph, ModelHyper, ParamGroup};
use crate::scenario::Scenario;

/// Learning-rate multiplier given to groups that inherit weights.
pub const COPIED_LR_SCALE: f64 = 0.1;

/// Output-layer tensors whose meaning changes once the anchored last
/// angle is added to the prediction.
const REZEROED_WITH_ANCHOR: [&str; 2] = ["dense.w", "dense.b"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reinitialized {
    pub name: String,
    pub reason: String,
}

/// What happened to each tensor during a graft.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraftReport {
    pub source: Option<Scenario>,
    pub target: Option<Scenario>,
    /// Copied bit-for-bit from the source.
    pub copied: Vec<String>,
    /// Present in both but not copied.
    pub reinitialized: Vec<Reinitialized>,
    /// Only in the target; seeded fresh.
    pub fresh: Vec<String>,
    /// Only in the source.
    pub dropped: Vec<String>,
}

/// Builds a `scenario` model and fills it with every compatible tensor of
/// `source`.
///
/// Tensors sharing a name and shape are copied, except the dense output
/// layer when the target gains the anchored last angle: it is zeroed so the
/// grafted model starts from persistence. EMG-branch tensors must match
/// exactly, anything else that changed shape is reseeded. Groups holding
/// copied weights get [`COPIED_LR_SCALE`], the rest 1.0.
pub fn transfer(source: &ModelGraph, scenario: Scenario, hyper: ModelHyper, seed: u64) -> Result<(ModelGraph, GraftReport)> {
    let mut target = build_model(scenario, hyper, seed)?;
    let gains_anchor = scenario.uses_kinematics() && !source.scenario().uses_kinematics();
    let mut report = GraftReport { source: Some(source.scenario()), target: Some(scenario), ..Default::default() };

    let mismatched: Vec<String> = source
        .params
        .iter()
        .filter(|s| s.group == ParamGroup::EmgBranch)
        .filter_map(|s| match target.param(&s.name) {
            Some(t) if t.value.shape() == s.value.shape() => None,
            Some(t) => Some(format!("{} {:?} -> {:?}", s.name, s.value.shape(), t.value.shape())),
            None => Some(format!("{} missing from target", s.name)),
        })
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Graft { tensors: mismatched });
    }

    let mut inherited = BTreeSet::new();
    for t in target.params.iter_mut() {
        let Some(s) = source.param(&t.name) else {
            report.fresh.push(t.name.clone());
            continue;
        };
        if s.value.shape() != t.value.shape() {
            report.reinitialized.push(Reinitialized {
                name: t.name.clone(),
                reason: format!("shape {:?} -> {:?}", s.value.shape(), t.value.shape()),
            });
        } else if gains_anchor && REZEROED_WITH_ANCHOR.contains(&t.name.as_str()) {
            t.value = Tensor::zeros(t.value.shape());
            report.reinitialized.push(Reinitialized {
                name: t.name.clone(),
                reason: "zeroed: output now adds the anchored last angle".into(),
            });
            inherited.insert(t.group);
        } else {
            t.value = s.value.clone();
            report.copied.push(t.name.clone());
            inherited.insert(t.group);
        }
    }
    report.dropped = source.params.iter().filter(|s| target.param(&s.name).is_none()).map(|s| s.name.clone()).collect();

    for (group, settings) in target.groups.iter_mut() {
        settings.trainable = true;
        settings.lr_scale = if inherited.contains(group) { COPIED_LR_SCALE } else { 1.0 };
    }
    target.target = source.target;
    target.provenance = source.provenance.clone();
    target.provenance.push(format!("transfer {} -> {}", source.scenario(), scenario));
    Ok((target, report))
}

/// SIC to DIC (or SIC_F to DIC_F) with the source's hyperparameters.
pub fn transfer_sic_to_dic(source: &ModelGraph, seed: u64) -> Result<(ModelGraph, GraftReport)> {
    let scenario = match source.scenario() {
        Scenario::Sic => Scenario::Dic,
        Scenario::SicF => Scenario::DicF,
        other => return Err(Error::Config(format!("source must be SIC or SIC_F, got {other}"))),
    };
    transfer(source, scenario, *source.hyper(), seed)
}
