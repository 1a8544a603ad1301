use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hyper::{ArchitectureDescriptor, ModelHyper, ParamGroup, MAX_PARAMETERS};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

pub const EMG_CHANNEL_NAMES: [&str; 4] = ["bf", "rf", "st", "vm"];

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-bound, bound)`.
    Uniform(f64),
    /// LSTM bias: zero except the forget-gate block.
    LstmBias { hidden: usize, forget: f64 },
    Constant(f64),
}

/// Declared shape of one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn decl(name: impl Into<String>, group: ParamGroup, shape: &[usize], init: Init) -> ParamDecl {
    ParamDecl { name: name.into(), group, shape: shape.to_vec(), init }
}

fn fan_in(n: usize) -> Init {
    Init::Uniform(1.0 / (n as f64).sqrt())
}

fn conv_decls(prefix: &str, group: ParamGroup, cin: usize, h: &ModelHyper, out: &mut Vec<ParamDecl>) {
    let (c1, c2) = (h.conv1, h.conv2);
    out.push(decl(format!("{prefix}.conv1.w"), group, &[c1.filters, cin, c1.kernel], fan_in(cin * c1.kernel)));
    out.push(decl(format!("{prefix}.conv1.b"), group, &[c1.filters], fan_in(cin * c1.kernel)));
    out.push(decl(format!("{prefix}.conv2.w"), group, &[c2.filters, c1.filters, c2.kernel], fan_in(c1.filters * c2.kernel)));
    out.push(decl(format!("{prefix}.conv2.b"), group, &[c2.filters], fan_in(c1.filters * c2.kernel)));
}

fn lstm_decls(prefix: &str, group: ParamGroup, input: usize, hidden: usize, out: &mut Vec<ParamDecl>) {
    out.push(decl(format!("{prefix}.w_in"), group, &[input, 4 * hidden], fan_in(hidden)));
    out.push(decl(format!("{prefix}.w_rec"), group, &[hidden, 4 * hidden], fan_in(hidden)));
    out.push(decl(format!("{prefix}.b"), group, &[4 * hidden], Init::LstmBias { hidden, forget: 1.0 }));
}

/// Every trainable tensor of a scenario, in a fixed order.
pub fn declare(scenario: Scenario, h: &ModelHyper) -> Vec<ParamDecl> {
    use ParamGroup::*;
    let mut d = Vec::new();
    for ch in EMG_CHANNEL_NAMES {
        conv_decls(&format!("emg.{ch}"), EmgBranch, 1, h, &mut d);
    }
    let kin = scenario.uses_kinematics();
    if kin {
        lstm_decls("kin_lstm", KinematicBranch, h.kin_step_width(), h.kin_lstm_hidden, &mut d);
        let (f, a, k) = (h.emg_feature_dim, h.attn_dim, h.kin_lstm_hidden);
        d.push(decl("attn.wq", KinematicBranch, &[k, a], fan_in(k)));
        d.push(decl("attn.bq", KinematicBranch, &[a], fan_in(k)));
        d.push(decl("attn.wk", KinematicBranch, &[f, a], fan_in(f)));
        d.push(decl("attn.bk", KinematicBranch, &[a], fan_in(f)));
        d.push(decl("attn.wv", KinematicBranch, &[f, a], fan_in(f)));
        d.push(decl("attn.bv", KinematicBranch, &[a], fan_in(f)));
    }
    let emg_width = 4 * h.emg_feature_dim;
    let h1 = h.lstm1_hidden;
    d.push(decl("lstm1.w_in", Head, &[emg_width, 4 * h1], fan_in(h1)));
    if kin {
        d.push(decl("lstm1.w_in_kin", KinematicBranch, &[h.kin_lstm_hidden + h.attn_dim, 4 * h1], fan_in(h1)));
    }
    d.push(decl("lstm1.w_rec", Head, &[h1, 4 * h1], fan_in(h1)));
    d.push(decl("lstm1.b", Head, &[4 * h1], Init::LstmBias { hidden: h1, forget: 1.0 }));
    lstm_decls("lstm2", Head, h1, h.lstm2_hidden, &mut d);
    if scenario.uses_forces() {
        conv_decls("force", ForceBranch, 2, h, &mut d);
    }
    let (h2, hz) = (h.lstm2_hidden, h.horizon);
    d.push(decl("dense.w", Head, &[h2, hz], fan_in(h2)));
    d.push(decl("dense.b", Head, &[hz], fan_in(h2)));
    if scenario.uses_forces() {
        d.push(decl("dense.w_force", ForceBranch, &[h.force_feature_dim, hz], fan_in(h.force_feature_dim)));
    }
    if kin {
        // starts as a copy of the last observed angle
        d.push(decl("dense.w_anchor", KinematicBranch, &[1, hz], Init::Constant(1.0)));
    }
    d
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Initial values of one tensor. The stream depends only on the model seed and
/// the tensor name, so adding or removing other tensors never shifts it.
pub fn initialize(d: &ParamDecl, seed: u64) -> Tensor {
    let n: usize = d.shape.iter().product();
    let data = match d.init {
        Init::Uniform(bound) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(d.name.as_bytes()));
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        }
        Init::LstmBias { hidden, forget } => {
            (0..n).map(|i| if (hidden..2 * hidden).contains(&i) { forget } else { 0.0 }).collect()
        }
        Init::Constant(c) => vec![c; n],
    };
    Tensor::new(d.shape.clone(), data).expect("declared shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSettings {
    pub trainable: bool,
    pub lr_scale: f64,
}

impl Default for GroupSettings {
    fn default() -> Self {
        Self { trainable: true, lr_scale: 1.0 }
    }
}

/// Mean and deviation (degrees) used to standardize knee-angle targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for TargetStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl TargetStats {
    pub fn standardize(&self, deg: f64) -> f64 {
        (deg - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }

    /// Pooled over every value, with a floor on the deviation.
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Self { mean, std: var.sqrt().max(1e-6) }
    }
}

/// A built network: its shape descriptor, trainable tensors, per-group
/// training settings and target normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub descriptor: ArchitectureDescriptor,
    pub params: Vec<NamedParam>,
    pub groups: BTreeMap<ParamGroup, GroupSettings>,
    /// Set by the first training run; `None` means identity scaling.
    pub target: Option<TargetStats>,
    /// Stages this model has been through, oldest first.
    #[serde(default)]
    pub provenance: Vec<String>,
}

/// Trainable scalar counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub by_group: BTreeMap<ParamGroup, usize>,
    pub total: usize,
}

/// Seeded model for `scenario`.
pub fn build_model(scenario: Scenario, hyper: ModelHyper, seed: u64) -> Result<ModelGraph> {
    hyper.validate()?;
    let decls = declare(scenario, &hyper);
    let total: usize = decls.iter().map(|d| d.shape.iter().product::<usize>()).sum();
    if total >= MAX_PARAMETERS {
        return Err(Error::Config(format!("{total} parameters exceed the budget of {MAX_PARAMETERS}")));
    }
    let params: Vec<NamedParam> = decls
        .iter()
        .map(|d| NamedParam { name: d.name.clone(), group: d.group, value: initialize(d, seed) })
        .collect();
    let groups = params.iter().map(|p| (p.group, GroupSettings::default())).collect();
    Ok(ModelGraph {
        descriptor: ArchitectureDescriptor { scenario, hyper },
        params,
        groups,
        target: None,
        provenance: Vec::new(),
    })
}

impl ModelGraph {
    pub fn scenario(&self) -> Scenario {
        self.descriptor.scenario
    }

    pub fn hyper(&self) -> &ModelHyper {
        &self.descriptor.hyper
    }

    pub fn target_stats(&self) -> TargetStats {
        self.target.unwrap_or_default()
    }

    pub fn param(&self, name: &str) -> Option<&NamedParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut NamedParam> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let mut by_group = BTreeMap::new();
        for p in &self.params {
            *by_group.entry(p.group).or_insert(0) += p.value.len();
        }
        ParameterCount { total: by_group.values().sum(), by_group }
    }

    pub fn group_settings(&self, group: ParamGroup) -> Option<GroupSettings> {
        self.groups.get(&group).copied()
    }

    pub fn set_group_training(&mut self, group: ParamGroup, trainable: bool, lr_scale: f64) -> Result<&mut Self> {
        if !(lr_scale.is_finite() && lr_scale >= 0.0) {
            return Err(Error::Config(format!("lr_scale {lr_scale} must be finite and non-negative")));
        }
        match self.groups.get_mut(&group) {
            Some(s) => {
                *s = GroupSettings { trainable, lr_scale };
                Ok(self)
            }
            None => Err(Error::Config(format!("model {} has no group {group}", self.scenario()))),
        }
    }

    /// Same as [`ModelGraph::set_group_training`] with the group given by name.
    pub fn set_group_training_by_name(&mut self, group: &str, trainable: bool, lr_scale: f64) -> Result<&mut Self> {
        let g: ParamGroup = group.parse()?;
        self.set_group_training(g, trainable, lr_scale)
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forget_bias_block() {
        let t = initialize(&decl("x", ParamGroup::Head, &[8], Init::LstmBias { hidden: 2, forget: 1.0 }), 0);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn init_is_name_keyed() {
        let d = decl("lstm1.w_rec", ParamGroup::Head, &[3, 4], Init::Uniform(0.5));
        assert_eq!(initialize(&d, 9), initialize(&d, 9));
        assert_ne!(initialize(&d, 9), initialize(&d, 10));
        assert!(initialize(&d, 9).data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn group_settings() {
        let mut m = build_model(Scenario::Sic, ModelHyper::default(), 1).unwrap();
        m.set_group_training(ParamGroup::EmgBranch, false, 0.1).unwrap();
        assert_eq!(m.group_settings(ParamGroup::EmgBranch), Some(GroupSettings { trainable: false, lr_scale: 0.1 }));
        assert!(matches!(m.set_group_training(ParamGroup::KinematicBranch, true, 1.0), Err(Error::Config(_))));
        assert!(matches!(m.set_group_training_by_name("encoder", true, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn target_stats() {
        let s = TargetStats::from_values(&[10.0, 20.0, 30.0]);
        assert!((s.mean - 20.0).abs() < 1e-12);
        assert!((s.destandardize(s.standardize(17.5)) - 17.5).abs() < 1e-12);
    }
}
