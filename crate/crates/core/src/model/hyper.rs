use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::conv_same_geometry;
use crate::error::{Error, Result};
use crate::scenario::{validate_horizon, Scenario};

/// Parameter budget every configuration must stay under.
pub const MAX_PARAMETERS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelHyper {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub emg_feature_dim: usize,
    pub lstm1_hidden: usize,
    pub lstm2_hidden: usize,
    pub kin_lstm_hidden: usize,
    pub attn_dim: usize,
    pub force_feature_dim: usize,
    pub horizon: usize,
    /// Samples per channel in a preprocessed window.
    pub window_len: usize,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            conv1: ConvSpec { filters: 8, kernel: 9, stride: 2 },
            conv2: ConvSpec { filters: 16, kernel: 5, stride: 2 },
            emg_feature_dim: 16,
            lstm1_hidden: 64,
            lstm2_hidden: 48,
            kin_lstm_hidden: 32,
            attn_dim: 16,
            force_feature_dim: 16,
            horizon: 1,
            window_len: 200,
        }
    }
}

impl ModelHyper {
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    /// Feature steps after both convolutions.
    pub fn steps(&self) -> usize {
        let (l1, _) = conv_same_geometry(self.window_len, self.conv1.kernel, self.conv1.stride);
        conv_same_geometry(l1, self.conv2.kernel, self.conv2.stride).0
    }

    /// Knee-angle samples consumed per kinematic LSTM step.
    pub fn kin_step_width(&self) -> usize {
        self.window_len / self.steps()
    }

    pub fn validate(&self) -> Result<()> {
        validate_horizon(self.horizon)?;
        let positive = [
            ("conv1.filters", self.conv1.filters),
            ("conv1.kernel", self.conv1.kernel),
            ("conv2.filters", self.conv2.filters),
            ("conv2.kernel", self.conv2.kernel),
            ("lstm1_hidden", self.lstm1_hidden),
            ("lstm2_hidden", self.lstm2_hidden),
            ("kin_lstm_hidden", self.kin_lstm_hidden),
            ("attn_dim", self.attn_dim),
            ("force_feature_dim", self.force_feature_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.conv1.stride * self.conv2.stride != 4 {
            return Err(Error::Config(format!(
                "conv strides {} x {} must multiply to 4",
                self.conv1.stride, self.conv2.stride
            )));
        }
        if self.window_len == 0 || self.window_len % 4 != 0 {
            return Err(Error::Config(format!("window length {} must be a positive multiple of 4", self.window_len)));
        }
        if self.emg_feature_dim != self.conv2.filters {
            return Err(Error::Config(format!(
                "emg_feature_dim {} must equal conv2.filters {}",
                self.emg_feature_dim, self.conv2.filters
            )));
        }
        if self.force_feature_dim != self.conv2.filters {
            return Err(Error::Config(format!(
                "force_feature_dim {} must equal conv2.filters {}",
                self.force_feature_dim, self.conv2.filters
            )));
        }
        Ok(())
    }
}

/// Coarse parameter groups used for freezing and learning-rate scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Per-channel EMG convolutions.
    EmgBranch,
    /// Kinematic LSTM, channel attention and every weight that reads their
    /// outputs.
    KinematicBranch,
    ForceBranch,
    /// Shared LSTMs and the dense output layer.
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] =
        [ParamGroup::EmgBranch, ParamGroup::KinematicBranch, ParamGroup::ForceBranch, ParamGroup::Head];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::EmgBranch => "emg_branch",
            ParamGroup::KinematicBranch => "kinematic_branch",
            ParamGroup::ForceBranch => "force_branch",
            ParamGroup::Head => "head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group `{s}`")))
    }
}

/// Everything needed to rebuild a model's shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub scenario: Scenario,
    pub hyper: ModelHyper,
}
