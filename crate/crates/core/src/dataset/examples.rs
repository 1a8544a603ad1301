use serde::{Deserialize, Serialize};

use super::recording::Recording;
use crate::error::{Error, Result};
use crate::scenario::{validate_horizon, Scenario};
use crate::signal::{preprocess_windows, window_ends, ChannelKind, PreprocessConfig, PreprocessedWindow};

fn scenario_channels(recording: &Recording, scenario: Scenario) -> Vec<&[f64]> {
    let mut channels: Vec<&[f64]> = recording.emg.iter().map(Vec::as_slice).collect();
    channels.push(&recording.knee_angle_deg);
    if scenario.uses_forces() {
        if let Some(forces) = &recording.forces {
            channels.extend(forces.iter().map(Vec::as_slice));
        }
    }
    channels
}

fn check_inputs(recording: &Recording, scenario: Scenario, config: &PreprocessConfig) -> Result<()> {
    config.validate()?;
    recording.validate()?;
    let rate = recording.sample_rate_hz();
    if (rate - config.window.input_rate_hz as f64).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "recording sampled at {rate} Hz but the window expects {} Hz",
            config.window.input_rate_hz
        )));
    }
    if scenario.uses_forces() && !recording.has_forces() {
        return Err(Error::Config(format!(
            "scenario {scenario} needs interaction forces but recording {}/{} has none",
            recording.meta.subject_id, recording.meta.trial_id
        )));
    }
    Ok(())
}

/// Every complete window of a recording, with no target look-ahead. Each
/// window reads only samples up to its own end.
pub fn prediction_windows(
    recording: &Recording,
    scenario: Scenario,
    config: &PreprocessConfig,
) -> Result<Vec<PreprocessedWindow>> {
    check_inputs(recording, scenario, config)?;
    let ends = window_ends(recording.len(), &config.window);
    preprocess_windows(&scenario_channels(recording, scenario), &channel_kinds(scenario), config, &ends)
}

/// A preprocessed window and the knee angles that follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedExample {
    pub window: PreprocessedWindow,
    /// Raw knee angles (degrees) at the next `horizon` output-rate instants.
    pub target: Vec<f64>,
    pub horizon: usize,
    pub subject_id: String,
    pub trial_id: String,
}

impl PreprocessedExample {
    /// First input-rate sample of the window.
    pub fn start_index(&self, window_samples: usize) -> usize {
        self.window.end_index + 1 - window_samples
    }

    /// Input-rate index of the last target.
    pub fn last_target_index(&self, decimation: usize) -> usize {
        self.window.end_index + decimation * self.horizon
    }
}

/// Input-rate sample indices of the targets of a window ending at `end`.
pub fn target_indices(end: usize, horizon: usize, decimation: usize) -> impl Iterator<Item = usize> {
    (1..=horizon).map(move |k| end + decimation * k)
}

/// Channel layout fed to the preprocessor for `scenario`.
pub fn channel_kinds(scenario: Scenario) -> Vec<ChannelKind> {
    let mut kinds = vec![ChannelKind::Emg; 4];
    kinds.push(ChannelKind::Kinematic);
    if scenario.uses_forces() {
        kinds.extend([ChannelKind::Force; 2]);
    }
    kinds
}

/// One example per window whose `horizon` targets all lie inside the
/// recording.
///
/// The knee-angle block is always preprocessed (it is needed to undo target
/// standardization); scenarios without kinematic input simply do not feed it
/// to the network. Force rows are kept only for force scenarios.
pub fn make_examples(
    recording: &Recording,
    scenario: Scenario,
    horizon: usize,
    config: &PreprocessConfig,
) -> Result<Vec<PreprocessedExample>> {
    validate_horizon(horizon)?;
    check_inputs(recording, scenario, config)?;

    let dec = config.window.decimation();
    let n = recording.len();
    let ends: Vec<usize> = window_ends(n, &config.window).into_iter().filter(|&e| e + dec * horizon < n).collect();
    let windows = preprocess_windows(&scenario_channels(recording, scenario), &channel_kinds(scenario), config, &ends)?;

    windows
        .into_iter()
        .map(|window| {
            let target: Vec<f64> = target_indices(window.end_index, horizon, dec)
                .map(|i| recording.knee_angle_deg[i])
                .collect();
            if let Some((k, v)) = target.iter().enumerate().find(|(_, v)| v.abs() > 180.0) {
                return Err(Error::data_at(
                    window.end_index + dec * (k + 1),
                    format!("knee angle {v} deg outside [-180, 180]"),
                ));
            }
            Ok(PreprocessedExample {
                window,
                target,
                horizon,
                subject_id: recording.meta.subject_id.clone(),
                trial_id: recording.meta.trial_id.clone(),
            })
        })
        .collect()
}
