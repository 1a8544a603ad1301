use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{design_butterworth, BiquadCascade, FilterSpec};
use crate::error::{Error, Result};

/// Sliding-window geometry. Windows advance by `stride_ms` between starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub window_ms: usize,
    pub stride_ms: usize,
    pub input_rate_hz: usize,
    pub output_rate_hz: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { window_ms: 2000, stride_ms: 40, input_rate_hz: 1000, output_rate_hz: 100 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms == 0 || self.stride_ms == 0 || self.input_rate_hz == 0 || self.output_rate_hz == 0 {
            return Err(Error::Config("window spec values must be positive".into()));
        }
        if self.input_rate_hz % self.output_rate_hz != 0 {
            return Err(Error::Config(format!(
                "input rate {} Hz is not a multiple of output rate {} Hz",
                self.input_rate_hz, self.output_rate_hz
            )));
        }
        for rate in [self.input_rate_hz, self.output_rate_hz] {
            if (self.window_ms * rate) % 1000 != 0 {
                return Err(Error::Config(format!("{} ms at {rate} Hz is not a whole number of samples", self.window_ms)));
            }
        }
        if (self.stride_ms * self.input_rate_hz) % 1000 != 0 {
            return Err(Error::Config(format!("stride {} ms is not a whole number of input samples", self.stride_ms)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.window_ms * self.input_rate_hz / 1000
    }

    pub fn output_len(&self) -> usize {
        self.window_ms * self.output_rate_hz / 1000
    }

    pub fn stride_samples(&self) -> usize {
        self.stride_ms * self.input_rate_hz / 1000
    }

    pub fn decimation(&self) -> usize {
        self.input_rate_hz / self.output_rate_hz
    }
}

/// End indices (in input samples, inclusive) of every complete window in a
/// recording of `recording_len` input samples.
pub fn window_ends(recording_len: usize, spec: &WindowSpec) -> Vec<usize> {
    let (w, s) = (spec.input_len(), spec.stride_samples());
    if recording_len < w || s == 0 {
        return Vec::new();
    }
    let n = (recording_len - w) / s + 1;
    (0..n).map(|k| k * s + w - 1).collect()
}

/// Window end indices for a recording lasting `recording_length_ms`.
pub fn segment_stream(recording_length_ms: usize, spec: &WindowSpec) -> Vec<usize> {
    window_ends(recording_length_ms * spec.input_rate_hz / 1000, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Emg,
    Kinematic,
    Force,
}

/// Preprocessing parameters shared by every window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub window: WindowSpec,
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub emg_lowpass_hz: f64,
    pub kinematic_lowpass_hz: f64,
    pub lowpass_order: usize,
    /// Carry filter state across hops instead of resetting at each window.
    pub carry_filter_state: bool,
    pub epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            highpass_hz: 20.0,
            highpass_order: 2,
            emg_lowpass_hz: 5.0,
            kinematic_lowpass_hz: 6.0,
            lowpass_order: 2,
            carry_filter_state: false,
            epsilon: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        for (name, fc) in [("emg_lowpass_hz", self.emg_lowpass_hz), ("kinematic_lowpass_hz", self.kinematic_lowpass_hz)] {
            if !(3.0..=6.0).contains(&fc) {
                return Err(Error::Config(format!("{name} = {fc} outside [3, 6] Hz")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.filters().map(|_| ())
    }

    pub fn filters(&self) -> Result<Filters> {
        let fs = self.window.input_rate_hz as f64;
        Ok(Filters {
            highpass: design_butterworth(&FilterSpec::high_pass(self.highpass_order, self.highpass_hz, fs))?,
            emg_lowpass: design_butterworth(&FilterSpec::low_pass(self.lowpass_order, self.emg_lowpass_hz, fs))?,
            kinematic_lowpass: design_butterworth(&FilterSpec::low_pass(
                self.lowpass_order,
                self.kinematic_lowpass_hz,
                fs,
            ))?,
        })
    }
}

/// Designed cascades for one configuration.
#[derive(Debug, Clone)]
pub struct Filters {
    pub highpass: BiquadCascade,
    pub emg_lowpass: BiquadCascade,
    pub kinematic_lowpass: BiquadCascade,
}

impl Filters {
    /// Filtering (and for EMG, rectification) of one channel. Each cascade is
    /// primed with the steady state of the first sample it sees, which uses
    /// no data beyond that sample. Output stays at the input rate.
    pub fn condition(&self, samples: &[f64], kind: ChannelKind) -> Vec<f64> {
        let Some(&first) = samples.first() else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(samples.len());
        match kind {
            ChannelKind::Emg => {
                let (mut hp, mut lp) = (self.highpass.clone(), self.emg_lowpass.clone());
                hp.prime(first);
                // a primed high-pass settles at zero, which is the rectifier's steady input
                lp.reset();
                out.extend(samples.iter().map(|&x| lp.process_sample(hp.process_sample(x).abs())));
            }
            ChannelKind::Kinematic | ChannelKind::Force => {
                let mut lp = self.kinematic_lowpass.clone();
                lp.prime(first);
                out.extend(samples.iter().map(|&x| lp.process_sample(x)));
            }
        }
        out
    }
}

/// Mean and divisor used to standardize a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Standardizes a conditioned window and keeps every `decimation`-th sample
/// ending on the last one. Statistics come from the retained samples, so the
/// returned row has zero mean and unit deviation.
pub fn standardize_decimate(conditioned: &[f64], decimation: usize, epsilon: f64) -> (Vec<f64>, ChannelStats) {
    let kept: Vec<f64> = conditioned.iter().skip(decimation - 1).step_by(decimation).copied().collect();
    let n = kept.len().max(1) as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(epsilon);
    let mut row: Vec<f64> = kept.iter().map(|v| (v - mean) / std).collect();
    // Floating-point residue in an exactly constant window would otherwise be
    // amplified by 1/epsilon.
    if var.sqrt() <= epsilon {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    (row, ChannelStats { mean, std })
}

/// Pre-decimation view of a standardized channel (same statistics as
/// [`standardize_decimate`]); used to inspect spectral content.
pub fn standardize_full(conditioned: &[f64], decimation: usize, epsilon: f64) -> Vec<f64> {
    let (_, stats) = standardize_decimate(conditioned, decimation, epsilon);
    if stats.std <= epsilon {
        return vec![0.0; conditioned.len()];
    }
    conditioned.iter().map(|v| (v - stats.mean) / stats.std).collect()
}

/// One network-ready window at the output rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedWindow {
    /// 4 rows (BF, RF, ST, VM), row-major.
    pub emg: Vec<f64>,
    pub kinematic: Vec<f64>,
    /// 2 rows (thigh, shank) when forces were recorded.
    pub forces: Option<Vec<f64>>,
    /// Standardization of the knee-angle row, in degrees.
    pub kinematic_stats: ChannelStats,
    /// Unfiltered knee angle at `end_index`, in degrees.
    pub last_observed_deg: f64,
    pub end_index: usize,
}

impl PreprocessedWindow {
    pub fn len(&self) -> usize {
        self.kinematic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinematic.is_empty()
    }

    pub fn emg_channel(&self, c: usize) -> &[f64] {
        let n = self.len();
        &self.emg[c * n..(c + 1) * n]
    }

    /// Most recent (filtered) knee angle inside the window, in degrees.
    pub fn last_angle_deg(&self) -> f64 {
        let z = self.kinematic.last().copied().unwrap_or(0.0);
        self.kinematic_stats.mean + self.kinematic_stats.std * z
    }
}

fn check_finite(channel: &[f64], c: usize) -> Result<()> {
    match channel.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::data_at(i, format!("non-finite sample in channel {c}"))),
        None => Ok(()),
    }
}

fn assemble(
    rows: Vec<(ChannelKind, Vec<f64>, ChannelStats)>,
    last_observed_deg: f64,
    end_index: usize,
) -> Result<PreprocessedWindow> {
    let mut emg = Vec::new();
    let mut forces = Vec::new();
    let mut kin = None;
    let mut n_emg = 0;
    let mut n_force = 0;
    for (kind, row, stats) in rows {
        match kind {
            ChannelKind::Emg => {
                emg.extend(row);
                n_emg += 1;
            }
            ChannelKind::Force => {
                forces.extend(row);
                n_force += 1;
            }
            ChannelKind::Kinematic => {
                if kin.replace((row, stats)).is_some() {
                    return Err(Error::Config("more than one kinematic channel".into()));
                }
            }
        }
    }
    if n_emg != 4 {
        return Err(Error::Config(format!("expected 4 EMG channels, got {n_emg}")));
    }
    if n_force != 0 && n_force != 2 {
        return Err(Error::Config(format!("expected 0 or 2 force channels, got {n_force}")));
    }
    let (kinematic, kinematic_stats) = kin.ok_or_else(|| Error::Config("missing kinematic channel".into()))?;
    Ok(PreprocessedWindow {
        emg,
        kinematic,
        forces: (n_force == 2).then_some(forces),
        kinematic_stats,
        last_observed_deg,
        end_index,
    })
}

/// Full per-window pipeline on raw input-rate samples.
///
/// EMG: high-pass, rectify, low-pass, standardize, decimate. Kinematic and
/// force channels: low-pass, standardize, decimate. Filter state starts at
/// zero for every window, so no sample outside `raw` is ever read.
pub fn preprocess_window(
    raw: &[&[f64]],
    kinds: &[ChannelKind],
    config: &PreprocessConfig,
    end_index: usize,
) -> Result<PreprocessedWindow> {
    let filters = config.filters()?;
    preprocess_with(&filters, raw, kinds, config, end_index)
}

fn preprocess_with(
    filters: &Filters,
    raw: &[&[f64]],
    kinds: &[ChannelKind],
    config: &PreprocessConfig,
    end_index: usize,
) -> Result<PreprocessedWindow> {
    if raw.len() != kinds.len() {
        return Err(Error::shape(format!("{} channels but {} channel kinds", raw.len(), kinds.len())));
    }
    let expected = config.window.input_len();
    let mut rows = Vec::with_capacity(raw.len());
    for (c, (samples, &kind)) in raw.iter().zip(kinds).enumerate() {
        if samples.len() != expected {
            return Err(Error::shape(format!(
                "channel {c} has {} samples, window needs {expected}",
                samples.len()
            )));
        }
        check_finite(samples, c)?;
        let conditioned = filters.condition(samples, kind);
        let (row, stats) = standardize_decimate(&conditioned, config.window.decimation(), config.epsilon);
        rows.push((kind, row, stats));
    }
    assemble(rows, last_raw(raw, kinds), end_index)
}

fn last_raw(channels: &[&[f64]], kinds: &[ChannelKind]) -> f64 {
    channels
        .iter()
        .zip(kinds)
        .find(|(_, &k)| k == ChannelKind::Kinematic)
        .and_then(|(c, _)| c.last().copied())
        .unwrap_or(f64::NAN)
}

/// Preprocesses every window ending at `ends` over whole-recording channels.
///
/// With `carry_filter_state` the filters run once over the stream (state
/// carried across hops) and each window standardizes its slice of the
/// conditioned signal; otherwise each window is processed independently.
pub fn preprocess_windows(
    channels: &[&[f64]],
    kinds: &[ChannelKind],
    config: &PreprocessConfig,
    ends: &[usize],
) -> Result<Vec<PreprocessedWindow>> {
    config.validate()?;
    let filters = config.filters()?;
    let w = config.window.input_len();
    let len = channels.first().map_or(0, |c| c.len());
    if let Some(&last) = ends.iter().max() {
        if last >= len || ends.iter().any(|&e| e + 1 < w) {
            return Err(Error::shape(format!("window end {last} outside recording of {len} samples")));
        }
    }
    if config.carry_filter_state {
        for (c, ch) in channels.iter().enumerate() {
            check_finite(ch, c)?;
        }
        let conditioned: Vec<Vec<f64>> =
            channels.iter().zip(kinds).map(|(ch, &k)| filters.condition(ch, k)).collect();
        ends.par_iter()
            .map(|&end| {
                let rows = conditioned
                    .iter()
                    .zip(kinds)
                    .map(|(ch, &k)| {
                        let (row, stats) =
                            standardize_decimate(&ch[end + 1 - w..=end], config.window.decimation(), config.epsilon);
                        (k, row, stats)
                    })
                    .collect();
                let last = channels.iter().zip(kinds).find(|(_, &k)| k == ChannelKind::Kinematic).map_or(f64::NAN, |(c, _)| c[end]);
                assemble(rows, last, end)
            })
            .collect()
    } else {
        ends.par_iter()
            .map(|&end| {
                let raw: Vec<&[f64]> = channels.iter().map(|ch| &ch[end + 1 - w..=end]).collect();
                preprocess_with(&filters, &raw, kinds, config, end)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [ChannelKind; 5] =
        [ChannelKind::Emg, ChannelKind::Emg, ChannelKind::Emg, ChannelKind::Emg, ChannelKind::Kinematic];

    #[test]
    fn segment_counts() {
        let spec = WindowSpec::default();
        assert_eq!(segment_stream(2800, &spec).len(), 21);
        assert_eq!(segment_stream(2000, &spec), vec![1999]);
        assert!(segment_stream(1999, &spec).is_empty());
        let ends = segment_stream(2800, &spec);
        assert!(ends.windows(2).all(|w| w[1] - w[0] == 40));
    }

    #[test]
    fn window_spec_validation() {
        assert!(WindowSpec::default().validate().is_ok());
        let bad = WindowSpec { output_rate_hz: 300, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = WindowSpec { window_ms: 2005, output_rate_hz: 100, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_channels_map_to_zero() {
        let cfg = PreprocessConfig::default();
        let constant = vec![3.25; 2000];
        let raw: Vec<&[f64]> = vec![&constant; 5];
        let w = preprocess_window(&raw, &KINDS, &cfg, 1999).unwrap();
        assert_eq!(w.emg.len(), 800);
        assert_eq!(w.kinematic.len(), 200);
        assert!(w.emg.iter().chain(&w.kinematic).all(|&v| v == 0.0));
    }

    #[test]
    fn output_rows_are_standardized() {
        let cfg = PreprocessConfig::default();
        let chans: Vec<Vec<f64>> = (0..5)
            .map(|c| (0..2000).map(|i| ((i * (c + 3)) as f64 * 0.017).sin() * (1.0 + c as f64)).collect())
            .collect();
        let raw: Vec<&[f64]> = chans.iter().map(Vec::as_slice).collect();
        let w = preprocess_window(&raw, &KINDS, &cfg, 1999).unwrap();
        for row in w.emg.chunks(200).chain(std::iter::once(w.kinematic.as_slice())) {
            let m = row.iter().sum::<f64>() / 200.0;
            let s = (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 200.0).sqrt();
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-6, "{m} {s}");
        }
        // de-standardizing the last kinematic sample gives the filtered angle
        let filtered = cfg.filters().unwrap().condition(&chans[4], ChannelKind::Kinematic);
        assert!((w.last_angle_deg() - filtered[1999]).abs() < 1e-9);
    }

    #[test]
    fn shape_and_data_errors() {
        let cfg = PreprocessConfig::default();
        let short = vec![0.0; 1999];
        let raw: Vec<&[f64]> = vec![&short; 5];
        assert!(matches!(preprocess_window(&raw, &KINDS, &cfg, 0), Err(Error::Shape { .. })));
        let mut bad = vec![1.0; 2000];
        bad[17] = f64::NAN;
        let good = vec![1.0; 2000];
        let raw: Vec<&[f64]> = vec![&good, &good, &bad, &good, &good];
        assert!(matches!(preprocess_window(&raw, &KINDS, &cfg, 1999), Err(Error::Data { row: Some(17), .. })));
    }

    #[test]
    fn streaming_matches_reset_on_first_window() {
        let cfg = PreprocessConfig::default();
        let chans: Vec<Vec<f64>> =
            (0..5).map(|c| (0..3000).map(|i| (i as f64 * 0.01 * (c + 1) as f64).sin()).collect()).collect();
        let refs: Vec<&[f64]> = chans.iter().map(Vec::as_slice).collect();
        let ends = window_ends(3000, &cfg.window);
        let reset = preprocess_windows(&refs, &KINDS, &cfg, &ends).unwrap();
        let streaming = preprocess_windows(&refs, &KINDS, &PreprocessConfig { carry_filter_state: true, ..cfg }, &ends)
            .unwrap();
        assert_eq!(reset[0], streaming[0]);
        assert_ne!(reset[5], streaming[5]);
        assert_eq!(reset.len(), 26);
    }

    #[test]
    fn lowpass_cutoff_range_is_enforced() {
        let cfg = PreprocessConfig { emg_lowpass_hz: 8.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
