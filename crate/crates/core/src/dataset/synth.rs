//! Seeded gait-like recordings.
//!
//! The knee angle follows a two-harmonic curve of the gait phase with
//! per-cycle amplitude and period jitter. Each EMG channel is band-limited
//! noise (20-250 Hz) whose amplitude follows a Gaussian activation bump locked
//! to the gait phase. Optional interaction forces are the smoothed knee
//! velocity.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::recording::{Condition, Recording, RecordingMeta};
use crate::error::{Error, Result};
use crate::signal::{design_butterworth, FilterSpec};

const FS: f64 = 1000.0;
/// Activation centres of BF, RF, ST, VM as fractions of the gait cycle.
pub const ACTIVATION_PHASES: [f64; 4] = [0.05, 0.30, 0.55, 0.80];
const ACTIVATION_WIDTH: f64 = 0.08;
const EMG_GAIN_MV: [f64; 4] = [0.40, 0.60, 0.35, 0.50];
const EMG_FLOOR: f64 = 0.15;

/// Subject-level gait morphology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitShape {
    pub offset_deg: f64,
    pub primary_deg: f64,
    pub secondary_deg: f64,
    pub secondary_phase_rad: f64,
    /// Shift of every activation centre, in cycles.
    pub activation_shift: f64,
    pub angle_noise_deg: f64,
}

impl Default for GaitShape {
    fn default() -> Self {
        Self {
            offset_deg: 30.0,
            primary_deg: 25.0,
            secondary_deg: 10.0,
            secondary_phase_rad: 0.8,
            activation_shift: 0.0,
            angle_noise_deg: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_cycles: usize,
    pub cycle_period_s: f64,
    pub condition: Condition,
    /// Fractional per-cycle amplitude/period perturbation. `None` picks 0.3
    /// for abnormal gait and 0.05 otherwise.
    pub jitter: Option<f64>,
    pub seed: u64,
    pub include_forces: bool,
    pub shape: GaitShape,
    /// How far ahead of the movement the EMG activation runs.
    pub emg_lead_ms: f64,
    /// How far ahead of the knee velocity the interaction force runs.
    pub force_lead_ms: f64,
    pub subject_id: String,
    pub trial_id: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cycles: 40,
            cycle_period_s: 1.2,
            condition: Condition::Normal,
            jitter: None,
            seed: 0,
            include_forces: false,
            shape: GaitShape::default(),
            emg_lead_ms: 60.0,
            force_lead_ms: 100.0,
            subject_id: "synthetic".into(),
            trial_id: "0".into(),
        }
    }
}

impl SynthSpec {
    pub fn effective_jitter(&self) -> f64 {
        self.jitter.unwrap_or(match self.condition {
            Condition::Abnormal => 0.3,
            _ => 0.05,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cycles == 0 {
            return Err(Error::Config("n_cycles must be at least 1".into()));
        }
        if !(1.0..=1.5).contains(&self.cycle_period_s) {
            return Err(Error::Config(format!("cycle period {} s outside [1.0, 1.5]", self.cycle_period_s)));
        }
        let j = self.effective_jitter();
        if !(0.0..0.9).contains(&j) {
            return Err(Error::Config(format!("jitter {j} outside [0, 0.9)")));
        }
        if self.emg_lead_ms < 0.0 || self.force_lead_ms < 0.0 {
            return Err(Error::Config("leads must be non-negative".into()));
        }
        Ok(())
    }
}

/// Recording plus the ground-truth activation envelopes that modulate each
/// EMG channel.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub recording: Recording,
    pub envelopes: [Vec<f64>; 4],
}

struct Timeline {
    starts: Vec<f64>,
    periods: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl Timeline {
    /// Cycle index and phase in [0, 1) at time `t` (s).
    fn locate(&self, t: f64) -> (usize, f64) {
        let k = match self.starts.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) => k - 1,
        }
        .min(self.periods.len() - 1);
        (k, ((t - self.starts[k]) / self.periods[k]).clamp(0.0, 1.0))
    }

    fn amplitude(&self, k: usize, phase: f64) -> f64 {
        let next = self.amplitudes[(k + 1).min(self.amplitudes.len() - 1)];
        self.amplitudes[k] + (next - self.amplitudes[k]) * phase
    }

    fn angle(&self, shape: &GaitShape, t: f64) -> f64 {
        let (k, phi) = self.locate(t);
        let a = self.amplitude(k, phi);
        shape.offset_deg
            + a * (shape.primary_deg * (2.0 * PI * phi).sin()
                + shape.secondary_deg * (4.0 * PI * phi + shape.secondary_phase_rad).sin())
    }
}

fn wrap_half(x: f64) -> f64 {
    x - x.round()
}

pub fn synthesize_detailed(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = spec.effective_jitter();

    // Two spare cycles cover the look-ahead used by the leads.
    let total_cycles = spec.n_cycles + 2;
    let mut periods = Vec::with_capacity(total_cycles);
    let mut amplitudes = Vec::with_capacity(total_cycles + 1);
    for _ in 0..total_cycles {
        periods.push(spec.cycle_period_s * (1.0 + jitter * rng.random_range(-1.0..1.0)));
        amplitudes.push(1.0 + jitter * rng.random_range(-1.0..1.0));
    }
    amplitudes.push(1.0 + jitter * rng.random_range(-1.0..1.0));
    let mut starts = Vec::with_capacity(total_cycles);
    let mut acc = 0.0;
    for p in &periods {
        starts.push(acc);
        acc += p;
    }
    let duration: f64 = periods[..spec.n_cycles].iter().sum();
    let n = (duration * FS).round() as usize;
    let tl = Timeline { starts, periods, amplitudes };

    let time_ms: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let t_of = |i: usize| i as f64 / FS;

    // Activation envelopes, running ahead of the movement by emg_lead_ms.
    let emg_lead = spec.emg_lead_ms / 1000.0;
    let envelopes: [Vec<f64>; 4] = std::array::from_fn(|c| {
        (0..n)
            .map(|i| {
                let (k, phi) = tl.locate(t_of(i) + emg_lead);
                let d = wrap_half(phi - ACTIVATION_PHASES[c] - spec.shape.activation_shift);
                EMG_FLOOR + tl.amplitude(k, phi) * (-d * d / (2.0 * ACTIVATION_WIDTH * ACTIVATION_WIDTH)).exp()
            })
            .collect()
    });

    let hp = design_butterworth(&FilterSpec::high_pass(2, 20.0, FS))?;
    let lp = design_butterworth(&FilterSpec::low_pass(4, 250.0, FS))?;
    let settle = 1000;
    let mut emg: [Vec<f64>; 4] = Default::default();
    for c in 0..4 {
        let (mut hp, mut lp) = (hp.clone(), lp.clone());
        let carrier: Vec<f64> = (0..n + settle)
            .map(|_| lp.process_sample(hp.process_sample(rng.sample::<f64, _>(StandardNormal))))
            .skip(settle)
            .collect();
        let rms = (carrier.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
        emg[c] = carrier.iter().zip(&envelopes[c]).map(|(x, e)| EMG_GAIN_MV[c] * e * x / rms).collect();
    }

    let knee_angle_deg: Vec<f64> = (0..n)
        .map(|i| tl.angle(&spec.shape, t_of(i)) + spec.shape.angle_noise_deg * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let forces = if spec.include_forces {
        let lead = spec.force_lead_ms / 1000.0;
        let h = 1e-4;
        let velocity: Vec<f64> = (0..n)
            .map(|i| {
                let t = t_of(i) + lead;
                (tl.angle(&spec.shape, t + h) - tl.angle(&spec.shape, t - h)) / (2.0 * h)
            })
            .collect();
        let mut smooth = design_butterworth(&FilterSpec::low_pass(2, 10.0, FS))?;
        smooth.prime(velocity[0]);
        let v = smooth.process(&velocity);
        let scale = 30.0 / v.iter().fold(1e-12f64, |m, x| m.max(x.abs()));
        let shank: Vec<f64> = v.iter().map(|x| scale * x + rng.sample::<f64, _>(StandardNormal)).collect();
        let thigh: Vec<f64> = v.iter().map(|x| -scale * x + rng.sample::<f64, _>(StandardNormal)).collect();
        Some([thigh, shank])
    } else {
        None
    };

    let recording = Recording {
        meta: RecordingMeta {
            subject_id: spec.subject_id.clone(),
            condition: spec.condition,
            trial_id: spec.trial_id.clone(),
            sample_rate_hz: FS,
        },
        time_ms,
        emg,
        knee_angle_deg,
        hip_angle_deg: None,
        forces,
    };
    recording.validate()?;
    Ok(SynthOutput { recording, envelopes })
}

/// Seeded synthetic recording: same spec, same bits.
pub fn synthesize_subject(spec: &SynthSpec) -> Result<Recording> {
    synthesize_detailed(spec).map(|o| o.recording)
}
