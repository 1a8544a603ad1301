#![allow(dead_code)]

use kneecast::dataset::{make_examples, synthesize_subject, PreprocessedExample, SynthSpec};
use kneecast::model::{ConvSpec, ModelHyper};
use kneecast::signal::{ChannelStats, PreprocessConfig, PreprocessedWindow, WindowSpec};
use kneecast::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_hyper() -> ModelHyper {
    ModelHyper {
        conv1: ConvSpec { filters: 2, kernel: 3, stride: 2 },
        conv2: ConvSpec { filters: 4, kernel: 3, stride: 2 },
        emg_feature_dim: 4,
        lstm1_hidden: 4,
        lstm2_hidden: 4,
        kin_lstm_hidden: 4,
        attn_dim: 4,
        force_feature_dim: 4,
        horizon: 1,
        window_len: 40,
    }
}

/// 400 ms windows, so 40 output samples, matching [`tiny_hyper`].
pub fn short_windows() -> PreprocessConfig {
    PreprocessConfig { window: WindowSpec { window_ms: 400, ..WindowSpec::default() }, ..PreprocessConfig::default() }
}

/// Random inputs with the last observed angle drawn from `[0, 60)`.
pub fn random_example(rng: &mut ChaCha8Rng, len: usize, forces: bool, index: usize) -> PreprocessedExample {
    let mut row = |n: usize| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let emg = row(4 * len);
    let kinematic = row(len);
    let forces = forces.then(|| row(2 * len));
    let window = PreprocessedWindow {
        emg,
        kinematic,
        forces,
        kinematic_stats: ChannelStats { mean: 30.0, std: 12.0 },
        last_observed_deg: rng.random_range(0.0..60.0),
        end_index: 10 * len - 1 + 40 * index,
    };
    PreprocessedExample { window, target: vec![0.0], horizon: 1, subject_id: "r".into(), trial_id: "0".into() }
}

/// Examples whose target is an affine function of the last observed angle.
pub fn affine_task(seed: u64, n: usize) -> Vec<PreprocessedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut e = random_example(&mut rng, 40, false, i);
            e.target = vec![0.5 * e.window.last_observed_deg + 3.0];
            e
        })
        .collect()
}

/// Synthetic gait examples for one subject.
pub fn gait_examples(
    subject: &str,
    seed: u64,
    n_cycles: usize,
    scenario: Scenario,
    horizon: usize,
    config: &PreprocessConfig,
) -> Vec<PreprocessedExample> {
    let spec = SynthSpec {
        n_cycles,
        seed,
        include_forces: scenario.uses_forces(),
        subject_id: subject.into(),
        ..SynthSpec::default()
    };
    make_examples(&synthesize_subject(&spec).unwrap(), scenario, horizon, config).unwrap()
}
