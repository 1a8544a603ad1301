//! Recordings, synthetic data, examples and splits.
//!
//! A [`Recording`] is one synchronized capture at 1000 Hz. [`make_examples`]
//! cuts it into preprocessed windows paired with the knee angles that follow
//! each window, and [`split_examples`] partitions examples per trial.

mod cache;
mod examples;
mod recording;
mod split;
mod synth;

pub use cache::{decode_cache, encode_cache, load_cache, save_cache, ExampleCache, CACHE_MAGIC, CACHE_VERSION};
pub use examples::{channel_kinds, make_examples, prediction_windows, target_indices, PreprocessedExample};
pub use recording::{
    load_recording, sidecar_path, write_recording, Condition, Recording, RecordingMeta, EMG_COLUMNS, EMG_LABELS,
};
pub use split::{
    count_leaks, split_examples, split_indices, train_count, ExampleKey, Ordering, SplitIndices, SplitKind,
    SplitPolicy, SplitSets,
};
pub use synth::{synthesize_detailed, synthesize_subject, GaitShape, SynthOutput, SynthSpec, ACTIVATION_PHASES};
