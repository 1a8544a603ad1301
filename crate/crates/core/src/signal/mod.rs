//! Causal EMG and kinematic preprocessing.
//!
//! Everything here operates on one window at a time: filters start from the
//! window's first sample and never look past its last sample.

mod filter;
mod window;

pub use filter::{apply_filter, design_butterworth, Biquad, BiquadCascade, FilterKind, FilterSpec};
pub use window::{
    preprocess_window, preprocess_windows, segment_stream, standardize_decimate, standardize_full, window_ends,
    ChannelKind, ChannelStats, Filters, PreprocessConfig, PreprocessedWindow, WindowSpec,
};
