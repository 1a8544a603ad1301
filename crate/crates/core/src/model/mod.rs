//! The knee-angle forecaster.
//!
//! Each EMG channel passes its own two-layer convolution, giving one feature
//! vector per channel and time step. Two stacked LSTMs read the concatenated
//! features and a dense layer maps the last hidden state to `H` future angles.
//!
//! Kinematic scenarios add an LSTM over the recent knee-angle history. Its
//! hidden state queries the four channel features at every step, and the
//! resulting context joins the first LSTM's input. The head also receives the
//! last observed angle through `dense.w_anchor`, initialized to one, so an
//! untrained kinematic model starts out repeating the last value.
//!
//! Force scenarios pool a small convolution over the two interaction forces
//! and feed it to the dense layer.

mod forward;
mod hyper;
mod params;

pub use forward::{forward, record, record_attention, BatchInputs, ForwardOutput, Recorded, FORWARD_CHUNK};
pub use hyper::{ArchitectureDescriptor, ConvSpec, ModelHyper, ParamGroup, MAX_PARAMETERS};
pub use params::{
    build_model, declare, fnv1a, initialize, GroupSettings, Init, ModelGraph, NamedParam, ParamDecl, ParameterCount,
    TargetStats, EMG_CHANNEL_NAMES,
};
