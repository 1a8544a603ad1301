//! Binary cache of preprocessed examples.
//!
//! Same container as checkpoints with magic `KNEECACH`: a header block
//! (scenario, horizon, preprocessing, counts), a manifest block with one
//! entry per example (ids, window end, last observed angle, kinematic
//! statistics) and then, per example, the EMG rows, knee-angle row, force
//! rows when present, and targets as little-endian f64. The cache can
//! always be rebuilt from the CSV recordings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::examples::PreprocessedExample;
use crate::error::{Error, Result};
use crate::io::{write_atomic, FrameReader, FrameWriter};
use crate::scenario::Scenario;
use crate::signal::{ChannelStats, PreprocessConfig, PreprocessedWindow};

pub const CACHE_MAGIC: &[u8; 8] = b"KNEECACH";
pub const CACHE_VERSION: u32 = 1;

/// Everything a cache file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleCache {
    pub scenario: Scenario,
    pub horizon: usize,
    pub preprocess: PreprocessConfig,
    pub examples: Vec<PreprocessedExample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    scenario: Scenario,
    horizon: usize,
    preprocess: PreprocessConfig,
    window_len: usize,
    n_examples: usize,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    subject_id: String,
    trial_id: String,
    end_index: usize,
    last_observed_deg: f64,
    kinematic_stats: ChannelStats,
}

fn values_per_example(scenario: Scenario, window_len: usize, horizon: usize) -> usize {
    let rows = 5 + if scenario.uses_forces() { 2 } else { 0 };
    rows * window_len + horizon
}

pub fn encode_cache(cache: &ExampleCache) -> Result<Vec<u8>> {
    let l = cache.preprocess.window.output_len();
    for (i, e) in cache.examples.iter().enumerate() {
        let w = &e.window;
        let forces_ok = w.forces.as_ref().map(Vec::len) == cache.scenario.uses_forces().then_some(2 * l);
        if w.emg.len() != 4 * l || w.kinematic.len() != l || !forces_ok || e.target.len() != cache.horizon {
            return Err(Error::shape(format!("example {i} does not fit a {} cache of {l}-sample windows", cache.scenario)));
        }
    }
    let header = Header {
        scenario: cache.scenario,
        horizon: cache.horizon,
        preprocess: cache.preprocess,
        window_len: l,
        n_examples: cache.examples.len(),
    };
    let entries: Vec<Entry> = cache
        .examples
        .iter()
        .map(|e| Entry {
            subject_id: e.subject_id.clone(),
            trial_id: e.trial_id.clone(),
            end_index: e.window.end_index,
            last_observed_deg: e.window.last_observed_deg,
            kinematic_stats: e.window.kinematic_stats,
        })
        .collect();
    let mut w = FrameWriter::new(CACHE_MAGIC, CACHE_VERSION);
    w.json(&header);
    w.json(&entries);
    for e in &cache.examples {
        w.values(&e.window.emg);
        w.values(&e.window.kinematic);
        w.values(e.window.forces.iter().flatten());
        w.values(&e.target);
    }
    Ok(w.finish())
}

pub fn decode_cache(bytes: &[u8]) -> Result<ExampleCache> {
    let mut r = FrameReader::open(bytes, CACHE_MAGIC, CACHE_VERSION, "example cache")?;
    let header: Header = r.json("header")?;
    let entries: Vec<Entry> = r.json("manifest")?;
    if entries.len() != header.n_examples || header.window_len != header.preprocess.window.output_len() {
        return Err(Error::Corrupt("cache header disagrees with its manifest".into()));
    }
    let (l, h) = (header.window_len, header.horizon);
    let per = values_per_example(header.scenario, l, h);
    let values = r.values(per * entries.len())?;
    let examples = entries
        .into_iter()
        .zip(values.chunks_exact(per.max(1)))
        .map(|(e, v)| {
            let (emg, rest) = v.split_at(4 * l);
            let (kin, rest) = rest.split_at(l);
            let (forces, target) = rest.split_at(rest.len() - h);
            PreprocessedExample {
                window: PreprocessedWindow {
                    emg: emg.to_vec(),
                    kinematic: kin.to_vec(),
                    forces: header.scenario.uses_forces().then(|| forces.to_vec()),
                    kinematic_stats: e.kinematic_stats,
                    last_observed_deg: e.last_observed_deg,
                    end_index: e.end_index,
                },
                target: target.to_vec(),
                horizon: h,
                subject_id: e.subject_id,
                trial_id: e.trial_id,
            }
        })
        .collect();
    Ok(ExampleCache { scenario: header.scenario, horizon: h, preprocess: header.preprocess, examples })
}

pub fn save_cache(cache: &ExampleCache, path: &Path) -> Result<()> {
    write_atomic(path, &encode_cache(cache)?)
}

pub fn load_cache(path: &Path) -> Result<ExampleCache> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}
