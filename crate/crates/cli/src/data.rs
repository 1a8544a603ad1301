//! Turning input paths into examples.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use kneecast::dataset::{load_cache, load_recording, make_examples, split_examples, PreprocessedExample, CACHE_MAGIC};
use kneecast::signal::PreprocessConfig;
use kneecast::{Error, Result, Scenario};

use crate::config::{Part, RunConfig};

fn is_cache(path: &Path) -> Result<bool> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    Ok(f.read_exact(&mut magic).is_ok() && &magic == CACHE_MAGIC)
}

/// Examples from CSV recordings or example caches, in argument order.
/// A cache must have been built with the same scenario, horizon and
/// preprocessing.
pub fn load_examples(
    paths: &[impl AsRef<Path>],
    scenario: Scenario,
    horizon: usize,
    preprocess: &PreprocessConfig,
) -> Result<Vec<PreprocessedExample>> {
    if paths.is_empty() {
        return Err(Error::Config("no input recordings given".into()));
    }
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        if is_cache(p)? {
            let c = load_cache(p)?;
            if c.scenario != scenario || c.horizon != horizon || c.preprocess != *preprocess {
                return Err(Error::Config(format!(
                    "{} was cached for {} horizon {} with different settings",
                    p.display(),
                    c.scenario,
                    c.horizon
                )));
            }
            out.extend(c.examples);
        } else {
            out.extend(make_examples(&load_recording(p)?, scenario, horizon, preprocess)?);
        }
    }
    if out.is_empty() {
        return Err(Error::data("recordings are too short to hold a single example"));
    }
    Ok(out)
}

/// Every named source of a configuration, split when asked to.
pub fn config_datasets(config: &RunConfig) -> Result<BTreeMap<String, Vec<PreprocessedExample>>> {
    let mut out = BTreeMap::new();
    for (name, source) in &config.data {
        let scenario = source.scenario.unwrap_or(config.scenario);
        let examples = load_examples(&source.recordings, scenario, config.horizon, &config.preprocess)?;
        let examples = match source.part {
            Part::All => examples,
            part => {
                let policy = source.split.as_ref().unwrap_or(&config.split);
                let sets = split_examples(&examples, policy)?;
                if part == Part::Train {
                    sets.train
                } else {
                    sets.eval
                }
            }
        };
        out.insert(name.clone(), examples);
    }
    Ok(out)
}
