use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, clip_global_norm, AdamParams, Moments};
use super::config::{TrainConfig, TrainHistory};
use super::early::run_epochs;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::dataset::PreprocessedExample;
use crate::error::{Error, Result};
use crate::metrics::predict_examples;
use crate::model::{record, BatchInputs, ModelGraph, TargetStats};

/// A trained model and how it got there.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub history: TrainHistory,
}

fn check_examples(model: &ModelGraph, examples: &[PreprocessedExample], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Config(format!("{what} set is empty")));
    }
    let h = model.hyper().horizon;
    if let Some(e) = examples.iter().find(|e| e.horizon != h || e.target.len() != h) {
        return Err(Error::Config(format!(
            "{what} example ending at {} has horizon {}, model predicts {h}",
            e.window.end_index, e.horizon
        )));
    }
    Ok(())
}

/// Which tensors receive gradient under the model's group settings.
pub fn trainable_mask(model: &ModelGraph) -> Vec<bool> {
    model
        .params
        .iter()
        .map(|p| model.group_settings(p.group).is_some_and(|s| s.trainable))
        .collect()
}

type ChunkGrad = (f64, Vec<Option<Vec<f64>>>);

fn chunk_gradient(model: &ModelGraph, chunk: &[&PreprocessedExample], weight: f64, mask: &[bool]) -> Result<ChunkGrad> {
    let windows: Vec<_> = chunk.iter().map(|e| &e.window).collect();
    let inputs = BatchInputs::new(model, &windows)?;
    let mut g = Graph::new();
    let ids: Vec<NodeId> = model
        .params
        .iter()
        .zip(mask)
        .map(|(p, &t)| if t { g.param(p.value.clone()) } else { g.input(p.value.clone()) })
        .collect();
    let rec = record(model, &mut g, &ids, &inputs)?;
    let stats = model.target_stats();
    let z = chunk.iter().flat_map(|e| e.target.iter().map(|&t| stats.standardize(t))).collect();
    let target = g.input(Tensor::new(vec![chunk.len(), model.hyper().horizon], z)?);
    let loss = g.mse(rec.output, target)?;
    let loss = g.scale(loss, weight);
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let per_param = ids
        .iter()
        .zip(mask)
        .zip(&model.params)
        .map(|((&id, &t), p)| t.then(|| grads.get(id).map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec)))
        .collect();
    Ok((value, per_param))
}

/// Standardized MSE over `batch` and its gradient for every trainable
/// tensor (`None` for frozen ones). Work is split into `chunk`-sized pieces
/// that run in parallel and are summed in order.
pub fn loss_and_gradient(
    model: &ModelGraph,
    batch: &[&PreprocessedExample],
    chunk: usize,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    if batch.is_empty() || chunk == 0 {
        return Err(Error::Config("empty batch or zero chunk size".into()));
    }
    let mask = trainable_mask(model);
    let n = batch.len() as f64;
    let parts = batch
        .par_chunks(chunk)
        .map(|c| chunk_gradient(model, c, c.len() as f64 / n, &mask))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grads: Vec<Option<Vec<f64>>> =
        mask.iter().zip(&model.params).map(|(&t, p)| t.then(|| vec![0.0; p.value.len()])).collect();
    for (loss, part) in parts {
        total += loss;
        for (acc, g) in grads.iter_mut().zip(part) {
            if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
            }
        }
    }
    Ok((total, grads))
}

/// Mean squared error in standardized target units, without gradients.
pub fn standardized_mse(model: &ModelGraph, examples: &[PreprocessedExample]) -> Result<f64> {
    let pred = predict_examples(model, examples)?;
    let stats = model.target_stats();
    let truth = examples.iter().flat_map(|e| e.target.iter());
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| ((p - t) / stats.std).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

/// Applies one optimizer step to every trainable tensor.
fn apply_update(
    model: &mut ModelGraph,
    grads: &mut [Option<Vec<f64>>],
    state: &mut [Moments],
    t: u64,
    config: &TrainConfig,
) -> Result<()> {
    if let Some(c) = config.clip_norm {
        let mut views: Vec<&mut [f64]> = grads.iter_mut().flatten().map(Vec::as_mut_slice).collect();
        clip_global_norm(&mut views, c);
    }
    for ((p, g), s) in model.params.iter_mut().zip(grads.iter()).zip(state.iter_mut()) {
        let Some(g) = g else { continue };
        let scale = model.groups.get(&p.group).map_or(1.0, |s| s.lr_scale);
        let hp = AdamParams {
            lr: config.effective_lr() * scale,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
        };
        adam_step(p.value.data_mut(), g, s, t, hp).map_err(|e| match e {
            Error::Numeric { message, .. } => Error::Numeric { node: p.name.clone(), message },
            other => other,
        })?;
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Minimizes standardized MSE on `train_set`, early-stopping on `val_set`,
/// and returns the weights of the best validation epoch.
///
/// If the model has no target statistics yet they are fitted to the
/// training targets first. With `max_epochs == 0` the model is returned
/// unchanged apart from that.
pub fn train(
    model: &ModelGraph,
    train_set: &[PreprocessedExample],
    val_set: &[PreprocessedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_examples(model, train_set, "training")?;
    check_examples(model, val_set, "validation")?;
    let mut model = model.clone();
    if model.target.is_none() {
        model.target = Some(TargetStats::from_values(train_set.iter().flat_map(|e| e.target.iter())));
    }
    let batch = config.batch_size.min(train_set.len());
    let mut state: Vec<Moments> = model.params.iter().map(|p| Moments::zeros(p.value.len())).collect();
    let mut step = 0u64;
    let mut current = model.clone();
    let (history, best) = run_epochs(config.max_epochs, config.patience, config.effective_lr(), |k| {
        let order = epoch_order(train_set.len(), config.seed, k);
        let mut weighted = 0.0;
        for idx in order.chunks(batch) {
            let examples: Vec<&PreprocessedExample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = loss_and_gradient(&current, &examples, config.grad_chunk)?;
            if !loss.is_finite() {
                return Err(Error::Numeric { node: "loss".into(), message: format!("non-finite training loss in epoch {k}") });
            }
            step += 1;
            apply_update(&mut current, &mut grads, &mut state, step, config)?;
            weighted += loss * idx.len() as f64;
        }
        let val = standardized_mse(&current, val_set)?;
        if !val.is_finite() {
            return Err(Error::Numeric { node: "validation".into(), message: format!("non-finite loss in epoch {k}") });
        }
        Ok((weighted / train_set.len() as f64, val, current.values()))
    })?;
    if let Some(values) = best {
        for (p, v) in model.params.iter_mut().zip(values) {
            p.value = v;
        }
    }
    Ok(TrainOutcome { model, history })
}
