use super::config::{TrainConfig, TrainHistory};
use super::fit::train;
use crate::dataset::{count_leaks, PreprocessedExample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, MetricsReport};
use crate::model::{ModelGraph, TargetStats};
use crate::signal::WindowSpec;

/// Reduced rates allowed when adapting a trained model.
pub const FINETUNE_LR_SCALES: [f64; 2] = [0.1, 0.2];

/// Fine-tune sets at least this large hold out their last fifth for
/// early stopping; smaller ones stop on their own training loss.
pub const MIN_HELD_OUT: usize = 10;

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: ModelGraph,
    pub history: TrainHistory,
    /// Adapted model on the evaluation set.
    pub report: MetricsReport,
    /// Unadapted model on the same set.
    pub zero_shot: MetricsReport,
}

/// Fails with [`Error::Leak`] when any `train` window overlaps an `eval`
/// target in the same recording.
pub fn ensure_disjoint(stage: &str, train: &[PreprocessedExample], eval: &[PreprocessedExample], window: &WindowSpec) -> Result<()> {
    let count = count_leaks(train, eval, window.input_len(), window.decimation());
    if count > 0 {
        return Err(Error::Leak { stage: stage.to_string(), count });
    }
    Ok(())
}

/// Splits a chronological fine-tune set into gradient and early-stopping
/// parts.
pub fn holdout(set: &[PreprocessedExample]) -> (&[PreprocessedExample], &[PreprocessedExample]) {
    if set.len() < MIN_HELD_OUT {
        return (set, set);
    }
    let held = (set.len() as f64 * 0.2).round() as usize;
    set.split_at(set.len() - held)
}

/// Adapts `model` to `finetune_set` at a reduced learning rate and scores
/// it on `eval_set`, which must not overlap the fine-tune data.
pub fn finetune(
    model: &ModelGraph,
    finetune_set: &[PreprocessedExample],
    eval_set: &[PreprocessedExample],
    config: &TrainConfig,
    window: &WindowSpec,
) -> Result<FinetuneOutcome> {
    if finetune_set.is_empty() {
        return Err(Error::Config("fine-tune set is empty".into()));
    }
    if !FINETUNE_LR_SCALES.contains(&config.lr_scale) {
        return Err(Error::Config(format!(
            "fine-tune lr_scale {} not in {FINETUNE_LR_SCALES:?}",
            config.lr_scale
        )));
    }
    ensure_disjoint("finetune", finetune_set, eval_set, window)?;
    let mut start = model.clone();
    if start.target.is_none() {
        start.target = Some(TargetStats::from_values(finetune_set.iter().flat_map(|e| e.target.iter())));
    }
    let zero_shot = evaluate_model(&start, eval_set)?;
    let (fit, val) = holdout(finetune_set);
    let out = train(&start, fit, val, config)?;
    let report = evaluate_model(&out.model, eval_set)?;
    let mut adapted = out.model;
    adapted.provenance.push(format!("finetune lr={}", config.effective_lr()));
    Ok(FinetuneOutcome { model: adapted, history: out.history, report, zero_shot })
}
