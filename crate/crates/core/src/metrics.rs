//! Forecast accuracy.
//!
//! Errors are normalized by the peak-to-peak range `R` of the evaluation
//! truth, pooled over every example and horizon step:
//!
//! - NMAE = mean |e| / R
//! - NRMSE = sqrt(mean e^2) / R
//! - R^2 = 1 - sum e^2 / sum (y - mean y)^2
//!
//! ```
//! use kneecast::metrics::evaluate_metrics;
//!
//! let truth = [0.0, 10.0, 20.0, 40.0];
//! let pred: Vec<f64> = truth.iter().map(|t| t + 2.0).collect();
//! let r = evaluate_metrics(&pred, &truth, 1).unwrap();
//! assert_eq!(r.normalization_range_deg, 40.0);
//! assert!((r.nmae - 0.05).abs() < 1e-15 && (r.nrmse - 0.05).abs() < 1e-15);
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::PreprocessedExample;
use crate::error::{Error, Result};
use crate::model::{forward, ModelGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based horizon step.
    pub step: usize,
    pub nmae: f64,
    pub nrmse: f64,
    /// `None` when the truth at this step is constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmae: f64,
    pub nrmse: f64,
    pub r2: f64,
    pub normalization_range_deg: f64,
    pub n_examples: usize,
    pub horizon: usize,
    /// Filled for horizons above one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_step: Vec<StepMetrics>,
}

fn sums(pred: impl Iterator<Item = f64>, truth: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64, f64, usize) {
    let n = truth.clone().count();
    let mean = truth.clone().sum::<f64>() / n as f64;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    for (p, t) in pred.zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
        tot += (t - mean) * (t - mean);
    }
    (abs, sq, tot, mean, n)
}

/// Metrics for row-major `N x horizon` predictions and truth in degrees.
pub fn evaluate_metrics(pred: &[f64], truth: &[f64], horizon: usize) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} truth values", pred.len(), truth.len())));
    }
    if horizon == 0 || truth.len() % horizon != 0 {
        return Err(Error::shape(format!("{} values do not form rows of {horizon}", truth.len())));
    }
    let n = truth.len() / horizon;
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("need at least 2 examples, got {n}")));
    }
    if let Some(v) = pred.iter().chain(truth).find(|v| !v.is_finite()) {
        return Err(Error::Numeric { node: "metrics".into(), message: format!("non-finite value {v}") });
    }
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::UndefinedMetric("ground truth is constant; range normalization is undefined".into()));
    }
    let (abs, sq, tot, _, count) = sums(pred.iter().copied(), truth.iter().copied());
    let per_step = if horizon > 1 {
        (0..horizon)
            .map(|k| {
                let col = |v: &[f64]| v.iter().skip(k).step_by(horizon).copied().collect::<Vec<f64>>();
                let (p, t) = (col(pred), col(truth));
                let (abs, sq, tot, _, m) = sums(p.into_iter(), t.iter().copied());
                StepMetrics {
                    step: k + 1,
                    nmae: abs / m as f64 / range,
                    nrmse: (sq / m as f64).sqrt() / range,
                    r2: (tot > 0.0).then(|| 1.0 - sq / tot),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(MetricsReport {
        nmae: abs / count as f64 / range,
        nrmse: (sq / count as f64).sqrt() / range,
        r2: 1.0 - sq / tot,
        normalization_range_deg: range,
        n_examples: n,
        horizon,
        per_step,
    })
}

pub fn truth_of(examples: &[PreprocessedExample]) -> Vec<f64> {
    examples.iter().flat_map(|e| e.target.iter().copied()).collect()
}

/// Repeats the last raw angle of each window for every horizon step.
pub fn persistence_predictions(examples: &[PreprocessedExample]) -> Vec<f64> {
    examples
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.window.last_observed_deg, e.horizon))
        .collect()
}

fn horizon_of(examples: &[PreprocessedExample]) -> Result<usize> {
    let h = examples.first().map(|e| e.horizon).ok_or_else(|| Error::UndefinedMetric("no examples".into()))?;
    if examples.iter().any(|e| e.horizon != h || e.target.len() != h) {
        return Err(Error::shape("examples mix horizons"));
    }
    Ok(h)
}

pub fn persistence_report(examples: &[PreprocessedExample]) -> Result<MetricsReport> {
    let h = horizon_of(examples)?;
    evaluate_metrics(&persistence_predictions(examples), &truth_of(examples), h)
}

/// Model predictions (degrees) for every example, row-major.
pub fn predict_examples(model: &ModelGraph, examples: &[PreprocessedExample]) -> Result<Vec<f64>> {
    let windows: Vec<_> = examples.iter().map(|e| &e.window).collect();
    Ok(forward(model, &windows)?.predictions.into_data())
}

pub fn evaluate_model(model: &ModelGraph, examples: &[PreprocessedExample]) -> Result<MetricsReport> {
    let h = horizon_of(examples)?;
    if h != model.hyper().horizon {
        return Err(Error::Config(format!("examples have horizon {h}, model predicts {}", model.hyper().horizon)));
    }
    evaluate_metrics(&predict_examples(model, examples)?, &truth_of(examples), h)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10}", "step", "nmae", "nrmse", "r2");
        let _ = writeln!(s, "{:<8} {:>10.5} {:>10.5} {:>10.5}", "all", self.nmae, self.nrmse, self.r2);
        for st in &self.per_step {
            let r2 = st.r2.map_or("-".to_string(), |v| format!("{v:.5}"));
            let _ = writeln!(s, "{:<8} {:>10.5} {:>10.5} {:>10}", st.step, st.nmae, st.nrmse, r2);
        }
        let _ = writeln!(
            s,
            "n={} horizon={} range={:.4} deg",
            self.n_examples, self.horizon, self.normalization_range_deg
        );
        s
    }
}
