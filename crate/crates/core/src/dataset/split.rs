use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::examples::PreprocessedExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitKind {
    /// 80% of each trial for training, 20% for validation.
    Trial80_20,
    /// 50% fine-tuning, 50% evaluation per trial.
    HalfHalf,
    /// Everything from `subject` is held out.
    LeaveOneSubjectOut { subject: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    #[default]
    Chronological,
    Shuffled { seed: u64 },
}

/// Serialized flat, e.g. `{"kind": "trial_80_20", "order": "shuffled", "seed": 3}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SplitRepr", into = "SplitRepr")]
pub struct SplitPolicy {
    pub kind: SplitKind,
    pub ordering: Ordering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OrderTag {
    #[default]
    Chronological,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    #[serde(rename = "trial_80_20")]
    Trial80_20,
    HalfHalf,
    LeaveOneSubjectOut,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitRepr {
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<String>,
    #[serde(default)]
    order: OrderTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl TryFrom<SplitRepr> for SplitPolicy {
    type Error = String;

    fn try_from(r: SplitRepr) -> std::result::Result<Self, String> {
        let kind = match (r.kind, r.subject) {
            (KindTag::LeaveOneSubjectOut, Some(subject)) => SplitKind::LeaveOneSubjectOut { subject },
            (KindTag::LeaveOneSubjectOut, None) => return Err("leave_one_subject_out needs `subject`".into()),
            (_, Some(_)) => return Err("`subject` only applies to leave_one_subject_out".into()),
            (KindTag::Trial80_20, None) => SplitKind::Trial80_20,
            (KindTag::HalfHalf, None) => SplitKind::HalfHalf,
        };
        let ordering = match (r.order, r.seed) {
            (OrderTag::Shuffled, Some(seed)) => Ordering::Shuffled { seed },
            (OrderTag::Shuffled, None) => return Err("shuffled order needs `seed`".into()),
            (OrderTag::Chronological, Some(_)) => return Err("`seed` only applies to shuffled order".into()),
            (OrderTag::Chronological, None) => Ordering::Chronological,
        };
        Ok(Self { kind, ordering })
    }
}

impl From<SplitPolicy> for SplitRepr {
    fn from(p: SplitPolicy) -> Self {
        let (kind, subject) = match p.kind {
            SplitKind::Trial80_20 => (KindTag::Trial80_20, None),
            SplitKind::HalfHalf => (KindTag::HalfHalf, None),
            SplitKind::LeaveOneSubjectOut { subject } => (KindTag::LeaveOneSubjectOut, Some(subject)),
        };
        let (order, seed) = match p.ordering {
            Ordering::Chronological => (OrderTag::Chronological, None),
            Ordering::Shuffled { seed } => (OrderTag::Shuffled, Some(seed)),
        };
        Self { kind, subject, order, seed }
    }
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self::trial_80_20()
    }
}

impl SplitPolicy {
    pub fn trial_80_20() -> Self {
        Self { kind: SplitKind::Trial80_20, ordering: Ordering::Chronological }
    }

    pub fn half_half() -> Self {
        Self { kind: SplitKind::HalfHalf, ordering: Ordering::Chronological }
    }

    pub fn leave_one_subject_out(subject: impl Into<String>) -> Self {
        Self { kind: SplitKind::LeaveOneSubjectOut { subject: subject.into() }, ordering: Ordering::Chronological }
    }

    pub fn shuffled(mut self, seed: u64) -> Self {
        self.ordering = Ordering::Shuffled { seed };
        self
    }

    fn ratio(&self) -> Option<f64> {
        match self.kind {
            SplitKind::Trial80_20 => Some(0.8),
            SplitKind::HalfHalf => Some(0.5),
            SplitKind::LeaveOneSubjectOut { .. } => None,
        }
    }
}

/// What the splitter needs to know about an example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleKey<'a> {
    pub subject_id: &'a str,
    pub trial_id: &'a str,
    pub end_index: usize,
}

impl<'a> From<&'a PreprocessedExample> for ExampleKey<'a> {
    fn from(e: &'a PreprocessedExample) -> Self {
        Self { subject_id: &e.subject_id, trial_id: &e.trial_id, end_index: e.window.end_index }
    }
}

/// Indices into the original list. `train` is the training (or fine-tuning)
/// side, `eval` the validation (or evaluation) side.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Training share of a group of `n`: `round(ratio * n)` kept inside `[1, n-1]`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

/// Splits per (subject, trial) group so every trial contributes to both sides.
/// Chronological order sorts each group by window end; shuffled order permutes
/// each group with a generator seeded once for the whole call.
pub fn split_indices(keys: &[ExampleKey<'_>], policy: &SplitPolicy) -> Result<SplitIndices> {
    if keys.len() < 2 {
        return Err(Error::Split(format!("need at least 2 examples, got {}", keys.len())));
    }
    let mut out = SplitIndices::default();
    if let SplitKind::LeaveOneSubjectOut { subject } = &policy.kind {
        for (i, k) in keys.iter().enumerate() {
            if k.subject_id == subject {
                out.eval.push(i);
            } else {
                out.train.push(i);
            }
        }
        if out.eval.is_empty() {
            return Err(Error::Split(format!("subject `{subject}` has no examples")));
        }
        if out.train.is_empty() {
            return Err(Error::Split(format!("holding out `{subject}` leaves nothing to train on")));
        }
        return Ok(out);
    }

    let ratio = policy.ratio().expect("ratio policies handled here");
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry((k.subject_id, k.trial_id)).or_default().push(i);
    }
    let mut rng = match policy.ordering {
        Ordering::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Ordering::Chronological => None,
    };
    for mut members in groups.into_values() {
        members.sort_by_key(|&i| (keys[i].end_index, i));
        if let Some(rng) = rng.as_mut() {
            members.shuffle(rng);
        }
        let n_train = train_count(members.len(), ratio);
        out.train.extend_from_slice(&members[..n_train]);
        out.eval.extend_from_slice(&members[n_train..]);
    }
    if out.eval.is_empty() {
        return Err(Error::Split("every trial has a single example; nothing left to evaluate".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSets {
    pub train: Vec<PreprocessedExample>,
    pub eval: Vec<PreprocessedExample>,
}

pub fn split_examples(examples: &[PreprocessedExample], policy: &SplitPolicy) -> Result<SplitSets> {
    let keys: Vec<ExampleKey<'_>> = examples.iter().map(ExampleKey::from).collect();
    let idx = split_indices(&keys, policy)?;
    Ok(SplitSets {
        train: idx.train.iter().map(|&i| examples[i].clone()).collect(),
        eval: idx.eval.iter().map(|&i| examples[i].clone()).collect(),
    })
}

/// Training windows (input span `[end+1-window, end]`) of the same trial that
/// overlap an evaluation target.
pub fn count_leaks(
    train: &[PreprocessedExample],
    eval: &[PreprocessedExample],
    window_samples: usize,
    decimation: usize,
) -> usize {
    train
        .iter()
        .filter(|t| {
            let (lo, hi) = (t.start_index(window_samples), t.window.end_index);
            eval.iter().any(|e| {
                e.subject_id == t.subject_id
                    && e.trial_id == t.trial_id
                    && super::examples::target_indices(e.window.end_index, e.horizon, decimation)
                        .any(|i| (lo..=hi).contains(&i))
            })
        })
        .count()
}
