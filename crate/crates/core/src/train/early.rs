use super::config::{StopReason, TrainHistory};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs bring no new strict minimum.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        let improved = match self.best {
            None => !loss.is_nan(),
            Some((_, b)) => loss < b,
        };
        if improved {
            self.best = Some((epoch, loss));
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    /// 1-based epoch and loss of the best observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Epoch driver shared by every training entry point.
///
/// `epoch(k)` runs 1-based epoch `k` and returns its training loss,
/// validation loss and a snapshot of the weights. The snapshot of the best
/// validation epoch is returned alongside the history.
pub fn run_epochs<T>(
    max_epochs: usize,
    patience: usize,
    lr: f64,
    mut epoch: impl FnMut(usize) -> Result<(f64, f64, T)>,
) -> Result<(TrainHistory, Option<T>)> {
    let mut stopper = EarlyStopping::new(patience);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        lr: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: None,
        best_val_loss: None,
    };
    let mut best = None;
    for k in 1..=max_epochs {
        let (train, val, snapshot) = epoch(k)?;
        history.train_loss.push(train);
        history.val_loss.push(val);
        history.lr.push(lr);
        match stopper.observe(k, val) {
            Verdict::Improved => best = Some(snapshot),
            Verdict::Continue => {}
            Verdict::Stop => {
                history.stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    if let Some((e, l)) = stopper.best() {
        history.best_epoch = Some(e);
        history.best_val_loss = Some(l);
    }
    Ok((history, best))
}
