use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    /// A loss must drop by more than this to count as an improvement.
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 3,
            factor: 0.5,
            min_delta: 1e-4,
            min_lr: 1e-6,
        }
    }
}

/// Halves (by default) the learning rate after `patience` epochs without
/// improvement, never going below `min_lr`. No cooldown; the wait counter
/// restarts after each reduction.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        Self {
            config,
            lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's monitored loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.config.min_delta {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// The rate after replaying `history` through a fresh scheduler started at `lr`.
pub fn reduce_lr_on_plateau(history: &[f64], lr: f64, config: &PlateauConfig) -> f64 {
    let mut s = PlateauScheduler::new(lr, *config);
    for &loss in history {
        s.observe(loss);
    }
    s.lr()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    /// Stop now and restore the weights of `best_epoch`.
    Stop { best_epoch: usize },
}

#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Any strict decrease counts as an improvement.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            return StopDecision::Continue;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop {
                best_epoch: self.best_epoch.unwrap_or(epoch),
            }
        } else {
            StopDecision::Continue
        }
    }
}

/// Replays `history` (epoch `i` at index `i`) and reports where training would stop.
pub fn early_stop(history: &[f64], patience: usize) -> StopDecision {
    let mut es = EarlyStopping::new(patience);
    for (epoch, &loss) in history.iter().enumerate() {
        if let stop @ StopDecision::Stop { .. } = es.observe(epoch, loss) {
            return stop;
        }
    }
    StopDecision::Continue
}
