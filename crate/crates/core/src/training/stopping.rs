use serde::{Deserialize, Serialize};

/// Patience-based early stopping on a metric where larger is better.
/// Only a strict improvement resets the counter; non-finite values never improve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Decision {
        let improved = match (self.best_epoch, self.best) {
            (None, _) => true,
            (Some(_), Some(b)) => value.is_finite() && value > b,
            (Some(_), None) => value.is_finite(),
        };
        if improved {
            self.best = value.is_finite().then_some(value);
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Decision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }
}
