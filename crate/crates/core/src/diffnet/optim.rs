//! Reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

/// Halves the learning rate after `patience` epochs without a relative
/// improvement above `threshold`, floored at `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub floor: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64) -> Self {
        PlateauScheduler {
            lr: initial_lr,
            floor: 1e-6,
            factor: 0.5,
            patience: 10,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's validation loss and return the updated rate.
    pub fn step(&mut self, validation_loss: f64) -> f64 {
        if validation_loss < self.best * (1.0 - self.threshold) {
            self.best = validation_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_loss_keeps_the_rate() {
        let mut sched = PlateauScheduler::new(1e-3);
        let mut loss = 100.0;
        for _ in 0..50 {
            assert_eq!(sched.step(loss), 1e-3);
            loss *= 0.9;
        }
    }

    #[test]
    fn eleven_flat_epochs_halve_the_rate() {
        let mut sched = PlateauScheduler::new(1e-3);
        let mut lr = sched.lr();
        for _ in 0..11 {
            lr = sched.step(1.0);
        }
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn rate_is_floored_after_many_halvings() {
        let mut sched = PlateauScheduler::new(1e-3);
        for _ in 0..(21 * 10) {
            sched.step(1.0);
        }
        assert_eq!(sched.lr(), 1e-6);
    }
}
