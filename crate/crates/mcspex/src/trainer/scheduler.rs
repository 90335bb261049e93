//! Reduce-on-plateau learning rate schedule with early stopping.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauAction {
    Improved,
    Continue,
    Decayed,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub best: f64,
    /// Epochs since the last improvement; drives early stopping.
    pub since_improvement: usize,
    /// Epochs since the last improvement or decay; drives decay.
    pub since_decay: usize,
    pub decay_patience: usize,
    pub stop_patience: usize,
    pub factor: f64,
    pub threshold: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            best: f64::INFINITY,
            since_improvement: 0,
            since_decay: 0,
            decay_patience: 3,
            stop_patience: 8,
            factor: 0.5,
            threshold: 1e-6,
        }
    }
}

impl Plateau {
    /// Records one epoch's validation loss and adjusts `lr` in place.
    pub fn observe(&mut self, val_loss: f64, lr: &mut f64) -> PlateauAction {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.since_improvement = 0;
            self.since_decay = 0;
            return PlateauAction::Improved;
        }
        self.since_improvement += 1;
        self.since_decay += 1;
        if self.since_improvement >= self.stop_patience {
            return PlateauAction::Stop;
        }
        if self.since_decay >= self.decay_patience {
            self.since_decay = 0;
            *lr *= self.factor;
            return PlateauAction::Decayed;
        }
        PlateauAction::Continue
    }
}
