//! Plateau learning-rate schedule.

/// Epochs without improvement that trigger a cut. The epoch that set the
/// best value opens the plateau, so the cut lands on its sixth epoch.
pub const PLATEAU_PATIENCE: usize = 5;
pub const PLATEAU_TOLERANCE: f64 = 1e-6;
pub const LR_DECAY: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    best: f64,
    stale: usize,
    cuts: usize,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            cuts: 0,
        }
    }
}

impl PlateauSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one validation loss and returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - PLATEAU_TOLERANCE {
            self.best = loss;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= PLATEAU_PATIENCE {
            self.stale = 0;
            self.cuts += 1;
            lr / LR_DECAY
        } else {
            lr
        }
    }

    pub fn cuts(&self) -> usize {
        self.cuts
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Replays `history` through a fresh schedule and returns `current_lr`
/// divided by ten if the last epoch triggers a cut, else unchanged.
pub fn lr_schedule(history: &[f64], current_lr: f64) -> f64 {
    let mut s = PlateauSchedule::new();
    let mut cut_now = false;
    for &loss in history {
        let before = s.cuts();
        s.observe(loss, current_lr);
        cut_now = s.cuts() > before;
    }
    if cut_now {
        current_lr / LR_DECAY
    } else {
        current_lr
    }
}
