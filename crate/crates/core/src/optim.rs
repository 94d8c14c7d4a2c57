//! Nesterov momentum and learning-rate schedules.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::real::Real;

/// Mini-batch Nesterov accelerated gradient in the lookahead-stored form.
///
/// The stored weights `p` are the lookahead point `theta + mu * v`, so the
/// gradient computed at `p` is the Nesterov gradient. One step is
///
/// ```text
/// v <- mu * v - lr * g
/// p <- p + mu * v - lr * g
/// ```
///
/// The plain iterate is recovered as `theta = p - mu * v` (see
/// [`Nag::underlying`]). With `mu = 0` both lines reduce to SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct Nag<T> {
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Nag<T> {
    pub fn new(momentum: f64, store: &ParamStore<T>) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        let velocity = store.iter().map(|p| alloc::vec![T::zero(); p.value.shape().numel()]).collect();
        Ok(Nag { momentum, velocity })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.velocity.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.velocity.len(),
                store.len()
            )));
        }
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(lr);
        for (param, vel) in store.iter_mut().zip(&mut self.velocity) {
            let Some(grad) = param.value.grad() else {
                return Err(Error::Contract(format!("parameter {} has no gradient", param.name)));
            };
            let grad: Vec<T> = grad.to_vec();
            for ((p, v), g) in param.value.data_mut().iter_mut().zip(vel.iter_mut()).zip(grad) {
                let step = lr * g;
                *v = mu * *v - step;
                *p -= step;
                if self.momentum != 0.0 {
                    *p += mu * *v;
                }
            }
        }
        Ok(())
    }

    /// The plain NAG iterate `p - mu * v` for every parameter.
    pub fn underlying(&self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        let mu = T::from_f64(self.momentum);
        store
            .iter()
            .zip(&self.velocity)
            .map(|(p, v)| p.value.data().iter().zip(v).map(|(&p, &v)| p - mu * v).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `lr_min + (lr_max - lr_min) * (1 + cos(pi * t / period)) / 2`,
    /// held at `lr_min` past the period.
    Cosine {
        lr_max: f64,
        lr_min: f64,
        period: usize,
    },
    /// Multiplies the rate by `factor` each time the monitored loss has gone
    /// `patience` consecutive epochs without a new best.
    Plateau {
        lr: f64,
        factor: f64,
        patience: usize,
        lr_min: f64,
    },
}

impl LrSchedule {
    pub const PLATEAU_FACTOR: f64 = 0.1;
    pub const PLATEAU_PATIENCE: usize = 5;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("lr schedule: {m}")));
        match *self {
            LrSchedule::Constant { lr } if !(lr >= 0.0 && lr.is_finite()) => bad("lr must be finite and >= 0"),
            LrSchedule::Cosine { lr_max, lr_min, period } => {
                if !(lr_min >= 0.0 && lr_max >= lr_min && lr_max.is_finite()) {
                    bad("need 0 <= lr_min <= lr_max")
                } else if period == 0 {
                    bad("period must be positive")
                } else {
                    Ok(())
                }
            }
            LrSchedule::Plateau { lr, factor, patience, lr_min } => {
                if !(lr >= 0.0 && lr.is_finite() && lr_min >= 0.0 && lr_min <= lr) {
                    bad("need 0 <= lr_min <= lr")
                } else if !(factor > 0.0 && factor < 1.0) {
                    bad("plateau factor must be in (0, 1)")
                } else if patience == 0 {
                    bad("plateau patience must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Rate for epoch `epoch` (0-based). `history` holds the monitored loss of
    /// each finished epoch; only the plateau schedule reads it.
    pub fn lr_at(&self, epoch: usize, history: &[f64]) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_max, lr_min, period } => {
                if epoch >= period {
                    return lr_min;
                }
                let phase = core::f64::consts::PI * epoch as f64 / period as f64;
                lr_min + 0.5 * (lr_max - lr_min) * (1.0 + num_traits::Float::cos(phase))
            }
            LrSchedule::Plateau { lr, factor, patience, lr_min } => {
                let mut rate = lr;
                let mut best = f64::INFINITY;
                let mut stale = 0;
                for &loss in &history[..epoch.min(history.len())] {
                    if loss < best {
                        best = loss;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= patience {
                            rate = (rate * factor).max(lr_min);
                            stale = 0;
                        }
                    }
                }
                rate
            }
        }
    }
}
