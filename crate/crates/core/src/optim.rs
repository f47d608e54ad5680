//! SGD with Nesterov momentum and the loss-plateau learning-rate rule.

use crate::error::{check_dim, AweError, Result};
use crate::network::NetworkParams;
use crate::numeric::Real;

/// Velocity buffers mirroring the parameter tensors, plus the current rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub velocity: NetworkParams<F>,
    pub current_lr: f64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &NetworkParams<F>, lr: f64) -> Self {
        OptimizerState {
            velocity: params.zeros_like(),
            current_lr: lr,
        }
    }
}

/// One Nesterov step in the reformulated form that tracks the lookahead
/// point directly:
///
/// ```text
/// v ← μ v − lr g
/// θ ← θ + μ v − lr g
/// ```
///
/// Equivalent to `v ← μ v − lr ∇L(θ + μ v); θ ← θ + v` with a single gradient
/// evaluation per step.
pub fn nesterov_update<F: Real>(
    params: &mut NetworkParams<F>,
    opt: &mut OptimizerState<F>,
    grads: &NetworkParams<F>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let mut pt = params.tensors_mut();
    let mut vt = opt.velocity.tensors_mut();
    let gt = grads.tensors();
    check_dim("optimizer tensor count", pt.len(), gt.len())?;
    check_dim("velocity tensor count", pt.len(), vt.len())?;
    for (k, g) in gt.iter().enumerate() {
        check_dim("optimizer tensor size", pt[k].len(), g.len())?;
        check_dim("velocity tensor size", vt[k].len(), g.len())?;
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(AweError::NonFinite(format!("gradient tensor {k} element {i}")));
        }
    }
    let (lr, mu) = (F::lit(lr), F::lit(momentum));
    for ((p, v), g) in pt.iter_mut().zip(vt.iter_mut()).zip(&gt) {
        for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            let step = lr * g;
            *v = mu * *v - step;
            *p += mu * *v - step;
        }
    }
    opt.current_lr = lr.as_f64();
    Ok(())
}

/// Tracks consecutive loss plateaus and divides the learning rate after
/// `plateau_count` of them in a row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub window: usize,
    pub factor: f64,
    pub plateau_count: usize,
    pub decay: f64,
    consecutive: usize,
}

/// Result of feeding one epoch to [`PlateauSchedule::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauStep {
    pub lr: f64,
    pub plateau: bool,
    pub dropped: bool,
}

impl PlateauSchedule {
    pub fn new(lr: f64, window: usize, factor: f64, plateau_count: usize, decay: f64) -> Self {
        PlateauSchedule {
            lr,
            window,
            factor,
            plateau_count,
            decay,
            consecutive: 0,
        }
    }

    /// `history` holds every mean epoch loss so far, current epoch last.
    /// An epoch is a plateau iff `factor * L_t` exceeds the mean of the
    /// `window` preceding epochs; the first `window` epochs never are.
    pub fn step(&mut self, history: &[f64]) -> PlateauStep {
        let plateau = match history.split_last() {
            Some((&current, previous)) if previous.len() >= self.window && self.window > 0 => {
                let tail = &previous[previous.len() - self.window..];
                let mean = tail.iter().sum::<f64>() / self.window as f64;
                self.factor * current > mean
            }
            _ => false,
        };
        let mut dropped = false;
        if plateau {
            self.consecutive += 1;
            if self.consecutive >= self.plateau_count {
                self.lr /= self.decay;
                self.consecutive = 0;
                dropped = true;
            }
        } else {
            self.consecutive = 0;
        }
        PlateauStep {
            lr: self.lr,
            plateau,
            dropped,
        }
    }
}
