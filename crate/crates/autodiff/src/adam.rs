//! Adam optimizer with independent per-parameter state.

use crate::array::Array;
use crate::scalar::Scalar;
use crate::{AutodiffError, Result};
use std::collections::BTreeMap;

struct Slot<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

/// Adam with decoupled per-path first/second moment estimates and step
/// counts, so freezing a parameter for a few stages does not distort its
/// bias correction when it thaws.
pub struct Adam<S: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    slots: BTreeMap<String, Slot<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            slots: BTreeMap::new(),
        }
    }

    /// The common configuration: betas 0.9/0.999, eps 1e-8.
    pub fn with_lr(lr: f64) -> Self {
        Adam::new(lr, 0.9, 0.999, 1e-8)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Number of steps taken for a path so far.
    pub fn step_count(&self, path: &str) -> u64 {
        self.slots.get(path).map_or(0, |s| s.t)
    }

    /// One update for one parameter. Moments are created lazily on the
    /// first step for the path.
    pub fn step(&mut self, path: &str, value: &mut Array<S>, grad: &Array<S>) -> Result<()> {
        if grad.shape() != value.shape() {
            return Err(AutodiffError::Shape {
                op: "adam_step",
                detail: format!("grad {:?} for value {:?}", grad.shape(), value.shape()),
            });
        }
        let n = value.len();
        let slot = self.slots.entry(path.to_string()).or_insert_with(|| Slot {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        });
        if slot.m.len() != n {
            return Err(AutodiffError::Invalid {
                op: "adam_step",
                msg: format!("{path}: size changed from {} to {n}", slot.m.len()),
            });
        }
        slot.t += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let c1 = S::from_f64(1.0 - self.beta1.powi(slot.t as i32));
        let c2 = S::from_f64(1.0 - self.beta2.powi(slot.t as i32));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        for i in 0..n {
            let g = grad.data[i];
            slot.m[i] = b1 * slot.m[i] + (one - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (one - b2) * g * g;
            let mhat = slot.m[i] / c1;
            let vhat = slot.v[i] / c2;
            value.data[i] = value.data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}
