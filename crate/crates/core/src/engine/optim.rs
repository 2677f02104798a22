use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::tensor::{Real, Tensor};
use crate::weights::WeightStore;

/// Momentum SGD: `g += wd * w; v = mu * v + g; w -= lr * v`.
///
/// Only tensors that appear in the gradient map are touched, so BatchNorm
/// running statistics are never updated here.
#[derive(Clone, Debug)]
pub struct Sgd<T = f32> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T, weight_decay: T) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, weights: &mut WeightStore<T>, grads: &BTreeMap<String, Tensor<T>>) {
        for (name, g) in grads {
            let Some(w) = weights.get_mut(name) else {
                continue;
            };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(w.shape()));
            if v.len() != w.len() {
                *v = Tensor::zeros(w.shape());
            }
            for ((wv, gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = *gv + self.weight_decay * *wv;
                *vv = self.momentum * *vv + d;
                *wv -= self.lr * *vv;
            }
        }
    }

    /// Drops all momentum buffers (e.g. after the network is rewritten).
    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}
