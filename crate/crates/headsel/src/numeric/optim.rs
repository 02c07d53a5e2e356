use super::{ParamGrads, ParamStore, Real, Tensor};

/// Rescale all gradients so their global L2 norm is at most `threshold`.
/// Returns the norm before clipping. Gradients at or under the threshold are
/// left untouched, so clipping is idempotent.
pub fn clip_global_norm<T: Real>(grads: &mut ParamGrads<T>, threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = grads.global_norm();
    if norm > threshold {
        let scale = T::from_f64(threshold / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: first and second moment estimates per parameter
/// plus the shared step counter. The update is the textbook form with
/// explicit bias correction: m_hat = m/(1-b1^t), v_hat = v/(1-b2^t),
/// theta -= lr * m_hat / (sqrt(v_hat) + eps).
pub struct AdamState<T> {
    hyper: AdamHyper,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let m = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        let v = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            hyper,
            m,
            v,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let one = T::one();
        let lr = T::from_f64(self.hyper.learning_rate);
        let eps = T::from_f64(self.hyper.epsilon);
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let theta = store.get_mut(id);
            for k in 0..g.len() {
                let gk = g.at(k);
                let mk = b1 * m.at(k) + (one - b1) * gk;
                let vk = b2 * v.at(k) + (one - b2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                theta.data_mut()[k] = theta.at(k) - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
