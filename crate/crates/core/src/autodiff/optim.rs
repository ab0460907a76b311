use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per tensor of the store it
/// was created for; tensors without a gradient are skipped.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update and quantizes the touched tensors to f32 so that
    /// checkpoints round-trip exactly.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let lr = self.cfg.learning_rate;
        for ((_, tensor), (m, v)) in store.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if !tensor.requires_grad() {
                continue;
            }
            let Some(g) = tensor.grad().map(|g| g.to_vec()) else { continue };
            for (((p, gi), mi), vi) in tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * gi;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            tensor.quantize_f32();
        }
    }
}

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, t) in store.iter_mut() {
            if let Some(g) = t.grad().map(|g| g.iter().map(|v| v * s).collect::<Vec<_>>()) {
                t.clear_grad();
                t.accumulate_grad(&g);
            }
        }
    }
    norm
}
