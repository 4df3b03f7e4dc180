use crate::tensor::Parameter;

use super::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam with inverse-time decay per iteration and a multiplicative plateau factor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    factor: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, decay: f64) -> Self {
        Self {
            lr,
            decay,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPSILON,
            t: 0,
            factor: 1.0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Accumulated plateau reduction.
    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn reduce(&mut self, factor: f64) {
        self.factor *= factor;
    }

    /// Rate used at iteration `t`: `lr / (1 + decay * t)` times the plateau factor.
    pub fn rate_at(&self, t: u64) -> f64 {
        self.lr / (1.0 + self.decay * t as f64) * self.factor
    }

    /// Rate the most recent step used (or the first step would use).
    pub fn effective_lr(&self) -> f64 {
        self.rate_at(self.t.max(1))
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// One update over every parameter; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<(), TrainError> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(TrainError::UnsetGrad(p.name.clone()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
            return Err(TrainError::ParamLayout);
        }
        self.t += 1;
        let t = self.t as i32;
        let rate = self.rate_at(self.t);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_ref().expect("checked above").data().to_vec();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= rate * mh / (vh.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
