use super::{Array, Params};
use crate::error::{Error, Result};

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: f64, params: &Params) -> Result<Self> {
        Self::with_constants(lr, Self::BETA1, Self::BETA2, Self::EPS, params)
    }

    pub fn with_constants(lr: f64, beta1: f64, beta2: f64, eps: f64, params: &Params) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(Error::Invalid(format!(
                "bad Adam constants beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        let zeros: Vec<Array> = params.iter().map(|p| Array::zeros(p.value.shape())).collect();
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut Params) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
