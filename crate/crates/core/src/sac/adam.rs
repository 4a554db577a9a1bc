use crate::error::{Error, Result};
use crate::ndmath::Mlp;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adaptive-moment optimizer state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    fn check(&self, grads: &[f64]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape("adam", (self.m.len(), 1), (grads.len(), 1)));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok(())
    }

    /// Advances the moments and returns the per-parameter update `Δ` to
    /// subtract from the parameters.
    fn advance(&mut self, grads: &[f64]) -> Vec<f64> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.lr;
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grads)
            .map(move |((m, v), &g)| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON)
            })
            .collect()
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.check(grads)?;
        if params.len() != grads.len() {
            return Err(Error::shape("adam params", (params.len(), 1), (grads.len(), 1)));
        }
        for (p, d) in params.iter_mut().zip(self.advance(grads)) {
            *p -= d;
        }
        Ok(())
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &[f64]) -> Result<()> {
        self.check(grads)?;
        let deltas = self.advance(grads);
        net.for_each_param_mut(|i, p| *p -= deltas[i]);
        Ok(())
    }
}
