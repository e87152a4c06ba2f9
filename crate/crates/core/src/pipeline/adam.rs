use crate::error::{Error, Result};
use crate::nn::{Param, Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction and a constant learning rate.
///
/// Moments are stored in the parameter precision; the update itself is
/// evaluated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    lr: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, params: &[Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { lr, t: 0, m: zeros(), v: zeros() }
    }

    /// Restores a saved optimizer after `t` completed steps.
    pub fn from_state(lr: f64, t: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Shape("first and second moments disagree".into()));
        }
        Ok(Self { lr, t, m, v })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            if p.value.shape() != g.shape() || p.value.shape() != m.shape() {
                return Err(Error::Shape(format!("gradient shape {:?} for {}", g.shape(), p.name)));
            }
            let theta = p.value.data_mut().iter_mut();
            for (((th, &gi), mi), vi) in theta.zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi.as_f64();
                let m_new = BETA1 * mi.as_f64() + (1.0 - BETA1) * gi;
                let v_new = BETA2 * vi.as_f64() + (1.0 - BETA2) * gi * gi;
                *mi = T::from_f64(m_new);
                *vi = T::from_f64(v_new);
                let update = self.lr * (m_new / bc1) / ((v_new / bc2).sqrt() + EPSILON);
                *th = T::from_f64(th.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> Vec<Param<f64>> {
        vec![Param { name: "w".into(), value: Tensor::full([1, 1, 1, 1], value) }]
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = one(0.0);
        let mut adam = Adam::new(1e-3, &p);
        adam.step(&mut p, &[Tensor::full([1, 1, 1, 1], 1.0)]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p[0].value.item() + 1e-3).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(0.25);
        let mut adam = Adam::new(1e-3, &p);
        adam.step(&mut p, &[Tensor::zeros([1, 1, 1, 1])]).unwrap();
        assert_eq!(p[0].value.item(), 0.25);
    }

    #[test]
    fn step_size_is_scale_invariant() {
        // with a constant gradient every bias-corrected step is lr / (1 + eps/|g|)
        for g in [1e-3, 1.0, 1e3] {
            let mut p = one(0.0);
            let mut adam = Adam::new(0.01, &p);
            for _ in 0..5 {
                adam.step(&mut p, &[Tensor::full([1, 1, 1, 1], g)]).unwrap();
            }
            assert!((p[0].value.item() + 0.05).abs() < 1e-6, "g = {g}");
        }
    }

    #[test]
    fn shape_errors() {
        let mut p = one(0.0);
        let mut adam = Adam::new(1e-3, &p);
        assert!(adam.step(&mut p, &[]).is_err());
        assert!(adam.step(&mut p, &[Tensor::zeros([1, 1, 1, 2])]).is_err());
    }
}
