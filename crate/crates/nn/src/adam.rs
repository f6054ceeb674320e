//! Adam with bias correction.

use crate::error::{NnError, Result};
use crate::param::{ParamSet, ParamTensor};

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: ParamSet + ?Sized>(params: &P, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let states = params
            .params()
            .iter()
            .map(|p| AdamState { m: vec![0.0; p.len()], v: vec![0.0; p.len()] })
            .collect();
        Self { beta1, beta2, epsilon, step: 0, states }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Applies one update from the accumulated gradients and clears them.
    ///
    /// A non-finite gradient anywhere rejects the whole update: parameters
    /// and moments are left untouched, and so are the gradients so the caller
    /// can inspect them.
    pub fn step<P: ParamSet + ?Sized>(&mut self, set: &mut P, lr: f64) -> Result<()> {
        let mut params = set.params_mut();
        self.step_tensors(&mut params, lr)
    }

    pub fn step_tensors(&mut self, params: &mut [&mut ParamTensor], lr: f64) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(NnError::shape("adam tensor count", self.states.len(), params.len()));
        }
        for (i, (p, s)) in params.iter().zip(&self.states).enumerate() {
            if p.len() != s.m.len() {
                return Err(NnError::shape("adam tensor length", s.m.len(), p.len()));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGrad { index: i });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            let p = &mut **p;
            for (((w, g), m), v) in p
                .values
                .iter_mut()
                .zip(p.grad.iter_mut())
                .zip(s.m.iter_mut())
                .zip(s.v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * *g;
                *v = b2 * *v + (1.0 - b2) * *g * *g;
                // Subnormal moments flush to zero.
                if !m.is_normal() {
                    *m = 0.0;
                }
                if !v.is_normal() {
                    *v = 0.0;
                }
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(ParamTensor);

    impl ParamSet for Scalar {
        fn params(&self) -> Vec<&ParamTensor> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            vec![&mut self.0]
        }
    }

    fn scalar(v: f64) -> Scalar {
        Scalar(ParamTensor::from_values(&[1], vec![v]).unwrap())
    }

    #[test]
    fn decaying_moments_flush_to_zero() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(&p);
        p.0.grad[0] = 1.0;
        adam.step(&mut p, 1e-3).unwrap();
        for _ in 0..7000 {
            adam.step(&mut p, 1e-3).unwrap();
            let m = adam.states()[0].m[0];
            assert!(m == 0.0 || m.is_normal(), "subnormal moment {m:e}");
        }
        assert_eq!(adam.states()[0].m[0], 0.0);
        assert!(p.0.values[0].is_finite());
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut p = scalar(1.25);
        let mut adam = Adam::new(&p);
        p.0.grad[0] = 3.0;
        adam.step(&mut p, 0.0).unwrap();
        assert_eq!(p.0.values[0], 1.25);
        assert_eq!(p.0.grad[0], 0.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(&p);
        p.0.grad[0] = 1.0;
        adam.step(&mut p, 1e-3).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + ε)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.0.values[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        fn reference(mut w: f64, g: f64, lr: f64, steps: i32) -> f64 {
            let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
            let (mut m, mut v) = (0.0, 0.0);
            for t in 1..=steps {
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t));
                let vh = v / (1.0 - b2.powi(t));
                w -= lr * mh / (vh.sqrt() + eps);
            }
            w
        }
        let mut p = scalar(0.5);
        let mut adam = Adam::new(&p);
        for _ in 0..2 {
            p.0.grad[0] = -0.37;
            adam.step(&mut p, 0.01).unwrap();
        }
        assert!((p.0.values[0] - reference(0.5, -0.37, 0.01, 2)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_grad_rejects_update() {
        let mut p = scalar(2.0);
        let mut adam = Adam::new(&p);
        p.0.grad[0] = f64::NAN;
        let err = adam.step(&mut p, 0.1).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGrad { index: 0 }));
        assert_eq!(p.0.values[0], 2.0);
        assert_eq!(adam.step_count(), 0);
    }
}
