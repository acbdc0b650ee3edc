use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerSettings {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    pub settings: OptimizerSettings,
    lr: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(settings: OptimizerSettings) -> Self {
        Self {
            lr: settings.lr,
            settings,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Moments are allocated on the first call
    /// and every later call must present the same parameter layout.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[Vec<S>]) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::shape("parameter and gradient layouts differ"));
        }
        if self.settings.kind == OptimizerKind::Adam {
            if self.step == 0 {
                self.m = grads.iter().map(|g| vec![S::zero(); g.len()]).collect();
                self.v = self.m.clone();
            } else if self.m.len() != grads.len()
                || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
            {
                return Err(Error::shape("optimizer moments do not match parameters"));
            }
        }
        self.step += 1;
        let lr = S::narrow(self.lr);
        match self.settings.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, &gi) in p.iter_mut().zip(g) {
                        *pi = *pi - lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = S::narrow(self.settings.beta1);
                let b2 = S::narrow(self.settings.beta2);
                let eps = S::narrow(self.settings.eps);
                let t = self.step as i32;
                let c1 = S::narrow(1.0 - self.settings.beta1.powi(t));
                let c2 = S::narrow(1.0 - self.settings.beta2.powi(t));
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..g.len() {
                        m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut st = OptimizerState::<f64>::new(OptimizerSettings::sgd(0.1));
        let mut p = vec![1.0];
        st.step(&mut [&mut p[..]], &[vec![1.0]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn sgd_zero_gradient_is_a_no_op() {
        let mut st = OptimizerState::<f32>::new(OptimizerSettings::sgd(0.5));
        let mut p = vec![0.25, -3.0];
        st.step(&mut [&mut p[..]], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.25, -3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for g in [3.0, -0.02, 1e-3] {
            let mut st = OptimizerState::<f64>::new(OptimizerSettings::default());
            let mut p = vec![0.5];
            st.step(&mut [&mut p[..]], &[vec![g]]).unwrap();
            let expected = -1e-3 * g / (f64::abs(g) + 1e-8);
            assert!((p[0] - 0.5 - expected).abs() < 1e-12);
            assert!((p[0] - 0.5 + 1e-3 * f64::signum(g)).abs() < 1e-7);
        }
    }

    #[test]
    fn layout_changes_are_rejected() {
        let mut st = OptimizerState::<f32>::new(OptimizerSettings::default());
        let mut p = vec![0.0; 2];
        assert!(st.step(&mut [&mut p[..]], &[vec![1.0]]).is_err());
        st.step(&mut [&mut p[..]], &[vec![1.0, 1.0]]).unwrap();
        let mut q = vec![0.0; 3];
        assert!(st.step(&mut [&mut q[..]], &[vec![1.0; 3]]).is_err());
    }
}
