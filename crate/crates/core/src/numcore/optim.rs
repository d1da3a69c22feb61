use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state over a fixed, ordered parameter list.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` must match `params[i]` in shape.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            match g {
                None => return Err(Error::MissingGradient(i)),
                Some(g) if g.shape() != p.shape() => {
                    return Err(Error::ShapeMismatch {
                        op: "optim_step",
                        lhs: p.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let g = g.as_ref().expect("checked");
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let g = g.as_ref().expect("checked");
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        *pv -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Convenience for callers that always have every gradient.
    pub fn step_all(&mut self, params: &mut [&mut Tensor], grads: Vec<Tensor>) -> Result<()> {
        let grads: Vec<Option<Tensor>> = grads.into_iter().map(Some).collect();
        self.step(params, &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_one_step() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = OptimState::sgd(0.1).unwrap();
        opt.step(&mut [&mut p], &[Some(Tensor::scalar(0.5))]).unwrap();
        assert_eq!(p.item(), 0.95);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = Tensor::vector(vec![0.3, -2.0]);
            let mut opt = OptimState::new(kind, 0.01).unwrap();
            for _ in 0..3 {
                opt.step(&mut [&mut p], &[Some(Tensor::zeros(&[2]))]).unwrap();
            }
            assert_eq!(p.data(), &[0.3, -2.0]);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut opt = OptimState::adam(0.001).unwrap();
        opt.step(&mut [&mut p], &[Some(Tensor::scalar(1.0))]).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert!((p.item() + 0.001 / (1.0 + ADAM_EPS)).abs() < 1e-18);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = OptimState::sgd(0.1).unwrap();
        assert!(matches!(
            opt.step(&mut [&mut p], &[None]),
            Err(Error::MissingGradient(0))
        ));
    }

    #[test]
    fn rejects_non_positive_lr() {
        assert!(OptimState::sgd(0.0).is_err());
        assert!(OptimState::adam(-1.0).is_err());
    }
}
