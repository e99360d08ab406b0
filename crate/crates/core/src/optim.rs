use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent with L2 weight decay folded into the gradient.
    Sgd,
    /// Adaptive moments, weight decay folded into the gradient.
    Adam,
    /// Adaptive moments with decoupled weight decay.
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            _ => Err(Error::invalid(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<R = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<R>>,
    pub second: Vec<Vec<R>>,
}

impl<R: Real> Optimizer<R> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update over parameter slices and matching gradient slices.
    pub fn update(&mut self, params: Vec<&mut [R]>, grads: Vec<&[R]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape("parameter and gradient segment counts differ".into()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![R::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let lr = R::of(self.learning_rate);
        let wd = R::of(self.weight_decay);
        let (b1, b2, eps) = (R::of(self.beta1), R::of(self.beta2), R::of(self.eps));
        let bc1 = R::one() - b1.powi(self.step as i32);
        let bc2 = R::one() - b2.powi(self.step as i32);

        for (s, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[s].len() {
                return Err(Error::Shape(format!("segment {s} changed length")));
            }
            let (m, v) = (&mut self.first[s], &mut self.second[s]);
            for i in 0..p.len() {
                match self.kind {
                    OptimizerKind::Sgd => {
                        let grad = g[i] + wd * p[i];
                        p[i] -= lr * grad;
                    }
                    OptimizerKind::Adam | OptimizerKind::AdamW => {
                        let grad = if self.kind == OptimizerKind::Adam {
                            g[i] + wd * p[i]
                        } else {
                            p[i] -= lr * wd * p[i];
                            g[i]
                        };
                        m[i] = b1 * m[i] + (R::one() - b1) * grad;
                        v[i] = b2 * v[i] + (R::one() - b2) * grad * grad;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
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

    fn run(kind: OptimizerKind, lr: f64, wd: f64, steps: usize) -> Vec<f64> {
        // minimize (x - 3)^2 + (y + 1)^2
        let mut x = vec![0.0f64, 0.0];
        let mut opt = Optimizer::new(kind, lr, wd);
        for _ in 0..steps {
            let g = vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)];
            opt.update(vec![x.as_mut_slice()], vec![g.as_slice()]).unwrap();
        }
        x
    }

    #[test]
    fn all_kinds_converge_on_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamW] {
            let lr = if kind == OptimizerKind::Sgd { 0.1 } else { 0.05 };
            let x = run(kind, lr, 0.0, 2000);
            assert!((x[0] - 3.0).abs() < 1e-3 && (x[1] + 1.0).abs() < 1e-3, "{kind:?} {x:?}");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamW] {
            assert_eq!(run(kind, 0.0, 1.0, 10), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut x = vec![1.0f64];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 0.0);
        opt.update(vec![x.as_mut_slice()], vec![[5.0].as_slice()]).unwrap();
        assert!((x[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut x = vec![2.0f64];
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.1, 0.5);
        opt.update(vec![x.as_mut_slice()], vec![[0.0].as_slice()]).unwrap();
        assert!((x[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("AdamW".parse::<OptimizerKind>().unwrap(), OptimizerKind::AdamW);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
