//! Momentum SGD with L2 weight decay.

use super::layers::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {weight_decay}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// `v ← momentum·v + g + weight_decay·w; w ← w − lr·v`, applied to the
    /// trainable blocks only. A non-finite gradient aborts the step before
    /// anything is modified.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        let grad_blocks = grads.trainable();
        let mut blocks = params.trainable_mut();
        if grad_blocks.len() != blocks.len() {
            return Err(Error::Shape(format!(
                "{} gradient blocks for {} parameter blocks",
                grad_blocks.len(),
                blocks.len()
            )));
        }
        for ((name, g), w) in grad_blocks.iter().zip(blocks.iter()) {
            if g.len() != w.len() {
                return Err(Error::Shape(format!("gradient block {name} has {} values, expected {}", g.len(), w.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    context: format!("gradient block {name}"),
                });
            }
        }
        if self.velocity.is_empty() {
            self.velocity = blocks.iter().map(|b| vec![0.0; b.len()]).collect();
        }
        for ((w, (_, g)), v) in blocks.iter_mut().zip(&grad_blocks).zip(&mut self.velocity) {
            for ((wi, gi), vi) in w.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *wi;
                *wi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::layers::{DenseParams, LayerParams, LayerSpec};

    fn single(w: f64) -> NetworkParams {
        NetworkParams {
            layers: vec![LayerParams::Dense(DenseParams {
                weight: vec![w],
                bias: vec![0.0],
            })],
        }
    }

    fn weight(p: &NetworkParams) -> f64 {
        p.trainable()[0].1[0]
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut p = single(1.0);
        let g = single(2.0);
        Sgd::new(0.1, 0.0, 0.0).unwrap().step(&mut p, &g).unwrap();
        assert!((weight(&p) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let specs = vec![LayerSpec::Dense {
            in_features: 3,
            units: 2,
        }];
        let mut p = NetworkParams::zeros(&specs);
        if let LayerParams::Dense(d) = &mut p.layers[0] {
            d.weight = vec![0.5, -1.0, 2.0, 3.0, 0.1, 0.2];
        }
        let before = p.clone();
        let mut sgd = Sgd::new(0.3, 0.9, 0.0).unwrap();
        for _ in 0..3 {
            sgd.step(&mut p, &NetworkParams::zeros(&specs)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        // v1 = g, w1 = w0 − lr·g; v2 = m·g + g, w2 = w1 − lr·(1 + m)·g
        let (lr, m, g, w0) = (0.05, 0.9, 1.5, 2.0);
        let mut p = single(w0);
        let grad = single(g);
        let mut sgd = Sgd::new(lr, m, 0.0).unwrap();
        sgd.step(&mut p, &grad).unwrap();
        assert!((weight(&p) - (w0 - lr * g)).abs() < 1e-15);
        sgd.step(&mut p, &grad).unwrap();
        let expected = w0 - lr * g - lr * (1.0 + m) * g;
        assert!((weight(&p) - expected).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut p = single(2.0);
        let grad = single(0.0);
        Sgd::new(0.1, 0.0, 0.5).unwrap().step(&mut p, &grad).unwrap();
        assert!((weight(&p) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = single(1.0);
        let before = p.clone();
        let grad = single(f64::NAN);
        let err = Sgd::new(0.1, 0.0, 0.0).unwrap().step(&mut p, &grad).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert_eq!(p, before);
    }

    #[test]
    fn invalid_lr_rejected() {
        assert!(Sgd::new(0.0, 0.0, 0.0).is_err());
        assert!(Sgd::new(-1.0, 0.0, 0.0).is_err());
    }
}
