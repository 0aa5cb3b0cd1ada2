//! First-order optimizers used by the training loops.

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Optimizer family selector, as it appears in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::RmsProp => write!(f, "rmsprop"),
        }
    }
}

/// Hyperparameters shared by both optimizers. Fields that do not apply to a
/// family are ignored by it (momentum and L2 belong to RMSProp here).
#[derive(Debug, Clone, Copy)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl OptimizerSettings {
    pub fn adam(lr: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            l2: 0.0,
        }
    }
}

/// Per-parameter optimizer state plus update rule.
pub enum Optimizer {
    Adam(Adam),
    RmsProp(RmsProp),
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings) -> Self {
        match settings.kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(settings.lr)),
            OptimizerKind::RmsProp => Optimizer::RmsProp(RmsProp::new(
                settings.lr,
                settings.momentum,
                settings.l2,
            )),
        }
    }

    /// Applies one update. `params` and `grads` must be aligned and keep the
    /// same order across calls, since state is positional.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::RmsProp(r) => r.step(params, grads),
        }
    }
}

/// Adam with the standard bias correction (β₁=0.9, β₂=0.999, ε=1e-8).
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        check_alignment(params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((p, &g), (m_i, v_i)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m_i = self.beta1 * *m_i + (1.0 - self.beta1) * g;
                *v_i = self.beta2 * *v_i + (1.0 - self.beta2) * g * g;
                let m_hat = *m_i / bc1;
                let v_hat = *v_i / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// RMSProp with momentum and L2 regularization folded into the gradient
/// (α=0.99, ε=1e-8), matching the common deep-learning convention.
pub struct RmsProp {
    lr: f64,
    alpha: f64,
    eps: f64,
    momentum: f64,
    l2: f64,
    sq: Vec<Vec<f64>>,
    buf: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, momentum: f64, l2: f64) -> Self {
        RmsProp {
            lr,
            alpha: 0.99,
            eps: 1e-8,
            momentum,
            l2,
            sq: Vec::new(),
            buf: Vec::new(),
        }
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        check_alignment(params, grads)?;
        if self.sq.is_empty() {
            self.sq = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.buf = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((param, grad), (sq, buf)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.sq.iter_mut().zip(self.buf.iter_mut()))
        {
            for ((p, &g0), (s, b)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(sq.iter_mut().zip(buf.iter_mut()))
            {
                let g = g0 + self.l2 * *p;
                *s = self.alpha * *s + (1.0 - self.alpha) * g * g;
                let update = g / (s.sqrt() + self.eps);
                if self.momentum > 0.0 {
                    *b = self.momentum * *b + update;
                    *p -= self.lr * *b;
                } else {
                    *p -= self.lr * update;
                }
            }
        }
        Ok(())
    }
}

fn check_alignment(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::contract(format!(
            "optimizer got {} params but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    Ok(())
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction, the very first Adam step is lr * sign(g)
        // up to eps.
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(0.5);
        let mut opt = Adam::new(0.01);
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_lr_leaves_params_bitexact() {
        let mut p = Tensor::from_rows(&[vec![0.1, -0.2, 0.3]]).unwrap();
        let before = p.clone();
        let g = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut opt = Adam::new(0.0);
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn adam_decreases_quadratic() {
        let mut p = Tensor::scalar(2.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            let g = Tensor::scalar(2.0 * p.data()[0]);
            opt.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!(p.data()[0].abs() < 0.1, "ended at {}", p.data()[0]);
    }

    #[test]
    fn rmsprop_hand_step() {
        // sq = 0.01*g^2 = 0.04, update = g / (sqrt(0.04)+eps) ≈ 10
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(2.0);
        let mut opt = RmsProp::new(0.001, 0.0, 0.0);
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert!((p.data()[0] + 0.001 * 2.0 / (0.04f64.sqrt() + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_l2_pulls_toward_zero() {
        let mut p = Tensor::scalar(5.0);
        let mut opt = RmsProp::new(0.01, 0.9, 1e-2);
        for _ in 0..50 {
            let g = Tensor::scalar(0.0);
            opt.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!(p.data()[0] < 5.0);
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut grads = vec![Tensor::filled(1, 4, 3.0), Tensor::filled(1, 4, 4.0)];
        clip_global_norm(&mut grads, 1.0);
        let norm: f64 = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_step_is_rejected() {
        let mut p = Tensor::zeros(2, 2);
        let g = Tensor::zeros(2, 3);
        let mut opt = Adam::new(0.1);
        assert!(opt.step(&mut [&mut p], &[g]).is_err());
    }
}
