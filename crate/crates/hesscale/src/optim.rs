//! Optimizers: SGD and the Adam-style moment template shared by Adam and
//! the second-order variants. The variants differ only in where the
//! second-moment source comes from: squared gradients (Adam), a diagonal
//! curvature recursion, a Rademacher estimate, or an MC Fisher estimate.
//!
//! The damping term sits *inside* the square root, W ← W − α M̂ ⊘ (V̂+ε)^½,
//! for every variant so comparisons are apples to apples.

use rand_chacha::ChaCha8Rng;

use crate::curvature::{backprop_grads, hesscale_full, Method};
use crate::error::{Error, Result};
use crate::estimators::{ggn_mc_diag, hutchinson_diag};
use crate::model::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptState {
    pub fn new(n: usize) -> Self {
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One moment update and parameter write:
    /// M ← β₁M + (1−β₁)F, V ← β₂V + (1−β₂)S², bias-corrected, then
    /// W ← W − α M̂ ⊘ (V̂ + ε)^½. A non-finite input refuses the step
    /// and leaves both state and parameters untouched.
    pub fn step(
        &mut self,
        net: &mut Network,
        hyper: &Hyper,
        grad: &[f64],
        second: &[f64],
    ) -> Result<()> {
        let n = self.m.len();
        if grad.len() != n || second.len() != n {
            return Err(Error::Shape(format!(
                "update length {}/{} does not match state {}",
                grad.len(),
                second.len(),
                n
            )));
        }
        if grad.iter().chain(second).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite update, step refused".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - hyper.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.t as i32);
        let mut w = net.params_flat();
        for i in 0..n {
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * grad[i];
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * second[i] * second[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            w[i] -= hyper.alpha * m_hat / (v_hat + hyper.eps).sqrt();
        }
        net.set_params_flat(&w)
    }
}

/// Plain gradient descent, W ← W − α·F.
pub fn step_sgd(net: &mut Network, grad: &[f64], alpha: f64) -> Result<()> {
    let mut w = net.params_flat();
    if grad.len() != w.len() {
        return Err(Error::Shape("gradient length mismatch".into()));
    }
    for (wi, gi) in w.iter_mut().zip(grad) {
        *wi -= alpha * gi;
    }
    net.set_params_flat(&w)
}

/// The optimizer family benchmarked against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdaHesScale,
    AdaHesScaleGn,
    AdaHessian,
    AdaGgnMc,
    Bl89,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdaHesScale => "adahesscale",
            OptimizerKind::AdaHesScaleGn => "adahesscalegn",
            OptimizerKind::AdaHessian => "adahessian",
            OptimizerKind::AdaGgnMc => "adaggnmc",
            OptimizerKind::Bl89 => "bl89",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            "adahesscale" => OptimizerKind::AdaHesScale,
            "adahesscalegn" => OptimizerKind::AdaHesScaleGn,
            "adahessian" => OptimizerKind::AdaHessian,
            "adaggnmc" => OptimizerKind::AdaGgnMc,
            "bl89" => OptimizerKind::Bl89,
            _ => return Err(Error::Config(format!("unknown optimizer {:?}", s))),
        })
    }

    pub fn all() -> &'static [OptimizerKind] {
        &[
            OptimizerKind::Sgd,
            OptimizerKind::Adam,
            OptimizerKind::AdaHesScale,
            OptimizerKind::AdaHesScaleGn,
            OptimizerKind::AdaHessian,
            OptimizerKind::AdaGgnMc,
            OptimizerKind::Bl89,
        ]
    }
}

/// One optimizer instance bound to a parameter count.
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    pub state: OptState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hyper: Hyper, num_params: usize) -> Self {
        Optimizer {
            kind,
            hyper,
            state: OptState::new(num_params),
        }
    }

    /// Batch gradient and second-moment source, averaged over examples.
    pub fn batch_stats(
        &self,
        net: &Network,
        xs: &[Tensor],
        ys: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = net.num_params();
        let mut grad = vec![0.0; n];
        let mut second = vec![0.0; n];
        for (x, &y) in xs.iter().zip(ys) {
            let cache = net.forward(x)?;
            match self.kind {
                // first-order methods read their second-moment source from
                // the gradient after the loop, with no extra accumulation
                OptimizerKind::Sgd | OptimizerKind::Adam => {
                    backprop_grads(net, &cache, y)?.add_into(&mut grad, None);
                }
                OptimizerKind::AdaHesScale => {
                    hesscale_full(Method::HesScale, net, &cache, y)?
                        .add_into(&mut grad, Some(&mut second));
                }
                OptimizerKind::AdaHesScaleGn => {
                    hesscale_full(Method::HesScaleGN, net, &cache, y)?
                        .add_into(&mut grad, Some(&mut second));
                }
                OptimizerKind::Bl89 => {
                    hesscale_full(Method::Bl89, net, &cache, y)?
                        .add_into(&mut grad, Some(&mut second));
                }
                OptimizerKind::AdaHessian => {
                    backprop_grads(net, &cache, y)?.add_into(&mut grad, None);
                    let s = hutchinson_diag(net, x, y, 1, rng)?;
                    for (a, b) in second.iter_mut().zip(&s) {
                        *a += b;
                    }
                }
                OptimizerKind::AdaGgnMc => {
                    backprop_grads(net, &cache, y)?.add_into(&mut grad, None);
                    let s = ggn_mc_diag(net, x, 1, rng)?;
                    for (a, b) in second.iter_mut().zip(&s) {
                        *a += b;
                    }
                }
            }
        }
        let inv = 1.0 / xs.len() as f64;
        grad.iter_mut().for_each(|v| *v *= inv);
        if matches!(self.kind, OptimizerKind::Sgd | OptimizerKind::Adam) {
            second.copy_from_slice(&grad);
        } else {
            second.iter_mut().for_each(|v| *v *= inv);
        }
        Ok((grad, second))
    }

    /// One full update on a minibatch.
    pub fn step_batch(
        &mut self,
        net: &mut Network,
        xs: &[Tensor],
        ys: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let (grad, second) = self.batch_stats(net, xs, ys, rng)?;
        match self.kind {
            OptimizerKind::Sgd => step_sgd(net, &grad, self.hyper.alpha),
            _ => self.state.step(net, &self.hyper, &grad, &second),
        }
    }
}
