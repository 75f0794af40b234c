//! Brute-force exact references: full finite-difference Hessian, exact
//! Hessian diagonal, exact GGN diagonal, and Hessian-vector products.
//!
//! Second derivatives come from central differences of the backprop
//! gradient, which is itself validated against central differences of
//! the loss. Step sizes are fixed here so tolerances elsewhere are
//! reproducible: 1e-5 per coordinate, scaled by max(1, |w|).

use rayon::prelude::*;

use crate::curvature::{backprop_from_logits, backprop_grads};
use crate::error::{Error, Result};
use crate::model::{loss_ce, Network};
use crate::tensor::Tensor;

/// Refuse brute-force Hessians above this parameter count.
pub const MAX_ORACLE_PARAMS: usize = 5000;

const FD_STEP: f64 = 1e-5;

/// Dense symmetric-within-noise Hessian in the canonical flat parameter
/// order.
#[derive(Debug, Clone)]
pub struct HessianMatrix {
    pub h: Tensor,
}

impl HessianMatrix {
    pub fn n(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn diag(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| self.h.at2(i, i)).collect()
    }

    /// ‖H − Hᵀ‖∞ / ‖H‖∞.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n();
        let mut gap: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                gap = gap.max((self.h.at2(i, j) - self.h.at2(j, i)).abs());
                scale = scale.max(self.h.at2(i, j).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            gap / scale
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.h.at2(i, j) * v[j]).sum())
            .collect()
    }
}

/// Loss at the network's current parameters.
pub fn loss(net: &Network, x: &Tensor, target: usize) -> Result<f64> {
    let cache = net.forward(x)?;
    loss_ce(cache.probs(), target)
}

/// Backprop gradient in flat parameter order.
pub fn grad(net: &Network, x: &Tensor, target: usize) -> Result<Vec<f64>> {
    let cache = net.forward(x)?;
    Ok(backprop_grads(net, &cache, target)?.flat_grad())
}

fn grad_at(net: &Network, params: &[f64], x: &Tensor, target: usize) -> Result<Vec<f64>> {
    let mut n = net.clone();
    n.set_params_flat(params)?;
    grad(&n, x, target)
}

/// Central finite differences of the loss; the independent check on the
/// backprop gradient.
pub fn grad_fd_of_loss(net: &Network, x: &Tensor, target: usize, eps: f64) -> Result<Vec<f64>> {
    let w0 = net.params_flat();
    let mut out = vec![0.0; w0.len()];
    let mut scratch = net.clone();
    for j in 0..w0.len() {
        let mut wp = w0.clone();
        wp[j] += eps;
        scratch.set_params_flat(&wp)?;
        let lp = loss(&scratch, x, target)?;
        wp[j] = w0[j] - eps;
        scratch.set_params_flat(&wp)?;
        let lm = loss(&scratch, x, target)?;
        out[j] = (lp - lm) / (2.0 * eps);
    }
    Ok(out)
}

/// Central-difference Hessian of any gradient function; column `j` is
/// `(g(w+εe_j) − g(w−εe_j)) / 2ε` with ε scaled by max(1, |w_j|).
pub fn fd_hessian_of_grad(
    grad_fn: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    w0: &[f64],
) -> Result<HessianMatrix> {
    let n = w0.len();
    if n > MAX_ORACLE_PARAMS {
        return Err(Error::SizeGuard(format!(
            "{} parameters exceed the oracle limit of {}",
            n, MAX_ORACLE_PARAMS
        )));
    }
    let cols: Result<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let eps = FD_STEP * w0[j].abs().max(1.0);
            let mut w = w0.to_vec();
            w[j] = w0[j] + eps;
            let gp = grad_fn(&w)?;
            w[j] = w0[j] - eps;
            let gm = grad_fn(&w)?;
            Ok(gp
                .iter()
                .zip(&gm)
                .map(|(p, m)| (p - m) / (2.0 * eps))
                .collect())
        })
        .collect();
    let cols = cols?;
    let mut h = Tensor::zeros(vec![n, n]);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            h.set2(i, j, v);
        }
    }
    Ok(HessianMatrix { h })
}

/// Full finite-difference Hessian of the loss with respect to all
/// parameters.
pub fn full_hessian_fd(net: &Network, x: &Tensor, target: usize) -> Result<HessianMatrix> {
    let w0 = net.params_flat();
    fd_hessian_of_grad(&|w| grad_at(net, w, x, target), &w0)
}

/// Exact Hessian diagonal (finite differences), without materializing
/// the full matrix.
pub fn exact_diag(net: &Network, x: &Tensor, target: usize) -> Result<Vec<f64>> {
    let w0 = net.params_flat();
    let n = w0.len();
    if n > MAX_ORACLE_PARAMS {
        return Err(Error::SizeGuard(format!(
            "{} parameters exceed the oracle limit of {}",
            n, MAX_ORACLE_PARAMS
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|j| {
            let eps = FD_STEP * w0[j].abs().max(1.0);
            let mut w = w0.clone();
            w[j] = w0[j] + eps;
            let gp = grad_at(net, &w, x, target)?;
            w[j] = w0[j] - eps;
            let gm = grad_at(net, &w, x, target)?;
            Ok((gp[j] - gm[j]) / (2.0 * eps))
        })
        .collect()
}

/// Exact diagonal of the generalized Gauss-Newton matrix for the
/// softmax-CE head: diag(G)_i = Σ_{c,c'} J_{c,i} H_out_{c,c'} J_{c',i}
/// with J the Jacobian of the logits and H_out = diag(q) − qqᵀ.
pub fn exact_ggn_diag(net: &Network, x: &Tensor, target: usize) -> Result<Vec<f64>> {
    let _ = target; // GGN of the CE head depends on q only
    let n = net.num_params();
    let cache = net.forward(x)?;
    let q = cache.probs().clone();
    let m = q.len();
    if m * n > MAX_ORACLE_PARAMS * 10 {
        return Err(Error::SizeGuard(format!(
            "{}x{} Jacobian exceeds the oracle budget",
            m, n
        )));
    }
    // rows of J via unit-vector backprops from the logits
    let mut jac = Vec::with_capacity(m);
    for c in 0..m {
        let mut seed = Tensor::zeros(vec![m]);
        seed.data_mut()[c] = 1.0;
        jac.push(backprop_from_logits(net, &cache, &seed)?.flat_grad());
    }
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let col: Vec<f64> = (0..m).map(|c| jac[c][i]).collect();
        let mut acc = 0.0;
        for c in 0..m {
            for cp in 0..m {
                let h_out = if c == cp {
                    q.data()[c] - q.data()[c] * q.data()[cp]
                } else {
                    -q.data()[c] * q.data()[cp]
                };
                acc += col[c] * h_out * col[cp];
            }
        }
        *o = acc;
    }
    Ok(out)
}

/// Finite-difference Hessian-vector product
/// `(g(w+εv) − g(w−εv)) / 2ε` with ε = 1e-5 / max(1, ‖v‖∞).
pub fn hvp(net: &Network, x: &Tensor, target: usize, v: &[f64]) -> Result<Vec<f64>> {
    let w0 = net.params_flat();
    if v.len() != w0.len() {
        return Err(Error::Shape(format!(
            "hvp direction has {} entries, expected {}",
            v.len(),
            w0.len()
        )));
    }
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !vmax.is_finite() {
        return Err(Error::Numeric("non-finite direction".into()));
    }
    let eps = FD_STEP / vmax.max(1.0);
    let wp: Vec<f64> = w0.iter().zip(v).map(|(w, d)| w + eps * d).collect();
    let wm: Vec<f64> = w0.iter().zip(v).map(|(w, d)| w - eps * d).collect();
    let gp = grad_at(net, &wp, x, target)?;
    let gm = grad_at(net, &wm, x, target)?;
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect())
}
