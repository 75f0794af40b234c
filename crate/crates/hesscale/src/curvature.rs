//! First-order backprop plus the deterministic diagonal-Hessian
//! backpropagation rules.
//!
//! The curvature recursion walks the layer list backwards carrying two
//! vectors per activation: the loss gradient and a diagonal estimate of
//! the loss Hessian. Off-diagonal terms of the per-layer activation
//! Hessian are dropped, which keeps the cost a constant multiple of
//! plain backprop. The softmax-CE head diagonal is exact (q − q∘q).

use crate::error::{Error, Result};
use crate::model::{max_pool_argmax, Activation, ForwardCache, Layer, Network};
use crate::tensor::{conv2d_forward, conv2d_full, matvec_t, outer, Tensor};

/// Diagonal approximation rule.
///
/// `HesScale` keeps the activation second-derivative term and uses the
/// exact softmax-CE head diagonal. `HesScaleGN` drops the second term,
/// approximating the GGN diagonal. `Bl89` is the same recursion as
/// `HesScale` but with an element-wise approximation at the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    HesScale,
    HesScaleGN,
    Bl89,
}

impl Method {
    fn uses_second_term(self) -> bool {
        !matches!(self, Method::HesScaleGN)
    }
}

/// Per-layer parameter-shaped values (gradients or diagonal estimates).
#[derive(Debug, Clone)]
pub enum LayerParams {
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Conv {
        filters: Vec<Vec<Tensor>>,
        bias: Vec<f64>,
    },
    /// Pooling/flatten layers carry no parameters.
    Empty,
}

impl LayerParams {
    /// Add this layer's values into `acc` starting at `offset`; returns
    /// the offset past this layer. Lets batch loops accumulate without
    /// building a flat vector per example.
    pub fn add_into(&self, acc: &mut [f64], offset: usize) -> usize {
        let mut off = offset;
        let mut push = |data: &[f64], off: &mut usize| {
            for (a, b) in acc[*off..*off + data.len()].iter_mut().zip(data) {
                *a += b;
            }
            *off += data.len();
        };
        match self {
            LayerParams::Dense { weight, bias } => {
                push(weight.data(), &mut off);
                push(bias.data(), &mut off);
            }
            LayerParams::Conv { filters, bias } => {
                for bank in filters {
                    for f in bank {
                        push(f.data(), &mut off);
                    }
                }
                push(bias, &mut off);
            }
            LayerParams::Empty => {}
        }
        off
    }

    pub fn append_flat(&self, out: &mut Vec<f64>) {
        match self {
            LayerParams::Dense { weight, bias } => {
                out.extend_from_slice(weight.data());
                out.extend_from_slice(bias.data());
            }
            LayerParams::Conv { filters, bias } => {
                for bank in filters {
                    for f in bank {
                        out.extend_from_slice(f.data());
                    }
                }
                out.extend_from_slice(bias);
            }
            LayerParams::Empty => {}
        }
    }
}

/// One layer's slice of a backward sweep: parameter gradient F_l,
/// diagonal estimate S_l, and the backpropagated activation vectors
/// r_l = ∂L/∂a_l and s_l ≈ diag ∂²L/∂a_l².
#[derive(Debug, Clone)]
pub struct LayerCurvature {
    pub grad: LayerParams,
    pub diag: LayerParams,
    pub act_grad: Option<Tensor>,
    pub act_diag: Option<Tensor>,
}

/// Result of one full backward sweep.
#[derive(Debug, Clone)]
pub struct CurvaturePack {
    pub layers: Vec<LayerCurvature>,
}

impl CurvaturePack {
    /// Gradient in the canonical flat parameter order.
    pub fn flat_grad(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.grad.append_flat(&mut out);
        }
        out
    }

    /// Diagonal estimate in the canonical flat parameter order.
    pub fn flat_diag(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.diag.append_flat(&mut out);
        }
        out
    }

    /// Accumulate gradient (and optionally the diagonal) into
    /// preallocated flat buffers.
    pub fn add_into(&self, grad_acc: &mut [f64], diag_acc: Option<&mut [f64]>) {
        let mut off = 0;
        for l in &self.layers {
            off = l.grad.add_into(grad_acc, off);
        }
        if let Some(diag_acc) = diag_acc {
            let mut off = 0;
            for l in &self.layers {
                off = l.diag.add_into(diag_acc, off);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat_grad().iter().all(|v| v.is_finite())
            && self.flat_diag().iter().all(|v| v.is_finite())
    }
}

/// Exact softmax-CE head diagonal: s_i = q_i − q_i².
pub fn head_softmax_ce_diag(q: &Tensor) -> Tensor {
    q.map(|qi| qi - qi * qi)
}

/// BL89 element-wise head reading: softmax treated as if element-wise
/// with the normalizer held fixed, chained through the per-element
/// second derivative of the cross-entropy.
pub fn head_bl89_diag(q: &Tensor, target: usize) -> Tensor {
    let mut out = vec![0.0; q.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let qi = q.data()[i];
        let pi = if i == target { 1.0 } else { 0.0 };
        let d1 = qi * (1.0 - qi);
        let d2 = qi * (1.0 - qi) * (1.0 - 2.0 * qi);
        *o = d1 * d1 * (pi / (qi * qi)) + d2 * (-pi / qi);
    }
    Tensor::vector(out)
}

/// Exact Hessian diagonals of the Gaussian log-likelihood (not its
/// negation) with respect to the mean and the variance vector.
///
/// Returns (diag H_μ, diag H_{σ²}) = (−1⊘σ², [0.5·1 − (x−μ)²⊘σ²] ⊘ σ⁴).
pub fn head_gaussian_loglik_diag(
    x: &Tensor,
    mean: &Tensor,
    var: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if x.shape() != mean.shape() || x.shape() != var.shape() {
        return Err(Error::Shape("x, mean, var must share a shape".into()));
    }
    if var.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("variance must be elementwise positive".into()));
    }
    let h_mean = var.map(|v| -1.0 / v);
    let mut h_var = vec![0.0; x.len()];
    for (i, o) in h_var.iter_mut().enumerate() {
        let d = x.data()[i] - mean.data()[i];
        let v = var.data()[i];
        *o = (0.5 - d * d / v) / (v * v);
    }
    Ok((h_mean, Tensor::vector(h_var)))
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

/// Quantities flowing backwards, expressed with respect to the *output*
/// of the layer about to be processed.
struct Flow {
    grad: Tensor,
    /// Diagonal Hessian estimate; absent on gradient-only sweeps.
    diag: Option<Tensor>,
    /// The activation-curvature second-term sum (Σ_k r_k W_{k,i}),
    /// propagated by its own backward
    /// application of the next layer's weights.
    second: Option<Tensor>,
}

fn channel(maps: &Tensor, c: usize) -> Tensor {
    let s = maps.shape();
    let (h, w) = (s[1], s[2]);
    Tensor::new(vec![h, w], maps.data()[c * h * w..(c + 1) * h * w].to_vec()).unwrap()
}

fn stack(maps: Vec<Tensor>) -> Tensor {
    let (h, w) = (maps[0].shape()[0], maps[0].shape()[1]);
    let c = maps.len();
    Tensor::new(
        vec![c, h, w],
        maps.into_iter().flat_map(Tensor::into_data).collect(),
    )
    .unwrap()
}

/// Apply an element-wise activation to the incoming flow: converts
/// derivatives with respect to h_l into derivatives with respect to a_l.
fn through_activation(act: Activation, a: &Tensor, flow: Flow, method: Option<Method>) -> Flow {
    let r = {
        let mut d = flow.grad.clone();
        for (v, &ai) in d.data_mut().iter_mut().zip(a.data()) {
            *v *= act.deriv(ai);
        }
        d
    };
    let diag = flow.diag.as_ref().map(|s_h| {
        let mut s = s_h.clone();
        for (v, &ai) in s.data_mut().iter_mut().zip(a.data()) {
            let d1 = act.deriv(ai);
            *v *= d1 * d1;
        }
        if method.is_some_and(Method::uses_second_term) && !act.is_piecewise_linear() {
            let second = flow
                .second
                .as_ref()
                .expect("second-term sum must be propagated for this method");
            for ((v, &ai), &gi) in s.data_mut().iter_mut().zip(a.data()).zip(second.data()) {
                *v += act.second_deriv(ai) * gi;
            }
        }
        s
    });
    Flow {
        grad: r,
        diag,
        second: None,
    }
}

/// One backward sweep over the whole network.
///
/// `head_diag` seeds s_L; when `None` only gradients are computed.
/// `head_grad` seeds r_L with respect to the logits a_L, so callers can
/// inject unit vectors to extract Jacobian rows.
fn sweep(
    net: &Network,
    cache: &ForwardCache,
    head_grad: Tensor,
    head_diag: Option<Tensor>,
    method: Option<Method>,
) -> Result<CurvaturePack> {
    if cache.out.len() != net.layers.len() {
        return Err(Error::Shape("cache does not match network depth".into()));
    }
    let want_diag = head_diag.is_some();
    let mut flow = Flow {
        grad: head_grad,
        diag: head_diag,
        second: None,
    };
    let mut layers = vec![
        LayerCurvature {
            grad: LayerParams::Empty,
            diag: LayerParams::Empty,
            act_grad: None,
            act_diag: None,
        };
        net.layers.len()
    ];
    for (l, layer) in net.layers.iter().enumerate().rev() {
        let is_head = l == net.layers.len() - 1;
        match layer {
            Layer::Dense { weight, act, .. } => {
                let a = cache.pre[l]
                    .as_ref()
                    .ok_or_else(|| Error::Shape("missing pre-activation in cache".into()))?;
                if a.len() != weight.shape()[0] {
                    return Err(Error::Shape("cache does not match layer width".into()));
                }
                // head flow is already with respect to a_L
                let at_a = if is_head {
                    flow
                } else {
                    through_activation(*act, a, flow, method)
                };
                let input = cache.layer_input(l);
                layers[l].grad = LayerParams::Dense {
                    weight: outer(&at_a.grad, input)?,
                    bias: at_a.grad.clone(),
                };
                if let Some(s) = &at_a.diag {
                    layers[l].diag = LayerParams::Dense {
                        weight: outer(s, &input.square())?,
                        bias: s.clone(),
                    };
                }
                let next = Flow {
                    grad: matvec_t(weight, &at_a.grad)?,
                    diag: match &at_a.diag {
                        Some(s) => Some(matvec_t(&weight.square(), s)?),
                        None => None,
                    },
                    second: if want_diag && method.is_some_and(Method::uses_second_term) {
                        Some(matvec_t(weight, &at_a.grad)?)
                    } else {
                        None
                    },
                };
                layers[l].act_grad = Some(at_a.grad);
                layers[l].act_diag = at_a.diag;
                flow = next;
            }
            Layer::Conv2D { filters, act, .. } => {
                let a = cache.pre[l]
                    .as_ref()
                    .ok_or_else(|| Error::Shape("missing pre-activation in cache".into()))?;
                let at_a = through_activation(*act, a, flow, method);
                let input = cache.layer_input(l);
                let ic = input.shape()[0];
                let oc = filters.len();

                let mut grad_filters = Vec::with_capacity(oc);
                let mut diag_filters = Vec::with_capacity(oc);
                let mut grad_bias = Vec::with_capacity(oc);
                let mut diag_bias = Vec::with_capacity(oc);
                for o in 0..oc {
                    let r_map = channel(&at_a.grad, o);
                    let mut gbank = Vec::with_capacity(ic);
                    let mut dbank = Vec::with_capacity(ic);
                    for c in 0..ic {
                        let h_in = channel(input, c);
                        gbank.push(conv2d_forward(&h_in, &r_map)?);
                        if let Some(s) = &at_a.diag {
                            dbank.push(conv2d_forward(&h_in.square(), &channel(s, o))?);
                        }
                    }
                    grad_filters.push(gbank);
                    grad_bias.push(r_map.sum());
                    if let Some(s) = &at_a.diag {
                        diag_filters.push(dbank);
                        diag_bias.push(channel(s, o).sum());
                    }
                }
                layers[l].grad = LayerParams::Conv {
                    filters: grad_filters,
                    bias: grad_bias,
                };
                if at_a.diag.is_some() {
                    layers[l].diag = LayerParams::Conv {
                        filters: diag_filters,
                        bias: diag_bias,
                    };
                }

                // propagate to the input maps; out-of-range output
                // indices contribute zero, i.e. full correlation
                let mut g_in = Vec::with_capacity(ic);
                let mut s_in = Vec::with_capacity(ic);
                let mut sec_in = Vec::with_capacity(ic);
                let want_second = want_diag && method.is_some_and(Method::uses_second_term);
                for c in 0..ic {
                    let mut g_acc: Option<Tensor> = None;
                    let mut s_acc: Option<Tensor> = None;
                    let mut sec_acc: Option<Tensor> = None;
                    for (o, bank) in filters.iter().enumerate() {
                        let w = &bank[c];
                        let g_part = conv2d_full(&channel(&at_a.grad, o), w)?;
                        g_acc = Some(match g_acc {
                            None => g_part,
                            Some(p) => p.add(&g_part)?,
                        });
                        if let Some(s) = &at_a.diag {
                            let s_part = conv2d_full(&channel(s, o), &w.square())?;
                            s_acc = Some(match s_acc {
                                None => s_part,
                                Some(p) => p.add(&s_part)?,
                            });
                        }
                        if want_second {
                            let sec_part = conv2d_full(&channel(&at_a.grad, o), w)?;
                            sec_acc = Some(match sec_acc {
                                None => sec_part,
                                Some(p) => p.add(&sec_part)?,
                            });
                        }
                    }
                    g_in.push(g_acc.unwrap());
                    if let Some(s) = s_acc {
                        s_in.push(s);
                    }
                    if let Some(s) = sec_acc {
                        sec_in.push(s);
                    }
                }
                let diag = if s_in.is_empty() { None } else { Some(stack(s_in)) };
                let second = if sec_in.is_empty() { None } else { Some(stack(sec_in)) };
                layers[l].act_grad = Some(at_a.grad);
                layers[l].act_diag = at_a.diag;
                flow = Flow {
                    grad: stack(g_in),
                    diag,
                    second,
                };
            }
            Layer::MaxPool => {
                let input = cache.layer_input(l);
                let routes = max_pool_argmax(input)?;
                let s_in = input.shape();
                let (h, w) = (s_in[1], s_in[2]);
                let (oh, ow) = (h / 2, w / 2);
                let c = s_in[0];
                let route_back = |small: &Tensor| {
                    let mut big = Tensor::zeros(vec![c, h, w]);
                    for ch in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let (ri, rj) = routes[ch * oh * ow + i * ow + j];
                                big.data_mut()[ch * h * w + ri * w + rj] =
                                    small.data()[ch * oh * ow + i * ow + j];
                            }
                        }
                    }
                    big
                };
                flow = Flow {
                    grad: route_back(&flow.grad),
                    diag: flow.diag.as_ref().map(&route_back),
                    second: flow.second.as_ref().map(&route_back),
                };
            }
            Layer::Flatten => {
                let shape = cache.layer_input(l).shape().to_vec();
                flow = Flow {
                    grad: flow.grad.reshape(shape.clone())?,
                    diag: match flow.diag {
                        Some(d) => Some(d.reshape(shape.clone())?),
                        None => None,
                    },
                    second: match flow.second {
                        Some(s) => Some(s.reshape(shape)?),
                        None => None,
                    },
                };
            }
        }
    }
    Ok(CurvaturePack { layers })
}

/// Gradient-only backward pass for the cross-entropy head: r_L = q − p.
pub fn backprop_grads(net: &Network, cache: &ForwardCache, target: usize) -> Result<CurvaturePack> {
    let q = cache.probs();
    if target >= q.len() {
        return Err(Error::Shape(format!(
            "target {} out of range for {} classes",
            target,
            q.len()
        )));
    }
    let mut r = q.clone();
    r.data_mut()[target] -= 1.0;
    sweep(net, cache, r, None, None)
}

/// Gradient of `seed · a_L` with respect to all parameters; used to
/// extract Jacobian rows of the logits.
pub fn backprop_from_logits(
    net: &Network,
    cache: &ForwardCache,
    seed: &Tensor,
) -> Result<CurvaturePack> {
    if seed.len() != cache.logits().len() {
        return Err(Error::Shape("seed length does not match logits".into()));
    }
    sweep(net, cache, seed.clone(), None, None)
}

/// Backward sweep seeded with a caller-supplied head gradient and head
/// Hessian diagonal with respect to the logits, for losses other than
/// softmax cross-entropy (e.g. scalar regression heads).
pub fn hesscale_with_head(
    method: Method,
    net: &Network,
    cache: &ForwardCache,
    head_grad: Tensor,
    head_diag: Tensor,
) -> Result<CurvaturePack> {
    if head_grad.len() != cache.logits().len() || head_diag.len() != cache.logits().len() {
        return Err(Error::Shape("head seeds must match the logit count".into()));
    }
    sweep(net, cache, head_grad, Some(head_diag), Some(method))
}

/// Full backward sweep: gradients plus the diagonal Hessian estimate of
/// the chosen method, for every layer.
pub fn hesscale_full(
    method: Method,
    net: &Network,
    cache: &ForwardCache,
    target: usize,
) -> Result<CurvaturePack> {
    let q = cache.probs();
    if target >= q.len() {
        return Err(Error::Shape(format!(
            "target {} out of range for {} classes",
            target,
            q.len()
        )));
    }
    let mut r = q.clone();
    r.data_mut()[target] -= 1.0;
    let s = match method {
        Method::HesScale | Method::HesScaleGN => head_softmax_ce_diag(q),
        Method::Bl89 => head_bl89_diag(q, target),
    };
    sweep(net, cache, r, Some(s), Some(method))
}
