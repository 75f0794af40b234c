//! Network definition, parameter storage, forward pass with caching,
//! loss heads, and (de)serialization of architectures and checkpoints.
//!
//! Vector activations carry shape `[n]`; feature maps carry `[c, h, w]`.
//! The final layer is always a dense layer with a softmax head feeding
//! the cross-entropy loss.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{matvec, Tensor};

/// Element-wise activations plus the softmax head (final layer only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
    Softmax,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => {
                if a > 0.0 {
                    a
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if a >= 0.0 {
                    a
                } else {
                    a.exp() - 1.0
                }
            }
            Activation::Softmax => unreachable!("softmax is applied to whole vectors"),
        }
    }

    pub fn deriv(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if a >= 0.0 {
                    1.0
                } else {
                    a.exp()
                }
            }
            Activation::Softmax => unreachable!("softmax is applied to whole vectors"),
        }
    }

    /// Second derivative. At kinks the convention follows the subgradient
    /// practice: relu'' is 0 everywhere, elu'' at 0 takes the a>0 branch.
    pub fn second_deriv(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                -2.0 * (1.0 - t * t) * t
            }
            Activation::Relu => 0.0,
            Activation::Elu => {
                if a >= 0.0 {
                    0.0
                } else {
                    a.exp()
                }
            }
            Activation::Softmax => unreachable!("softmax is applied to whole vectors"),
        }
    }

    /// Whether the second derivative is identically zero. Used to skip the
    /// curvature second term so piecewise-linear nets take the exact same
    /// code path under every method.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu)
    }
}

/// One network layer. Dense and conv layers own their parameters and carry
/// their activation; pooling and flatten are parameter-free.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense {
        /// `out×in` weight matrix.
        weight: Tensor,
        /// `out` bias vector.
        bias: Tensor,
        act: Activation,
    },
    Conv2D {
        /// `filters[oc][ic]` is the `k1×k2` filter from input channel `ic`
        /// to output channel `oc`.
        filters: Vec<Vec<Tensor>>,
        /// One bias per output channel.
        bias: Vec<f64>,
        act: Activation,
    },
    /// 2×2 max pooling with stride 2, per channel.
    MaxPool,
    /// `[c, h, w]` → `[c·h·w]`, row-major.
    Flatten,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        match self {
            Layer::Dense { weight, bias, .. } => weight.len() + bias.len(),
            Layer::Conv2D { filters, bias, .. } => {
                filters.iter().flatten().map(Tensor::len).sum::<usize>() + bias.len()
            }
            Layer::MaxPool | Layer::Flatten => 0,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            Layer::Dense { act, .. } | Layer::Conv2D { act, .. } => Some(*act),
            _ => None,
        }
    }
}

/// Ordered layer list with a softmax-CE head on the last dense layer.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input_shape: Vec<usize>,
    pub classes: usize,
}

/// Activation inputs and outputs retained per layer for backward passes.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Tensor,
    /// Per layer: pre-activation (dense/conv only) and layer output.
    pub pre: Vec<Option<Tensor>>,
    pub out: Vec<Tensor>,
}

impl ForwardCache {
    /// Input seen by layer `l` (h_{l-1}, with h_0 = x).
    pub fn layer_input(&self, l: usize) -> &Tensor {
        if l == 0 {
            &self.input
        } else {
            &self.out[l - 1]
        }
    }

    /// Pre-softmax logits a_L.
    pub fn logits(&self) -> &Tensor {
        self.pre.last().unwrap().as_ref().unwrap()
    }

    /// Predicted probability vector q.
    pub fn probs(&self) -> &Tensor {
        self.out.last().unwrap()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let m = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&a| (a - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Tensor::vector(exps.into_iter().map(|e| e / z).collect())
}

/// Cross-entropy loss −log q[target] for a one-hot target.
pub fn loss_ce(q: &Tensor, target: usize) -> Result<f64> {
    if target >= q.len() {
        return Err(Error::Shape(format!(
            "target class {} out of range for {} classes",
            target,
            q.len()
        )));
    }
    let sum: f64 = q.data().iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("q sums to {}, not 1", sum)));
    }
    let qt = q.data()[target];
    if qt <= 0.0 {
        return Err(Error::Numeric("q at target index is zero".into()));
    }
    Ok(-qt.ln())
}

fn channel(maps: &Tensor, c: usize) -> Tensor {
    let s = maps.shape();
    let (h, w) = (s[1], s[2]);
    Tensor::new(
        vec![h, w],
        maps.data()[c * h * w..(c + 1) * h * w].to_vec(),
    )
    .unwrap()
}

impl Network {
    /// All-dense network with the given layer widths; hidden layers use
    /// `act`, the final layer is a softmax head.
    pub fn mlp(widths: &[usize], act: Activation, seed: u64) -> Result<Network> {
        if widths.len() < 2 {
            return Err(Error::Config("mlp needs at least input and output widths".into()));
        }
        let mut layers = Vec::new();
        for (spec_idx, w) in widths[1..].iter().enumerate() {
            let is_last = spec_idx == widths.len() - 2;
            layers.push(LayerSpec::Dense {
                units: *w,
                act: if is_last { Activation::Softmax } else { act },
            });
        }
        let arch = ArchSpec {
            input_shape: vec![widths[0]],
            classes: *widths.last().unwrap(),
            layers,
        };
        Network::from_arch(&arch, seed)
    }

    /// Build a network with parameters initialized from `seed`:
    /// weights ~ Uniform(−1/√fan_in, +1/√fan_in), biases zero.
    pub fn from_arch(arch: &ArchSpec, seed: u64) -> Result<Network> {
        let mut layers = Vec::new();
        let mut shape = arch.input_shape.clone();
        for (idx, spec) in arch.layers.iter().enumerate() {
            let is_last = idx == arch.layers.len() - 1;
            match spec {
                LayerSpec::Dense { units, act } => {
                    if shape.len() != 1 {
                        return Err(Error::Shape(format!(
                            "dense layer {} expects a vector input, got {:?} (flatten first)",
                            idx, shape
                        )));
                    }
                    if *act == Activation::Softmax && !is_last {
                        return Err(Error::Config(
                            "softmax head allowed only on the final layer".into(),
                        ));
                    }
                    let fan_in = shape[0];
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut r = rng::stream(seed, &[idx as u64]);
                    let weight = Tensor::new(
                        vec![*units, fan_in],
                        (0..units * fan_in).map(|_| r.gen_range(-bound..bound)).collect(),
                    )?;
                    layers.push(Layer::Dense {
                        weight,
                        bias: Tensor::zeros(vec![*units]),
                        act: *act,
                    });
                    shape = vec![*units];
                }
                LayerSpec::Conv2d { filters, kernel, act } => {
                    if shape.len() != 3 {
                        return Err(Error::Shape(format!(
                            "conv layer {} expects [c,h,w] input, got {:?}",
                            idx, shape
                        )));
                    }
                    if *act == Activation::Softmax {
                        return Err(Error::Config("softmax head must be a dense layer".into()));
                    }
                    let (ic, h, w) = (shape[0], shape[1], shape[2]);
                    let (k1, k2) = (kernel[0], kernel[1]);
                    if k1 > h || k2 > w {
                        return Err(Error::Shape(format!(
                            "conv layer {}: {}x{} kernel larger than {}x{} input",
                            idx, k1, k2, h, w
                        )));
                    }
                    let fan_in = ic * k1 * k2;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut r = rng::stream(seed, &[idx as u64]);
                    let mut banks = Vec::with_capacity(*filters);
                    for _ in 0..*filters {
                        let mut per_in = Vec::with_capacity(ic);
                        for _ in 0..ic {
                            per_in.push(Tensor::new(
                                vec![k1, k2],
                                (0..k1 * k2).map(|_| r.gen_range(-bound..bound)).collect(),
                            )?);
                        }
                        banks.push(per_in);
                    }
                    layers.push(Layer::Conv2D {
                        filters: banks,
                        bias: vec![0.0; *filters],
                        act: *act,
                    });
                    shape = vec![*filters, h - k1 + 1, w - k2 + 1];
                }
                LayerSpec::Maxpool => {
                    if shape.len() != 3 {
                        return Err(Error::Shape(format!(
                            "maxpool layer {} expects [c,h,w] input, got {:?}",
                            idx, shape
                        )));
                    }
                    if shape[1] % 2 != 0 || shape[2] % 2 != 0 {
                        return Err(Error::Shape(format!(
                            "maxpool layer {} needs even extents, got {:?}",
                            idx, shape
                        )));
                    }
                    layers.push(Layer::MaxPool);
                    shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
                }
                LayerSpec::Flatten => {
                    if shape.len() != 3 {
                        return Err(Error::Shape(format!(
                            "flatten layer {} expects [c,h,w] input, got {:?}",
                            idx, shape
                        )));
                    }
                    layers.push(Layer::Flatten);
                    shape = vec![shape.iter().product()];
                }
            }
        }
        match layers.last() {
            Some(Layer::Dense { act: Activation::Softmax, weight, .. }) => {
                if weight.shape()[0] != arch.classes {
                    return Err(Error::Config(format!(
                        "final layer has {} units but {} classes declared",
                        weight.shape()[0],
                        arch.classes
                    )));
                }
            }
            _ => {
                return Err(Error::Config(
                    "network must end in a dense softmax head".into(),
                ))
            }
        }
        Ok(Network {
            layers,
            input_shape: arch.input_shape.clone(),
            classes: arch.classes,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Canonical flat parameter order: layers in order; dense weight
    /// row-major then bias; conv filters by [oc][ic] then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias, .. } => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(bias.data());
                }
                Layer::Conv2D { filters, bias, .. } => {
                    for bank in filters {
                        for f in bank {
                            out.extend_from_slice(f.data());
                        }
                    }
                    out.extend_from_slice(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias, .. } => {
                    let wn = weight.len();
                    weight.data_mut().copy_from_slice(&params[off..off + wn]);
                    off += wn;
                    let bn = bias.len();
                    bias.data_mut().copy_from_slice(&params[off..off + bn]);
                    off += bn;
                }
                Layer::Conv2D { filters, bias, .. } => {
                    for bank in filters.iter_mut() {
                        for f in bank.iter_mut() {
                            let n = f.len();
                            f.data_mut().copy_from_slice(&params[off..off + n]);
                            off += n;
                        }
                    }
                    let bn = bias.len();
                    bias.copy_from_slice(&params[off..off + bn]);
                    off += bn;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardCache> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match network input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let is_last = idx == self.layers.len() - 1;
            match layer {
                Layer::Dense { weight, bias, act } => {
                    let a = matvec(weight, &cur)?.add(bias)?;
                    if !a.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite pre-activation at layer {}",
                            idx
                        )));
                    }
                    let h = if *act == Activation::Softmax {
                        debug_assert!(is_last);
                        softmax(&a)
                    } else {
                        a.map(|v| act.apply(v))
                    };
                    pre.push(Some(a));
                    out.push(h.clone());
                    cur = h;
                }
                Layer::Conv2D { filters, bias, act } => {
                    let ic = cur.shape()[0];
                    let mut maps = Vec::new();
                    let mut oshape = None;
                    for (oc, bank) in filters.iter().enumerate() {
                        let mut acc: Option<Tensor> = None;
                        for c in 0..ic {
                            let part =
                                crate::tensor::conv2d_forward(&channel(&cur, c), &bank[c])?;
                            acc = Some(match acc {
                                None => part,
                                Some(prev) => prev.add(&part)?,
                            });
                        }
                        let m = acc.unwrap().map(|v| v + bias[oc]);
                        oshape = Some([m.shape()[0], m.shape()[1]]);
                        maps.push(m);
                    }
                    let [oh, ow] = oshape.unwrap();
                    let a = Tensor::new(
                        vec![filters.len(), oh, ow],
                        maps.into_iter().flat_map(Tensor::into_data).collect(),
                    )?;
                    if !a.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite pre-activation at layer {}",
                            idx
                        )));
                    }
                    let h = a.map(|v| act.apply(v));
                    pre.push(Some(a));
                    out.push(h.clone());
                    cur = h;
                }
                Layer::MaxPool => {
                    let h = max_pool(&cur)?;
                    pre.push(None);
                    out.push(h.clone());
                    cur = h;
                }
                Layer::Flatten => {
                    let h = cur.reshape(vec![cur.len()])?;
                    pre.push(None);
                    out.push(h.clone());
                    cur = h;
                }
            }
        }
        Ok(ForwardCache {
            input: x.clone(),
            pre,
            out,
        })
    }
}

/// 2×2 stride-2 max pooling over `[c,h,w]`.
pub fn max_pool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
        return Err(Error::Shape(format!("max_pool expects [c,even,even], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for di in 0..2 {
                    for dj in 0..2 {
                        let v = input.data()[ch * h * w + (2 * i + di) * w + (2 * j + dj)];
                        if v > m {
                            m = v;
                        }
                    }
                }
                out[ch * oh * ow + i * ow + j] = m;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Row-major argmax offset within each 2×2 window; ties go to the first
/// index in row-major order.
pub fn max_pool_argmax(input: &Tensor) -> Result<Vec<(usize, usize)>> {
    let s = input.shape();
    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
        return Err(Error::Shape(format!("max_pool expects [c,even,even], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = (0, 0);
                for di in 0..2 {
                    for dj in 0..2 {
                        let v = input.data()[ch * h * w + (2 * i + di) * w + (2 * j + dj)];
                        if v > best {
                            best = v;
                            at = (2 * i + di, 2 * j + dj);
                        }
                    }
                }
                idx.push(at);
            }
        }
    }
    Ok(idx)
}

// ---------------------------------------------------------------------------
// Architecture documents and checkpoints
// ---------------------------------------------------------------------------

/// JSON architecture document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { units: usize, act: Activation },
    Conv2d { filters: usize, kernel: [usize; 2], act: Activation },
    Maxpool,
    Flatten,
}

impl ArchSpec {
    pub fn from_json(s: &str) -> Result<ArchSpec> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the binary file, in f64 elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointSidecar {
    tensors: Vec<CheckpointEntry>,
}

fn checkpoint_entries(net: &Network) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Dense { weight, bias, .. } => {
                out.push((format!("layer{}.weight", l), weight.shape().to_vec(), weight.data().to_vec()));
                out.push((format!("layer{}.bias", l), bias.shape().to_vec(), bias.data().to_vec()));
            }
            Layer::Conv2D { filters, bias, .. } => {
                for (oc, bank) in filters.iter().enumerate() {
                    for (ic, f) in bank.iter().enumerate() {
                        out.push((
                            format!("layer{}.filter.{}.{}", l, oc, ic),
                            f.shape().to_vec(),
                            f.data().to_vec(),
                        ));
                    }
                }
                out.push((format!("layer{}.bias", l), vec![bias.len()], bias.clone()));
            }
            _ => {}
        }
    }
    out
}

/// Write parameters as flat little-endian f64 with a JSON sidecar.
pub fn save_checkpoint(net: &Network, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mut sidecar = CheckpointSidecar { tensors: Vec::new() };
    let mut bin = std::fs::File::create(bin_path)?;
    let mut offset = 0usize;
    for (name, shape, data) in checkpoint_entries(net) {
        sidecar.tensors.push(CheckpointEntry {
            name,
            shape,
            offset,
        });
        for v in &data {
            bin.write_f64::<LittleEndian>(*v)?;
        }
        offset += data.len();
    }
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Load parameters saved by [`save_checkpoint`] into a structurally
/// matching network.
pub fn load_checkpoint(net: &mut Network, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let mut raw = Vec::new();
    std::fs::File::open(bin_path)?.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Format("checkpoint binary not a multiple of 8 bytes".into()));
    }
    let mut values = vec![0.0f64; raw.len() / 8];
    (&raw[..]).read_f64_into::<LittleEndian>(&mut values)?;

    let expected = checkpoint_entries(net);
    if expected.len() != sidecar.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, network has {}",
            sidecar.tensors.len(),
            expected.len()
        )));
    }
    let mut flat = Vec::with_capacity(net.num_params());
    for ((name, shape, _), entry) in expected.iter().zip(&sidecar.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Format(format!(
                "checkpoint tensor {:?} {:?} does not match network tensor {:?} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let n: usize = shape.iter().product();
        if entry.offset + n > values.len() {
            return Err(Error::Format(format!("checkpoint truncated at tensor {}", name)));
        }
        flat.extend_from_slice(&values[entry.offset..entry.offset + n]);
    }
    net.set_params_flat(&flat)
}
