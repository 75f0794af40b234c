//! Stochastic and trivial diagonal baselines: empirical Fisher g²,
//! the Rademacher diagonal estimator E[z ∘ (Hz)], and the Monte-Carlo
//! GGN/Fisher diagonal with model-sampled labels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::curvature::{backprop_grads, CurvaturePack};
use crate::error::Result;
use crate::model::Network;
use crate::oracle::hvp;
use crate::tensor::Tensor;

/// Squared gradient, the empirical Fisher diagonal proxy.
pub fn empirical_fisher_diag(pack: &CurvaturePack) -> Vec<f64> {
    pack.flat_grad().iter().map(|g| g * g).collect()
}

/// Mean over `num_samples` of z ∘ (Hz) with z_i ∈ {−1, +1} uniform.
///
/// Hz comes from the finite-difference Hessian-vector product; at desk
/// scale its error is far below the Monte-Carlo noise floor.
pub fn hutchinson_diag(
    net: &Network,
    x: &Tensor,
    target: usize,
    num_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    assert!(num_samples >= 1);
    let n = net.num_params();
    let mut acc = vec![0.0; n];
    for _ in 0..num_samples {
        let z: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let hz = hvp(net, x, target, &z)?;
        for ((a, &zi), &hzi) in acc.iter_mut().zip(&z).zip(&hz) {
            *a += zi * hzi;
        }
    }
    let inv = 1.0 / num_samples as f64;
    Ok(acc.into_iter().map(|v| v * inv).collect())
}

/// Monte-Carlo GGN/Fisher diagonal: labels are sampled from the model's
/// own predictive distribution and the per-sample squared gradients are
/// averaged.
pub fn ggn_mc_diag(
    net: &Network,
    x: &Tensor,
    num_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    assert!(num_samples >= 1);
    let cache = net.forward(x)?;
    let q = cache.probs();
    let n = net.num_params();
    let mut acc = vec![0.0; n];
    for _ in 0..num_samples {
        let y = sample_categorical(q, rng);
        let g = backprop_grads(net, &cache, y)?.flat_grad();
        for (a, &gi) in acc.iter_mut().zip(&g) {
            *a += gi * gi;
        }
    }
    let inv = 1.0 / num_samples as f64;
    Ok(acc.into_iter().map(|v| v * inv).collect())
}

fn sample_categorical(q: &Tensor, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in q.data().iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    q.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::hesscale_full;
    use crate::model::Activation;
    use crate::rng;

    #[test]
    fn fisher_diag_of_zero_gradients_is_zero() {
        let mut net = Network::mlp(&[2, 2], Activation::Tanh, 0).unwrap();
        if let crate::model::Layer::Dense { weight, bias, .. } = &mut net.layers[0] {
            *weight = Tensor::zeros(vec![2, 2]);
            *bias = Tensor::vector(vec![500.0, -500.0]);
        }
        let cache = net.forward(&Tensor::vector(vec![1.0, 0.0])).unwrap();
        let pack = hesscale_full(crate::curvature::Method::HesScale, &net, &cache, 0).unwrap();
        assert!(empirical_fisher_diag(&pack).iter().all(|&v| v < 1e-300));
    }

    #[test]
    fn fisher_diag_squares_elements() {
        // F = [1, -2] → g² = [1, 4], checked through the flat path
        let pack = CurvaturePack {
            layers: vec![crate::curvature::LayerCurvature {
                grad: crate::curvature::LayerParams::Dense {
                    weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                    bias: Tensor::vector(vec![-2.0]),
                },
                diag: crate::curvature::LayerParams::Empty,
                act_grad: None,
                act_diag: None,
            }],
        };
        assert_eq!(empirical_fisher_diag(&pack), vec![1.0, 4.0]);
    }

    #[test]
    fn hutchinson_deterministic_per_seed() {
        let net = Network::mlp(&[3, 4, 2], Activation::Tanh, 6).unwrap();
        let x = Tensor::vector(vec![0.5, -0.2, 0.9]);
        let a = hutchinson_diag(&net, &x, 0, 3, &mut rng::stream(5, &[1])).unwrap();
        let b = hutchinson_diag(&net, &x, 0, 3, &mut rng::stream(5, &[1])).unwrap();
        let c = hutchinson_diag(&net, &x, 0, 3, &mut rng::stream(5, &[2])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn hutchinson_exact_on_width_one_chain() {
        // with one unit per layer the Hessian is diagonal, so a single
        // Rademacher sample already recovers it: z ∘ (Hz) = z² diag(H)
        let net = Network::mlp(&[1, 1, 1], Activation::Tanh, 9).unwrap();
        let x = Tensor::vector(vec![0.8]);
        let est = hutchinson_diag(&net, &x, 0, 1, &mut rng::stream(0, &[0])).unwrap();
        let exact = crate::oracle::exact_diag(&net, &x, 0).unwrap();
        for (a, b) in est.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn ggn_mc_nonnegative_and_deterministic() {
        let net = Network::mlp(&[4, 5, 3], Activation::Elu, 2).unwrap();
        let x = Tensor::vector(vec![0.1, 0.9, -0.4, 0.0]);
        let a = ggn_mc_diag(&net, &x, 4, &mut rng::stream(1, &[0])).unwrap();
        let b = ggn_mc_diag(&net, &x, 4, &mut rng::stream(1, &[0])).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ggn_mc_zero_at_deterministic_model() {
        // saturated probs: sampled label is fixed and its gradient vanishes
        let mut net = Network::mlp(&[2, 2], Activation::Tanh, 0).unwrap();
        if let crate::model::Layer::Dense { weight, bias, .. } = &mut net.layers[0] {
            *weight = Tensor::zeros(vec![2, 2]);
            *bias = Tensor::vector(vec![500.0, -500.0]);
        }
        let x = Tensor::vector(vec![1.0, 1.0]);
        let est = ggn_mc_diag(&net, &x, 8, &mut rng::stream(3, &[0])).unwrap();
        assert!(est.iter().all(|&v| v < 1e-200));
    }
}
