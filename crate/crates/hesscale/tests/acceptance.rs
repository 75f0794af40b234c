//! End-to-end acceptance suite. Each test covers one release criterion
//! and prints a single PASS/FAIL line (visible with `--nocapture`; on
//! failure the captured output is shown automatically).

use std::sync::{Mutex, MutexGuard, PoisonError};
use std::time::Instant;

/// The timing criterion shares a process with allocation-heavy oracle
/// criteria; the system allocator's fragmentation after those would
/// distort its measurements, so the suite runs on mimalloc.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

use rand::Rng;

use hesscale::bench::{
    run_quality, run_timing, run_training, QualityConfig, TimingConfig, TrainConfig,
};
use hesscale::curvature::{
    backprop_from_logits, head_gaussian_loglik_diag, head_softmax_ce_diag, hesscale_full,
    hesscale_with_head, Method,
};
use hesscale::model::{softmax, Activation, ArchSpec, Layer, LayerSpec, Network};
use hesscale::optim::{Hyper, Optimizer, OptimizerKind};
use hesscale::{oracle, rng, Tensor};

/// The timing and runtime-bounded criteria need the machine to
/// themselves, so every criterion serializes on one lock regardless of
/// the harness thread count.
static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    EXCLUSIVE.lock().unwrap_or_else(PoisonError::into_inner)
}

fn report(criterion: &str, ok: bool) {
    println!("criterion {}: {}", criterion, if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion failed: {}", criterion);
}

fn random_input(d: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[0xacce]);
    Tensor::vector((0..d).map(|_| r.gen_range(-1.5..1.5)).collect())
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let net = Network::mlp(&[6, 16, 16, 16, 10], Activation::Tanh, seed).unwrap();
        let x = random_input(6, seed);
        let target = (seed as usize) % 10;
        let g = oracle::grad(&net, &x, target).unwrap();
        let g_fd = oracle::grad_fd_of_loss(&net, &x, target, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&g_fd) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-3));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        &format!(
            "1 (gradient vs central differences, max rel err {:.2e}, {:.1}s)",
            worst, elapsed
        ),
        worst <= 1e-6 && elapsed < 60.0,
    );
}

#[test]
fn criterion_02_head_diagonal_matches_fd() {
    let _guard = exclusive();
    let mut worst = 0.0f64;
    for m in [2usize, 5, 10] {
        for trial in 0..20u64 {
            let mut r = rng::stream(trial, &[2, m as u64]);
            let logits = Tensor::vector((0..m).map(|_| r.gen_range(-3.0..3.0)).collect());
            let target = r.gen_range(0..m);
            let analytic = head_softmax_ce_diag(&softmax(&logits));
            let f = |a: &Tensor| -(softmax(a).data()[target]).ln();
            let eps = 1e-4;
            for i in 0..m {
                let mut ap = logits.clone();
                ap.data_mut()[i] += eps;
                let mut am = logits.clone();
                am.data_mut()[i] -= eps;
                let fd = (f(&ap) - 2.0 * f(&logits) + f(&am)) / (eps * eps);
                worst = worst.max((analytic.data()[i] - fd).abs());
            }
        }
    }
    report(
        &format!("2 (softmax-CE head diag vs FD, max abs err {:.2e})", worst),
        worst <= 1e-6,
    );
}

#[test]
fn criterion_03_structural_exactness() {
    let _guard = exclusive();
    // (a) a single dense softmax-CE layer: the recursion starts from the
    // exact head diagonal and S = s·h² introduces no approximation
    let mut worst_single = 0.0f64;
    for seed in 0..10 {
        let net = Network::mlp(&[5, 4], Activation::Tanh, seed).unwrap();
        let x = random_input(5, seed + 100);
        let cache = net.forward(&x).unwrap();
        let est = hesscale_full(Method::HesScale, &net, &cache, 2)
            .unwrap()
            .flat_diag();
        let exact = oracle::exact_diag(&net, &x, 2).unwrap();
        for (a, b) in est.iter().zip(&exact) {
            worst_single = worst_single.max((a - b).abs());
        }
    }

    // (b) width-1 chains under a scalar quadratic head ½(a−t)²: every
    // per-layer Hessian is 1×1, so diagonal propagation drops nothing.
    // (With a multi-class softmax head even a width-1 chain picks up the
    // head's off-diagonal, so the claim is specific to scalar heads.)
    let mut worst_chain = 0.0f64;
    let t = 0.3;
    for depth in 2..=6usize {
        for seed in 0..10 {
            let widths = vec![1usize; depth + 1];
            let net = Network::mlp(&widths, Activation::Tanh, seed).unwrap();
            let x = Tensor::vector(vec![0.7]);
            let cache = net.forward(&x).unwrap();
            let a = cache.logits().data()[0];
            let est = hesscale_with_head(
                Method::HesScale,
                &net,
                &cache,
                Tensor::vector(vec![a - t]),
                Tensor::vector(vec![1.0]),
            )
            .unwrap()
            .flat_diag();

            let grad_fn = |w: &[f64]| {
                let mut probe = net.clone();
                probe.set_params_flat(w)?;
                let cache = probe.forward(&x)?;
                let a = cache.logits().data()[0];
                let pack =
                    backprop_from_logits(&probe, &cache, &Tensor::vector(vec![a - t]))?;
                Ok(pack.flat_grad())
            };
            let exact = oracle::fd_hessian_of_grad(&grad_fn, &net.params_flat())
                .unwrap()
                .diag();
            for (p, q) in est.iter().zip(&exact) {
                worst_chain = worst_chain.max((p - q).abs());
            }
        }
    }
    report(
        &format!(
            "3 (structural exactness: single-layer {:.2e}, width-1 chains {:.2e})",
            worst_single, worst_chain
        ),
        worst_single <= 1e-6 && worst_chain <= 1e-6,
    );
}

#[test]
fn criterion_04_relu_collapses_to_gn_bitwise() {
    let _guard = exclusive();
    let mut ok = true;
    for seed in 0..5 {
        let net = Network::mlp(&[6, 16, 16, 10], Activation::Relu, seed).unwrap();
        let x = random_input(6, seed + 40);
        let cache = net.forward(&x).unwrap();
        let a = hesscale_full(Method::HesScale, &net, &cache, 1).unwrap();
        let b = hesscale_full(Method::HesScaleGN, &net, &cache, 1).unwrap();
        ok &= a
            .flat_diag()
            .iter()
            .zip(&b.flat_diag())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    }
    report("4 (relu: both variants bitwise identical)", ok);
}

#[test]
fn criterion_05_quality_ranking() {
    let _guard = exclusive();
    let start = Instant::now();
    let cfg = QualityConfig::default();
    let records = run_quality(&cfg).unwrap();

    let per_seed = |method: &str| -> Vec<f64> {
        cfg.seeds
            .iter()
            .map(|&s| {
                records
                    .iter()
                    .find(|r| r.method == method && r.seed == s)
                    .unwrap()
                    .normalized_error
            })
            .collect()
    };
    let med = |method: &str| median(&mut per_seed(method));

    let rivals = ["bl89", "g2", "adahessian_mc1", "ggn_mc1"];
    let rival_best = rivals.iter().map(|m| med(m)).fold(f64::INFINITY, f64::min);
    let ranking_ok = med("hesscale") < rival_best;

    let gn_vs_ggn_ok = med("hesscalegn") <= 1.2 * med("diag_g");

    let improved = |mc50: &str, mc1: &str| -> usize {
        per_seed(mc50)
            .iter()
            .zip(&per_seed(mc1))
            .filter(|(a, b)| a < b)
            .count()
    };
    let hutchinson_wins = improved("adahessian_mc50", "adahessian_mc1");
    let ggn_wins = improved("ggn_mc50", "ggn_mc1");

    let elapsed = start.elapsed().as_secs_f64();
    report(
        &format!(
            "5 (quality ranking: hesscale med 1.0 < rivals {:.2}, gn/ggn {:.2}, \
             mc50<mc1 {}/{} and {}/{} seeds, {:.0}s)",
            rival_best,
            med("hesscalegn") / med("diag_g"),
            hutchinson_wins,
            cfg.seeds.len(),
            ggn_wins,
            cfg.seeds.len(),
            elapsed
        ),
        ranking_ok && gn_vs_ggn_ok && hutchinson_wins >= 8 && ggn_wins >= 8 && elapsed < 600.0,
    );
}

// --- naive loop transcription used by criterion 6 ---------------------------

fn at3(t: &Tensor, c: usize, i: usize, j: usize) -> f64 {
    let s = t.shape();
    t.data()[c * s[1] * s[2] + i * s[2] + j]
}

struct NaiveFlow {
    grad: Vec<f64>,
    diag: Vec<f64>,
    second: Vec<f64>,
}

/// Direct nested-loop evaluation of the conv/dense recursions for a
/// conv-conv-flatten-dense net, sharing only the forward cache with the
/// library implementation.
fn naive_curvature(
    net: &Network,
    cache: &hesscale::model::ForwardCache,
    target: usize,
    method: Method,
) -> (Vec<f64>, Vec<f64>) {
    let use_second = !matches!(method, Method::HesScaleGN);
    let q = cache.probs();
    let m = q.len();

    // dense head
    let (w_head, _) = match &net.layers[3] {
        Layer::Dense { weight, bias, .. } => (weight, bias),
        _ => panic!("layer 3 must be dense"),
    };
    let h_in = cache.layer_input(3);
    let d = h_in.len();
    let r: Vec<f64> = (0..m)
        .map(|i| q.data()[i] - if i == target { 1.0 } else { 0.0 })
        .collect();
    let s: Vec<f64> = q.data().iter().map(|qi| qi - qi * qi).collect();
    let mut dense_grad = Vec::new();
    let mut dense_diag = Vec::new();
    for i in 0..m {
        for j in 0..d {
            dense_grad.push(r[i] * h_in.data()[j]);
            dense_diag.push(s[i] * h_in.data()[j] * h_in.data()[j]);
        }
    }
    dense_grad.extend_from_slice(&r);
    dense_diag.extend_from_slice(&s);
    let mut flow = NaiveFlow {
        grad: (0..d)
            .map(|j| (0..m).map(|i| w_head.at2(i, j) * r[i]).sum())
            .collect(),
        diag: (0..d)
            .map(|j| (0..m).map(|i| w_head.at2(i, j).powi(2) * s[i]).sum())
            .collect(),
        second: (0..d)
            .map(|j| (0..m).map(|i| w_head.at2(i, j) * r[i]).sum())
            .collect(),
    };
    // flatten is a pure reshape of row-major data: nothing to do

    // two conv layers, innermost last
    let mut conv_grads: Vec<Vec<f64>> = Vec::new();
    let mut conv_diags: Vec<Vec<f64>> = Vec::new();
    for l in (0..=1usize).rev() {
        let (filters, act) = match &net.layers[l] {
            Layer::Conv2D { filters, act, .. } => (filters, *act),
            _ => panic!("layer {} must be conv", l),
        };
        let a = cache.pre[l].as_ref().unwrap();
        let (oc, oh, ow) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let input = cache.layer_input(l);
        let (ic, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (k1, k2) = (filters[0][0].shape()[0], filters[0][0].shape()[1]);

        // through the activation: r = σ′g, s = σ′²s + σ″·(second sum)
        let mut r_map = vec![0.0; oc * oh * ow];
        let mut s_map = vec![0.0; oc * oh * ow];
        for idx in 0..oc * oh * ow {
            let ai = a.data()[idx];
            r_map[idx] = act.deriv(ai) * flow.grad[idx];
            s_map[idx] = act.deriv(ai) * act.deriv(ai) * flow.diag[idx];
            if use_second {
                s_map[idx] += act.second_deriv(ai) * flow.second[idx];
            }
        }

        // parameter gradients and diagonal estimates
        let mut g = Vec::new();
        let mut dg = Vec::new();
        for o in 0..oc {
            for c in 0..ic {
                for p in 0..k1 {
                    for qq in 0..k2 {
                        let mut acc = 0.0;
                        let mut dacc = 0.0;
                        for u in 0..oh {
                            for v in 0..ow {
                                let hin = at3(input, c, u + p, v + qq);
                                acc += r_map[o * oh * ow + u * ow + v] * hin;
                                dacc += s_map[o * oh * ow + u * ow + v] * hin * hin;
                            }
                        }
                        g.push(acc);
                        dg.push(dacc);
                    }
                }
            }
        }
        for o in 0..oc {
            g.push((0..oh * ow).map(|i| r_map[o * oh * ow + i]).sum());
            dg.push((0..oh * ow).map(|i| s_map[o * oh * ow + i]).sum());
        }
        conv_grads.insert(0, g);
        conv_diags.insert(0, dg);

        // propagate to the input maps; out-of-range output indices
        // contribute zero
        let mut g_in = vec![0.0; ic * ih * iw];
        let mut s_in = vec![0.0; ic * ih * iw];
        let mut sec_in = vec![0.0; ic * ih * iw];
        for c in 0..ic {
            for y in 0..ih {
                for x in 0..iw {
                    for (o, bank) in filters.iter().enumerate() {
                        let w = &bank[c];
                        for p in 0..k1 {
                            for qq in 0..k2 {
                                if y < p || x < qq {
                                    continue;
                                }
                                let (u, v) = (y - p, x - qq);
                                if u >= oh || v >= ow {
                                    continue;
                                }
                                let wv = w.at2(p, qq);
                                let rv = r_map[o * oh * ow + u * ow + v];
                                let sv = s_map[o * oh * ow + u * ow + v];
                                let idx = c * ih * iw + y * iw + x;
                                g_in[idx] += wv * rv;
                                s_in[idx] += wv * wv * sv;
                                sec_in[idx] += wv * rv;
                            }
                        }
                    }
                }
            }
        }
        flow = NaiveFlow {
            grad: g_in,
            diag: s_in,
            second: sec_in,
        };
    }

    let mut grad = Vec::new();
    let mut diag = Vec::new();
    for g in conv_grads {
        grad.extend(g);
    }
    for dg in conv_diags {
        diag.extend(dg);
    }
    grad.extend(dense_grad);
    diag.extend(dense_diag);
    (grad, diag)
}

#[test]
fn criterion_06_conv_recursion_equivalence() {
    let _guard = exclusive();
    let arch = ArchSpec {
        input_shape: vec![2, 6, 6],
        classes: 4,
        layers: vec![
            LayerSpec::Conv2d { filters: 3, kernel: [2, 2], act: Activation::Tanh },
            LayerSpec::Conv2d { filters: 2, kernel: [2, 2], act: Activation::Tanh },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4, act: Activation::Softmax },
        ],
    };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let net = Network::from_arch(&arch, seed).unwrap();
        let mut r = rng::stream(seed, &[6]);
        let x = Tensor::new(vec![2, 6, 6], (0..72).map(|_| r.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let cache = net.forward(&x).unwrap();
        for method in [Method::HesScale, Method::HesScaleGN] {
            let pack = hesscale_full(method, &net, &cache, 1).unwrap();
            let (ng, nd) = naive_curvature(&net, &cache, 1, method);
            for (a, b) in pack.flat_grad().iter().zip(&ng) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in pack.flat_diag().iter().zip(&nd) {
                worst = worst.max((a - b).abs());
            }
        }
    }

    // degenerate 1×1 conv must reproduce the dense path exactly
    let arch_conv = ArchSpec {
        input_shape: vec![3, 1, 1],
        classes: 2,
        layers: vec![
            LayerSpec::Conv2d { filters: 4, kernel: [1, 1], act: Activation::Tanh },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 2, act: Activation::Softmax },
        ],
    };
    let conv_net = Network::from_arch(&arch_conv, 33).unwrap();
    let mut dense_net = Network::mlp(&[3, 4, 2], Activation::Tanh, 0).unwrap();
    dense_net.set_params_flat(&conv_net.params_flat()).unwrap();
    let xv = vec![0.2, -0.6, 1.0];
    let cc = conv_net
        .forward(&Tensor::new(vec![3, 1, 1], xv.clone()).unwrap())
        .unwrap();
    let cd = dense_net.forward(&Tensor::vector(xv)).unwrap();
    let mut worst_dense = 0.0f64;
    for method in [Method::HesScale, Method::HesScaleGN, Method::Bl89] {
        let pc = hesscale_full(method, &conv_net, &cc, 0).unwrap();
        let pd = hesscale_full(method, &dense_net, &cd, 0).unwrap();
        for (a, b) in pc.flat_diag().iter().zip(&pd.flat_diag()) {
            worst_dense = worst_dense.max((a - b).abs());
        }
    }
    report(
        &format!(
            "6 (conv vs naive loops {:.2e}, 1x1-conv vs dense {:.2e})",
            worst, worst_dense
        ),
        worst <= 1e-12 && worst_dense <= 1e-12,
    );
}

#[test]
fn criterion_07_gaussian_head_matches_fd() {
    let _guard = exclusive();
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut r = rng::stream(trial, &[7]);
        let x = Tensor::vector(vec![r.gen_range(-2.0..2.0)]);
        let mu = Tensor::vector(vec![r.gen_range(-2.0..2.0)]);
        let v = Tensor::vector(vec![r.gen_range(0.5..2.0)]);
        let (hm, hv) = head_gaussian_loglik_diag(&x, &mu, &v).unwrap();

        let log_pdf = |mu: f64, var: f64| -> f64 {
            let d = x.data()[0] - mu;
            -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var)
        };
        let eps = 1e-4;
        let fd_mu = (log_pdf(mu.data()[0] + eps, v.data()[0])
            - 2.0 * log_pdf(mu.data()[0], v.data()[0])
            + log_pdf(mu.data()[0] - eps, v.data()[0]))
            / (eps * eps);
        let fd_var = (log_pdf(mu.data()[0], v.data()[0] + eps)
            - 2.0 * log_pdf(mu.data()[0], v.data()[0])
            + log_pdf(mu.data()[0], v.data()[0] - eps))
            / (eps * eps);
        worst = worst.max((hm.data()[0] - fd_mu).abs());
        worst = worst.max((hv.data()[0] - fd_var).abs());
    }
    report(
        &format!("7 (Gaussian head vs FD, max abs err {:.2e})", worst),
        worst <= 1e-5,
    );
}

#[test]
fn criterion_08_estimator_unbiasedness() {
    let _guard = exclusive();
    let net = Network::mlp(&[3, 6, 4], Activation::Tanh, 0).unwrap();
    assert!(net.num_params() <= 100);
    let x = Tensor::vector(vec![0.4, -0.9, 0.2]);
    let target = 1;
    let draws = 10_000usize;

    let check = |oracle_diag: &[f64], sample: &dyn Fn(u64) -> Vec<f64>| -> (bool, f64) {
        let n = oracle_diag.len();
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        for d in 0..draws as u64 {
            let est = sample(d);
            for i in 0..n {
                sum[i] += est[i];
                sum_sq[i] += est[i] * est[i];
            }
        }
        let mut worst_z = 0.0f64;
        let mut ok = true;
        for i in 0..n {
            let mean = sum[i] / draws as f64;
            let var = (sum_sq[i] / draws as f64 - mean * mean).max(0.0);
            let se = (var / draws as f64).sqrt();
            let gap = (mean - oracle_diag[i]).abs();
            ok &= gap <= 3.0 * se + 1e-9;
            if se > 0.0 {
                worst_z = worst_z.max(gap / se);
            }
        }
        (ok, worst_z)
    };

    let exact = oracle::exact_diag(&net, &x, target).unwrap();
    let (hutch_ok, hutch_z) = check(&exact, &|d| {
        hesscale::estimators::hutchinson_diag(&net, &x, target, 1, &mut rng::stream(80, &[d]))
            .unwrap()
    });

    let ggn = oracle::exact_ggn_diag(&net, &x, target).unwrap();
    let (mc_ok, mc_z) = check(&ggn, &|d| {
        hesscale::estimators::ggn_mc_diag(&net, &x, 1, &mut rng::stream(9, &[d])).unwrap()
    });

    report(
        &format!(
            "8 (unbiasedness: hutchinson worst z {:.2}, ggn-mc worst z {:.2})",
            hutch_z, mc_z
        ),
        hutch_ok && mc_ok,
    );
}

#[test]
fn criterion_09_timing_ordering_and_scaling() {
    let _guard = exclusive();
    let cfg = TimingConfig {
        optimizers: vec![
            "adam".into(),
            "adahesscalegn".into(),
            "adahesscale".into(),
            "adahessian".into(),
        ],
        axis: "layers".into(),
        axis_values: vec![2, 4],
        inputs: 64,
        hidden: 64,
        outputs: 10,
        batch: 32,
        updates: 30,
        warmup: 10,
    };
    // discard one full pass so allocator and frequency state are warm,
    // then keep the best of three passes per configuration so a
    // transient machine-level stall cannot poison one optimizer's window
    run_timing(&TimingConfig { updates: 5, warmup: 2, ..cfg.clone() }).unwrap();
    let passes: Vec<_> = (0..3).map(|_| run_timing(&cfg).unwrap()).collect();
    let at = |name: &str, v: usize| {
        passes
            .iter()
            .map(|records| {
                records
                    .iter()
                    .find(|r| r.optimizer == name && r.axis_value == v)
                    .unwrap()
                    .mean_s
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (adam, gn, hs, ah) = (
        at("adam", 4),
        at("adahesscalegn", 4),
        at("adahesscale", 4),
        at("adahessian", 4),
    );
    let ordering_ok = adam < gn && gn < hs && hs < ah;
    let ratio = hs / adam;
    let scaling = at("adahesscale", 4) / at("adahesscale", 2);
    report(
        &format!(
            "9 (timing: adam {:.1}ms < gn {:.1}ms < hesscale {:.1}ms < hessian {:.1}ms; \
             hesscale/adam {:.2}; 2x-layers factor {:.2})",
            adam * 1e3,
            gn * 1e3,
            hs * 1e3,
            ah * 1e3,
            ratio,
            scaling
        ),
        ordering_ok && (1.2..=4.0).contains(&ratio) && scaling <= 2.5,
    );
}

#[test]
fn criterion_10_training_smoke() {
    let _guard = exclusive();
    let start = Instant::now();
    let cfg = TrainConfig {
        optimizers: vec!["adam".into(), "adahesscale".into()],
        alphas: vec![1e-3, 1e-2],
        epochs: 20,
        examples: 2000,
        batch_size: 128,
        seeds: vec![0],
        ..TrainConfig::default()
    };
    let out = run_training(&cfg).unwrap();
    let threshold = 0.5 * (10.0f64).ln();
    let final_loss = |opt: &str| {
        out.records
            .iter()
            .filter(|r| r.optimizer == opt && r.epoch == cfg.epochs)
            .map(|r| r.train_loss)
            .fold(f64::INFINITY, f64::min)
    };
    let adam_final = final_loss("adam");
    let hs_final = final_loss("adahesscale");

    // determinism per seed on a reduced copy of the same pipeline
    let small = TrainConfig {
        epochs: 3,
        examples: 300,
        alphas: vec![1e-2],
        ..cfg.clone()
    };
    let a = run_training(&small).unwrap();
    let b = run_training(&small).unwrap();
    let deterministic = a
        .records
        .iter()
        .zip(&b.records)
        .all(|(x, y)| x.train_loss == y.train_loss && x.val_loss == y.val_loss);

    // second-moment state stays non-negative throughout a short run
    let data = hesscale::data::synthetic_teacher(6, 10, 64, 0);
    let mut net = Network::mlp(&[6, 16, 16, 10], Activation::Tanh, 0).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::AdaHesScale, Hyper::default(), net.num_params());
    let mut r = rng::stream(0, &[10]);
    let mut v_ok = true;
    for _ in 0..50 {
        opt.step_batch(&mut net, &data.inputs[..8], &data.labels[..8], &mut r)
            .unwrap();
        v_ok &= opt.state.v.iter().all(|&v| v >= 0.0);
    }

    let elapsed = start.elapsed().as_secs_f64();
    report(
        &format!(
            "10 (training smoke: adam final {:.3}, adahesscale final {:.3}, \
             threshold {:.3}; deterministic {}; V>=0 {}; {:.0}s)",
            adam_final, hs_final, threshold, deterministic, v_ok, elapsed
        ),
        adam_final < threshold
            && hs_final < threshold
            && deterministic
            && v_ok
            && elapsed < 300.0,
    );
}
