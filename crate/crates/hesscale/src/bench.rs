//! Experiment harnesses: approximation quality, update-time scaling,
//! and training runs. Each emits a CSV with a JSON metadata sidecar so
//! downstream plotting never has to re-run anything.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curvature::{backprop_grads, hesscale_full, Method};
use crate::data::{
    batches, synthetic_classification, synthetic_teacher, synthetic_teacher_conv, Dataset,
};
use crate::error::{Error, Result};
use crate::estimators::{empirical_fisher_diag, ggn_mc_diag, hutchinson_diag};
use crate::model::{loss_ce, ArchSpec, Network};
use crate::optim::{Hyper, Optimizer, OptimizerKind};
use crate::rng;
use crate::tensor::Tensor;

/// Diagonal estimators compared in the quality experiment.
pub const QUALITY_METHODS: &[&str] = &[
    "hesscale",
    "hesscalegn",
    "bl89",
    "g2",
    "diag_g",
    "adahessian_mc1",
    "adahessian_mc50",
    "ggn_mc1",
    "ggn_mc50",
];

fn method_tag(name: &str) -> u64 {
    QUALITY_METHODS
        .iter()
        .position(|m| *m == name)
        .map_or(u64::MAX, |i| i as u64)
}

// ---------------------------------------------------------------------------
// Approximation quality
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityConfig {
    /// MLP layer widths, input first, classes last.
    pub widths: Vec<usize>,
    pub examples: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            widths: vec![6, 16, 16, 16, 10],
            examples: 200,
            seeds: (0..10).collect(),
            methods: QUALITY_METHODS.iter().map(ToString::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityRecord {
    pub method: String,
    pub seed: u64,
    /// Sum over layers of |estimate − oracle diag|₁, averaged over examples.
    pub l1_error: f64,
    /// l1_error divided by HesScale's l1_error for the same seed.
    pub normalized_error: f64,
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn quality_estimate(
    method: &str,
    net: &Network,
    x: &Tensor,
    y: usize,
    seed: u64,
    example: usize,
) -> Result<Vec<f64>> {
    let cache = net.forward(x)?;
    let key = &[method_tag(method), example as u64];
    Ok(match method {
        "hesscale" => hesscale_full(Method::HesScale, net, &cache, y)?.flat_diag(),
        "hesscalegn" => hesscale_full(Method::HesScaleGN, net, &cache, y)?.flat_diag(),
        "bl89" => hesscale_full(Method::Bl89, net, &cache, y)?.flat_diag(),
        "g2" => empirical_fisher_diag(&backprop_grads(net, &cache, y)?),
        "diag_g" => crate::oracle::exact_ggn_diag(net, x, y)?,
        "adahessian_mc1" => hutchinson_diag(net, x, y, 1, &mut rng::stream(seed, key))?,
        "adahessian_mc50" => hutchinson_diag(net, x, y, 50, &mut rng::stream(seed, key))?,
        "ggn_mc1" => ggn_mc_diag(net, x, 1, &mut rng::stream(seed, key))?,
        "ggn_mc50" => ggn_mc_diag(net, x, 50, &mut rng::stream(seed, key))?,
        other => return Err(Error::Config(format!("unknown quality method {:?}", other))),
    })
}

/// Per-seed mean L¹ error of each method against the exact diagonal,
/// normalized by HesScale's error for that seed.
pub fn run_quality(cfg: &QualityConfig) -> Result<Vec<QualityRecord>> {
    let d = *cfg.widths.first().ok_or_else(|| Error::Config("empty widths".into()))?;
    let m = *cfg.widths.last().unwrap();
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let net = Network::mlp(&cfg.widths, crate::model::Activation::Tanh, seed)?;
        let data = synthetic_classification(d, m, cfg.examples, seed);

        let oracles: Result<Vec<Vec<f64>>> = data
            .inputs
            .iter()
            .zip(&data.labels)
            .map(|(x, &y)| crate::oracle::exact_diag(&net, x, y))
            .collect();
        let oracles = oracles?;

        let mean_err = |method: &str| -> Result<f64> {
            let mut total = 0.0;
            for (k, (x, &y)) in data.inputs.iter().zip(&data.labels).enumerate() {
                let est = quality_estimate(method, &net, x, y, seed, k)?;
                total += l1_gap(&est, &oracles[k]);
            }
            Ok(total / cfg.examples as f64)
        };

        let hesscale_err = mean_err("hesscale")?;
        for method in &cfg.methods {
            let err = if method == "hesscale" {
                hesscale_err
            } else {
                mean_err(method)?
            };
            records.push(QualityRecord {
                method: method.clone(),
                seed,
                l1_error: err,
                normalized_error: err / hesscale_err,
            });
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Update-time scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingConfig {
    pub optimizers: Vec<String>,
    /// "outputs" grows the head of a single-hidden-layer net; "layers"
    /// stacks hidden layers of fixed width.
    pub axis: String,
    pub axis_values: Vec<usize>,
    pub inputs: usize,
    pub hidden: usize,
    /// Output count used on the layers axis.
    pub outputs: usize,
    pub batch: usize,
    pub updates: usize,
    pub warmup: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            optimizers: vec![
                "sgd".into(),
                "adam".into(),
                "adahesscalegn".into(),
                "adahesscale".into(),
                "adahessian".into(),
            ],
            axis: "layers".into(),
            axis_values: vec![1, 2, 4],
            inputs: 64,
            hidden: 128,
            outputs: 10,
            batch: 8,
            updates: 30,
            warmup: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub optimizer: String,
    pub params: usize,
    pub mean_s: f64,
    pub stderr_s: f64,
    pub axis: String,
    pub axis_value: usize,
}

fn timing_widths(cfg: &TimingConfig, axis_value: usize) -> Result<Vec<usize>> {
    match cfg.axis.as_str() {
        "outputs" => Ok(vec![cfg.inputs, cfg.hidden, axis_value]),
        "layers" => {
            let mut w = vec![cfg.inputs];
            w.extend(std::iter::repeat(cfg.hidden).take(axis_value));
            w.push(cfg.outputs);
            Ok(w)
        }
        other => Err(Error::Config(format!("unknown timing axis {:?}", other))),
    }
}

/// Mean wall-clock update time per optimizer per size point. An update
/// is the full curvature backprop plus the parameter write, timed with
/// a monotonic clock; warmup updates are discarded.
pub fn run_timing(cfg: &TimingConfig) -> Result<Vec<TimingRecord>> {
    let mut records = Vec::new();
    for &axis_value in &cfg.axis_values {
        let widths = timing_widths(cfg, axis_value)?;
        let m = *widths.last().unwrap();
        let data = synthetic_classification(cfg.inputs, m, cfg.batch, 7);
        for name in &cfg.optimizers {
            let kind = OptimizerKind::parse(name)?;
            let mut net = Network::mlp(&widths, crate::model::Activation::Tanh, 11)?;
            let params = net.num_params();
            let mut opt = Optimizer::new(kind, Hyper::default(), params);
            let mut r = rng::stream(11, &[method_tag(name), axis_value as u64]);
            let mut samples = Vec::with_capacity(cfg.updates);
            for step in 0..cfg.warmup + cfg.updates {
                let start = Instant::now();
                opt.step_batch(&mut net, &data.inputs, &data.labels, &mut r)?;
                let dt = start.elapsed().as_secs_f64();
                if step >= cfg.warmup {
                    samples.push(dt);
                }
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
                / (samples.len() - 1) as f64;
            let stderr = (var / samples.len() as f64).sqrt();
            records.push(TimingRecord {
                optimizer: name.clone(),
                params,
                mean_s: mean,
                stderr_s: stderr,
                axis: cfg.axis.clone(),
                axis_value,
            });
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// One of "synth-mlp", "synth-conv", "mnist-mlp-small".
    pub task: String,
    pub optimizers: Vec<String>,
    pub alphas: Vec<f64>,
    pub beta1s: Vec<f64>,
    pub beta2s: Vec<f64>,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub examples: usize,
    /// IDX paths for the MNIST task.
    pub mnist_images: Option<String>,
    pub mnist_labels: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: "synth-mlp".into(),
            optimizers: vec!["adam".into(), "adahesscale".into()],
            alphas: vec![1e-3, 1e-2],
            beta1s: vec![0.9],
            beta2s: vec![0.999],
            epochs: 20,
            seeds: vec![0],
            batch_size: 128,
            examples: 2000,
            mnist_images: None,
            mnist_labels: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub optimizer: String,
    pub seed: u64,
    pub epoch: usize,
    pub wall_s: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Grid winner per optimizer, chosen by validation-loss AUC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub optimizer: String,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub val_loss_auc: f64,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutput {
    pub records: Vec<TrainRecord>,
    pub selection: Vec<SelectionEntry>,
}

fn task_data(cfg: &TrainConfig, split_seed: u64) -> Result<(ArchSpec, Dataset, Dataset)> {
    use crate::model::{Activation, LayerSpec};
    match cfg.task.as_str() {
        "synth-mlp" => {
            let arch = ArchSpec {
                input_shape: vec![6],
                classes: 10,
                layers: vec![
                    LayerSpec::Dense { units: 16, act: Activation::Tanh },
                    LayerSpec::Dense { units: 16, act: Activation::Tanh },
                    LayerSpec::Dense { units: 10, act: Activation::Softmax },
                ],
            };
            let train = synthetic_teacher(6, 10, cfg.examples, split_seed);
            let test = synthetic_teacher(6, 10, cfg.examples / 5, split_seed ^ TEST_SPLIT_TAG);
            Ok((arch, train, test))
        }
        "synth-conv" => {
            let arch = ArchSpec {
                input_shape: vec![1, 8, 8],
                classes: 10,
                layers: vec![
                    LayerSpec::Conv2d { filters: 4, kernel: [3, 3], act: Activation::Tanh },
                    LayerSpec::Maxpool,
                    LayerSpec::Flatten,
                    LayerSpec::Dense { units: 10, act: Activation::Softmax },
                ],
            };
            let train = synthetic_teacher_conv(1, 8, 8, 10, cfg.examples, split_seed);
            let test =
                synthetic_teacher_conv(1, 8, 8, 10, cfg.examples / 5, split_seed ^ TEST_SPLIT_TAG);
            Ok((arch, train, test))
        }
        "mnist-mlp-small" => {
            let images = cfg.mnist_images.as_ref().ok_or_else(|| {
                Error::Config("mnist-mlp-small requires mnist_images/mnist_labels".into())
            })?;
            let labels = cfg
                .mnist_labels
                .as_ref()
                .ok_or_else(|| Error::Config("mnist labels path missing".into()))?;
            let mut full =
                crate::data::load_mnist_idx(Path::new(images), Path::new(labels))?;
            full.inputs.truncate(cfg.examples + cfg.examples / 5);
            full.labels.truncate(cfg.examples + cfg.examples / 5);
            let test_inputs = full.inputs.split_off(cfg.examples.min(full.inputs.len()));
            let test_labels = full.labels.split_off(cfg.examples.min(full.labels.len()));
            let arch = ArchSpec {
                input_shape: vec![784],
                classes: 10,
                layers: vec![
                    LayerSpec::Dense { units: 64, act: Activation::Tanh },
                    LayerSpec::Dense { units: 32, act: Activation::Tanh },
                    LayerSpec::Dense { units: 10, act: Activation::Softmax },
                ],
            };
            Ok((
                arch,
                full,
                Dataset {
                    inputs: test_inputs,
                    labels: test_labels,
                    classes: 10,
                },
            ))
        }
        other => Err(Error::Config(format!("unknown task {:?}", other))),
    }
}

/// Seed offset so test sets never reuse a training stream.
const TEST_SPLIT_TAG: u64 = 0x7357;

fn evaluate(net: &Network, ds: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in ds.inputs.iter().zip(&ds.labels) {
        let cache = net.forward(x)?;
        loss += loss_ce(cache.probs(), y)?;
        let q = cache.probs();
        let pred = q
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == y {
            correct += 1;
        }
    }
    let n = ds.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Full training sweep over the hyperparameter grid with per-epoch
/// learning curves and a grid-winner selection report. Diverged runs
/// (non-finite loss) are dropped from selection and counted.
pub fn run_training(cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut records = Vec::new();
    let mut selection = Vec::new();
    for name in &cfg.optimizers {
        let kind = OptimizerKind::parse(name)?;
        let mut best: Option<SelectionEntry> = None;
        let mut failed = 0usize;
        for &alpha in &cfg.alphas {
            for &beta1 in &cfg.beta1s {
                for &beta2 in &cfg.beta2s {
                    let mut auc_sum = 0.0;
                    let mut auc_runs = 0usize;
                    for &seed in &cfg.seeds {
                        match train_one(cfg, kind, alpha, beta1, beta2, seed)? {
                            Some(run) => {
                                auc_sum += run.iter().map(|r| r.val_loss).sum::<f64>();
                                auc_runs += 1;
                                records.extend(run);
                            }
                            None => failed += 1,
                        }
                    }
                    if auc_runs > 0 {
                        let auc = auc_sum / auc_runs as f64;
                        if best.as_ref().is_none_or(|b| auc < b.val_loss_auc) {
                            best = Some(SelectionEntry {
                                optimizer: name.clone(),
                                alpha,
                                beta1,
                                beta2,
                                val_loss_auc: auc,
                                failed_runs: 0,
                            });
                        }
                    }
                }
            }
        }
        if let Some(mut b) = best {
            b.failed_runs = failed;
            selection.push(b);
        } else {
            selection.push(SelectionEntry {
                optimizer: name.clone(),
                alpha: f64::NAN,
                beta1: f64::NAN,
                beta2: f64::NAN,
                val_loss_auc: f64::NAN,
                failed_runs: failed,
            });
        }
    }
    Ok(TrainOutput { records, selection })
}

/// One (optimizer, grid point, seed) run; `None` marks divergence.
fn train_one(
    cfg: &TrainConfig,
    kind: OptimizerKind,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    seed: u64,
) -> Result<Option<Vec<TrainRecord>>> {
    let (arch, full_train, test) = task_data(cfg, seed)?;
    let (train, val) = full_train.split_validation(0.1);
    let mut net = Network::from_arch(&arch, seed)?;
    let hyper = Hyper {
        alpha,
        beta1,
        beta2,
        eps: 1e-8,
    };
    let mut opt = Optimizer::new(kind, hyper, net.num_params());
    let mut mc_rng = rng::stream(seed, &[method_tag(kind.name()), 0xec]);
    let start = Instant::now();
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        for batch in batches(train.len(), cfg.batch_size, seed, epoch as u64) {
            let xs: Vec<Tensor> = batch.iter().map(|&i| train.inputs[i].clone()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            if opt.step_batch(&mut net, &xs, &ys, &mut mc_rng).is_err() {
                return Ok(None);
            }
        }
        let (train_loss, train_acc) = evaluate(&net, &train)?;
        let (val_loss, val_acc) = evaluate(&net, &val)?;
        let (test_loss, test_acc) = evaluate(&net, &test)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Ok(None);
        }
        out.push(TrainRecord {
            optimizer: kind.name().into(),
            seed,
            epoch,
            wall_s: start.elapsed().as_secs_f64(),
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            test_loss,
            test_acc,
            alpha,
            beta1,
            beta2,
        });
    }
    Ok(Some(out))
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

/// Config echo plus provenance written next to every CSV.
#[derive(Debug, Serialize)]
pub struct Metadata<'a, C: Serialize> {
    pub experiment: &'a str,
    pub config: &'a C,
    pub version: &'a str,
    pub hardware_note: &'a str,
    pub scale_note: &'a str,
}

pub fn write_metadata<C: Serialize>(path: &Path, experiment: &str, config: &C) -> Result<()> {
    let meta = Metadata {
        experiment,
        config,
        version: env!("CARGO_PKG_VERSION"),
        hardware_note: "single-process CPU timing; absolute times are hardware-dependent",
        scale_note: "desk-scale configuration; not comparable to full-scale published numbers",
    };
    std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn write_quality_csv(path: &Path, records: &[QualityRecord]) -> Result<()> {
    let mut s = String::from("method,seed,l1_error,normalized_error\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.method, r.seed, r.l1_error, r.normalized_error
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_timing_csv(path: &Path, records: &[TimingRecord]) -> Result<()> {
    let mut s = String::from("optimizer,params,mean_s,stderr_s,axis,axis_value\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.optimizer, r.params, r.mean_s, r.stderr_s, r.axis, r.axis_value
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_training_csv(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut s = String::from(
        "optimizer,seed,epoch,wall_s,train_loss,train_acc,val_loss,val_acc,test_loss,test_acc\n",
    );
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.optimizer,
            r.seed,
            r.epoch,
            r.wall_s,
            r.train_loss,
            r.train_acc,
            r.val_loss,
            r.val_acc,
            r.test_loss,
            r.test_acc
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_self_normalization() {
        let cfg = QualityConfig {
            widths: vec![4, 6, 3],
            examples: 3,
            seeds: vec![0, 1],
            methods: vec!["hesscale".into()],
        };
        let records = run_quality(&cfg).unwrap();
        assert_eq!(records.len(), 2);
        for r in &records {
            assert_eq!(r.normalized_error, 1.0);
        }
    }

    #[test]
    fn timing_sgd_is_floor_and_stats_sane() {
        let cfg = TimingConfig {
            optimizers: vec!["sgd".into(), "adam".into(), "adahesscale".into()],
            axis: "layers".into(),
            axis_values: vec![2],
            inputs: 16,
            hidden: 32,
            outputs: 4,
            batch: 4,
            updates: 10,
            warmup: 2,
        };
        let records = run_timing(&cfg).unwrap();
        let get = |name: &str| records.iter().find(|r| r.optimizer == name).unwrap();
        for r in &records {
            assert!(r.mean_s > 0.0);
            assert!(r.stderr_s < r.mean_s);
        }
        assert!(get("sgd").mean_s <= get("adahesscale").mean_s);
    }

    #[test]
    fn training_zero_alpha_keeps_loss_flat() {
        let cfg = TrainConfig {
            optimizers: vec!["adam".into()],
            alphas: vec![0.0],
            epochs: 3,
            examples: 60,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = run_training(&cfg).unwrap();
        let losses: Vec<f64> = out.records.iter().map(|r| r.train_loss).collect();
        for w in losses.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_deterministic_per_seed() {
        let cfg = TrainConfig {
            optimizers: vec!["adahesscale".into()],
            alphas: vec![1e-2],
            epochs: 2,
            examples: 60,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = run_training(&cfg).unwrap();
        let b = run_training(&cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.val_loss, y.val_loss);
        }
    }

    #[test]
    fn selection_winner_improves_over_init() {
        let cfg = TrainConfig {
            optimizers: vec!["adam".into()],
            alphas: vec![1e-2],
            epochs: 4,
            examples: 120,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = run_training(&cfg).unwrap();
        let first = out.records.first().unwrap().train_loss;
        let last = out.records.last().unwrap().train_loss;
        assert!(last <= first, "final {} vs initial {}", last, first);
        assert_eq!(out.selection.len(), 1);
        assert_eq!(out.selection[0].failed_runs, 0);
    }

    #[test]
    fn csv_headers_match_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        write_quality_csv(&p, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "method,seed,l1_error,normalized_error\n"
        );
    }
}
