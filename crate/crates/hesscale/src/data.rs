//! Dataset ingestion and synthesis: MNIST IDX parsing, synthetic
//! classification data, and seeded minibatching.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// In-memory dataset: one input tensor and one class label per example.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Split off the last `fraction` of the examples (by original order)
    /// as a validation set.
    pub fn split_validation(self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.len();
        let n_val = ((n as f64) * fraction).round() as usize;
        let n_train = n - n_val;
        let (train_x, val_x): (Vec<_>, Vec<_>) = {
            let mut inputs = self.inputs;
            let val = inputs.split_off(n_train);
            (inputs, val)
        };
        let (train_y, val_y) = {
            let mut labels = self.labels;
            let val = labels.split_off(n_train);
            (labels, val)
        };
        (
            Dataset {
                inputs: train_x,
                labels: train_y,
                classes: self.classes,
            },
            Dataset {
                inputs: val_x,
                labels: val_y,
                classes: self.classes,
            },
        )
    }
}

/// Parse an IDX image/label file pair. Pixels are scaled to [0,1] and
/// images flattened to vectors.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = std::fs::File::open(images_path)?;
    let magic = img.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {:#010x}, expected {:#010x}",
            magic, IDX_IMAGES_MAGIC
        )));
    }
    let n = img.read_u32::<BigEndian>()? as usize;
    let rows = img.read_u32::<BigEndian>()? as usize;
    let cols = img.read_u32::<BigEndian>()? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::Format("image file shorter than its header claims".into()))?;

    let mut lbl = std::fs::File::open(labels_path)?;
    let magic = lbl.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {:#010x}, expected {:#010x}",
            magic, IDX_LABELS_MAGIC
        )));
    }
    let n_lbl = lbl.read_u32::<BigEndian>()? as usize;
    if n_lbl != n {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            n, n_lbl
        )));
    }
    let mut raw_labels = vec![0u8; n];
    lbl.read_exact(&mut raw_labels)
        .map_err(|_| Error::Format("label file shorter than its header claims".into()))?;

    let d = rows * cols;
    let inputs = pixels
        .chunks_exact(d)
        .map(|chunk| Tensor::vector(chunk.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect();
    Ok(Dataset {
        inputs,
        labels: raw_labels.iter().map(|&b| b as usize).collect(),
        classes: 10,
    })
}

/// Write a dataset of byte images back out in IDX format. Used for
/// round-trip checks and fixture generation.
pub fn save_idx(
    images: &[Vec<u8>],
    labels: &[u8],
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let mut img = std::fs::File::create(images_path)?;
    img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    img.write_u32::<BigEndian>(images.len() as u32)?;
    img.write_u32::<BigEndian>(rows as u32)?;
    img.write_u32::<BigEndian>(cols as u32)?;
    for im in images {
        use std::io::Write;
        img.write_all(im)?;
    }
    let mut lbl = std::fs::File::create(labels_path)?;
    lbl.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    lbl.write_u32::<BigEndian>(labels.len() as u32)?;
    use std::io::Write;
    lbl.write_all(labels)?;
    Ok(())
}

/// Gaussian inputs with uniform labels: `n` examples of dimension `d`,
/// `m` classes, deterministic per seed.
pub fn synthetic_classification(d: usize, m: usize, n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, &[0x5f3759df]);
    let inputs = (0..n)
        .map(|_| Tensor::vector((0..d).map(|_| StandardNormal.sample(&mut r)).collect()))
        .collect();
    let labels = (0..n).map(|_| r.gen_range(0..m)).collect();
    Dataset {
        inputs,
        labels,
        classes: m,
    }
}

/// Gaussian inputs labelled by a fixed random linear teacher:
/// y = argmax(T·x). Unlike [`synthetic_classification`], the labels are
/// a deterministic function of the inputs, so the task is learnable and
/// training can push the loss well below the uniform-prediction level.
/// The teacher depends only on (d, m); `seed` only varies the examples,
/// so train and test sets drawn with different seeds share one task.
pub fn synthetic_teacher(d: usize, m: usize, n: usize, seed: u64) -> Dataset {
    let mut t = rng::stream(0x7eac_4e5, &[d as u64, m as u64]);
    let teacher: Vec<f64> = (0..m * d).map(|_| StandardNormal.sample(&mut t)).collect();
    let mut r = rng::stream(seed, &[0x7eac]);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let label = (0..m)
            .max_by(|&a, &b| {
                let sa: f64 = (0..d).map(|j| teacher[a * d + j] * x[j]).sum();
                let sb: f64 = (0..d).map(|j| teacher[b * d + j] * x[j]).sum();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        inputs.push(Tensor::vector(x));
        labels.push(label);
    }
    Dataset {
        inputs,
        labels,
        classes: m,
    }
}

/// Conv-shaped variant of [`synthetic_teacher`]: inputs `[c, h, w]`,
/// labels from a linear teacher on the flattened input.
pub fn synthetic_teacher_conv(
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    n: usize,
    seed: u64,
) -> Dataset {
    let flat = synthetic_teacher(c * h * w, m, n, seed);
    Dataset {
        inputs: flat
            .inputs
            .into_iter()
            .map(|t| t.reshape(vec![c, h, w]).unwrap())
            .collect(),
        labels: flat.labels,
        classes: m,
    }
}

/// Conv-shaped Gaussian inputs `[c, h, w]` with uniform labels.
pub fn synthetic_conv(c: usize, h: usize, w: usize, m: usize, n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, &[0x5f3759e0]);
    let inputs = (0..n)
        .map(|_| {
            Tensor::new(
                vec![c, h, w],
                (0..c * h * w).map(|_| StandardNormal.sample(&mut r)).collect(),
            )
            .unwrap()
        })
        .collect();
    let labels = (0..n).map(|_| r.gen_range(0..m)).collect();
    Dataset {
        inputs,
        labels,
        classes: m,
    }
}

/// Seeded shuffle into minibatches of example indices; the last short
/// batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0xba7c, epoch]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
