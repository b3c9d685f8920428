//! CIFAR-10 binary ingestion, normalization, batching, and synthetic data.
//!
//! The on-disk format is the canonical binary one: 3073-byte records, one
//! label byte then 3072 pixel bytes (1024 red, 1024 green, 1024 blue, each
//! plane row-major 32x32).

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 10;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;
const RECORD_BYTES: usize = PIXELS + 1;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An in-memory dataset: images scaled to `[0, 1]`, one label per image.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_data(&self, index: usize) -> &[f32] {
        &self.images.data()[index * PIXELS..(index + 1) * PIXELS]
    }
}

/// Per-channel normalization statistics.
#[derive(Debug, Clone, Copy)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationStats {
    pub fn identity() -> Self {
        NormalizationStats { mean: [0.0; 3], std: [1.0; 3] }
    }
}

fn parse_records(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<u8>)> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Ingestion(format!(
            "{} has {} bytes, not a multiple of the {RECORD_BYTES}-byte record size",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(RECORD_BYTES) {
        let label = record[0];
        if label >= NUM_CLASSES as u8 {
            return Err(Error::Ingestion(format!(
                "{} contains label {label}, outside the ten classes",
                path.display()
            )));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

fn load_file(path: &Path) -> Result<(Vec<f32>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_records(&bytes, path)
}

/// Load the five training files and the test file from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train_pixels = Vec::new();
    let mut train_labels = Vec::new();
    for name in TRAIN_FILES {
        let (pixels, labels) = load_file(&dir.join(name))?;
        train_pixels.extend(pixels);
        train_labels.extend(labels);
    }
    let train = Dataset {
        images: Tensor::from_vec(
            &[train_labels.len(), IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE],
            train_pixels,
        )?,
        labels: train_labels,
        split: Split::Train,
    };
    let (test_pixels, test_labels) = load_file(&dir.join(TEST_FILE))?;
    let test = Dataset {
        images: Tensor::from_vec(
            &[test_labels.len(), IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE],
            test_pixels,
        )?,
        labels: test_labels,
        split: Split::Test,
    };
    Ok((train, test))
}

/// Write a dataset back out in the canonical binary record format,
/// quantizing pixels to bytes.
pub fn write_cifar10_file(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(dataset.len() * RECORD_BYTES);
    for i in 0..dataset.len() {
        bytes.push(dataset.labels[i]);
        bytes.extend(dataset.image_data(i).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Mean and population standard deviation per channel.
pub fn compute_stats(dataset: &Dataset) -> NormalizationStats {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut mean = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let n = dataset.len() * plane;
    for i in 0..dataset.len() {
        let img = dataset.image_data(i);
        for c in 0..3 {
            for &v in &img[c * plane..(c + 1) * plane] {
                mean[c] += v as f64;
                sq[c] += (v as f64) * (v as f64);
            }
        }
    }
    let mut std = [0.0f64; 3];
    for c in 0..3 {
        mean[c] /= n as f64;
        let var = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt().max(1e-8);
    }
    NormalizationStats { mean, std }
}

/// Per-channel `(x - mean) / std`, returning a new dataset.
pub fn normalize(dataset: &Dataset, stats: &NormalizationStats) -> Dataset {
    transform(dataset, |c, v| ((v as f64 - stats.mean[c]) / stats.std[c]) as f32)
}

/// Inverse of [`normalize`].
pub fn denormalize(dataset: &Dataset, stats: &NormalizationStats) -> Dataset {
    transform(dataset, |c, v| (v as f64 * stats.std[c] + stats.mean[c]) as f32)
}

fn transform(dataset: &Dataset, f: impl Fn(usize, f32) -> f32) -> Dataset {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut data = dataset.images.data().to_vec();
    for img in data.chunks_mut(PIXELS) {
        for c in 0..3 {
            for v in &mut img[c * plane..(c + 1) * plane] {
                *v = f(c, *v);
            }
        }
    }
    Dataset {
        images: Tensor::from_vec(dataset.images.shape(), data).expect("same shape"),
        labels: dataset.labels.clone(),
        split: dataset.split,
    }
}

/// One-hot rows for a label slice.
pub fn one_hot(labels: &[u8], classes: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l as usize] = 1.0;
    }
    t
}

/// One mini-batch: images, one-hot targets, and source indices.
pub struct Batch {
    pub images: Tensor<f32>,
    pub targets: Tensor<f32>,
    pub labels: Vec<u8>,
    pub indices: Vec<usize>,
}

/// Split a dataset into shuffled batches; the last partial batch is kept.
pub fn batches(dataset: &Dataset, batch_size: usize, rng: &mut rng::SeededRng) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| gather(dataset, chunk))
        .collect()
}

/// Batches in index order, no shuffling (evaluation).
pub fn sequential_batches(dataset: &Dataset, batch_size: usize) -> Vec<Batch> {
    let order: Vec<usize> = (0..dataset.len()).collect();
    order.chunks(batch_size).map(|chunk| gather(dataset, chunk)).collect()
}

fn gather(dataset: &Dataset, indices: &[usize]) -> Batch {
    let mut data = Vec::with_capacity(indices.len() * PIXELS);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(dataset.image_data(i));
        labels.push(dataset.labels[i]);
    }
    Batch {
        images: Tensor::from_vec(&[indices.len(), IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data)
            .expect("consistent gather"),
        targets: one_hot(&labels, NUM_CLASSES),
        labels,
        indices: indices.to_vec(),
    }
}

/// Gaussian-blob dataset whose classes are linearly recoverable. Labels are
/// balanced (`i % classes`); pixel values sit mostly inside `[0, 1]`.
pub fn synthetic_dataset(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::config(format!(
            "synthetic dataset needs n >= classes >= 1, got n={n}, classes={classes}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let unit = Normal::new(0.0f64, 1.0).expect("valid normal");

    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..PIXELS).map(|_| unit.sample(&mut rng)).collect())
        .collect();

    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class as u8);
        let mean = &means[class];
        for m in mean.iter().take(PIXELS) {
            let noise = unit.sample(&mut rng);
            data.push((0.5 + 0.12 * m + 0.05 * noise) as f32);
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data)?,
        labels,
        split: Split::Train,
    })
}

/// Take the first `n` samples as a new dataset.
pub fn subset(dataset: &Dataset, n: usize, split: Split) -> Dataset {
    slice_range(dataset, 0, n.min(dataset.len()), split)
}

/// Samples `start..end` as a new dataset.
pub fn slice_range(dataset: &Dataset, start: usize, end: usize, split: Split) -> Dataset {
    assert!(start <= end && end <= dataset.len(), "range outside the dataset");
    Dataset {
        images: Tensor::from_vec(
            &[end - start, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE],
            dataset.images.data()[start * PIXELS..end * PIXELS].to_vec(),
        )
        .expect("range slice"),
        labels: dataset.labels[start..end].to_vec(),
        split,
    }
}
